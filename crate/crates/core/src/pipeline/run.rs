use std::any::Any;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, WallClock};
use crate::detect::{demosaic_rg8, Detector};
use crate::error::{Error, Result};
use crate::live::StageStatus;
use crate::simsource::{AcquiredFrame, BoxedSource, GroundTruthRecord, SourceItem};
use crate::types::{Frame, PixelFormat, TimestampNs};

use super::clip::{ClipConfig, ClipSegmenter};
use super::processor::{FrameProcessor, Sinks};
use super::queue::{BoundedQueue, EnqueueOutcome, QueuePolicy, Sequenced, DEFAULT_QUEUE_CAPACITY};
use super::report::{summarize, CameraReport, RunReport, StageTiming};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Frames are paced at their source timestamps against the wall clock.
    Wall,
    /// No pacing, lossless queues, output depends only on the input.
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueSpec {
    pub capacity: usize,
    pub policy: QueuePolicy,
}

impl QueueSpec {
    pub fn block() -> Self {
        QueueSpec {
            capacity: DEFAULT_QUEUE_CAPACITY,
            policy: QueuePolicy::Block,
        }
    }

    pub fn drop_oldest() -> Self {
        QueueSpec {
            capacity: DEFAULT_QUEUE_CAPACITY,
            policy: QueuePolicy::DropOldest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub camera_id: String,
    pub profile_mm: u32,
    pub clock: ClockMode,
    /// Acquisition to detection. Freshness first: drop-oldest by default.
    pub acquisition_queue: QueueSpec,
    /// Detection to analytics.
    pub analytics_queue: QueueSpec,
    /// Acquisition to clip storage. Lossless by default.
    pub storage_queue: QueueSpec,
    pub clips: Option<ClipConfig>,
    /// Keep pixel buffers in clip records (descriptor only otherwise).
    pub store_pixels: bool,
    /// Leading frames left out of latency statistics.
    pub warmup_frames: usize,
    /// Artificial per-record delay in the clip writer, for slow-disk tests.
    pub storage_delay_ms: f64,
}

impl PipelineConfig {
    pub fn new(camera_id: &str, profile_mm: u32, clock: ClockMode) -> Self {
        PipelineConfig {
            camera_id: camera_id.to_string(),
            profile_mm,
            clock,
            acquisition_queue: QueueSpec::drop_oldest(),
            analytics_queue: QueueSpec::block(),
            storage_queue: QueueSpec::block(),
            clips: None,
            store_pixels: false,
            warmup_frames: 0,
            storage_delay_ms: 0.0,
        }
    }

    fn effective_spec(&self, spec: QueueSpec) -> QueueSpec {
        match self.clock {
            ClockMode::Simulated => QueueSpec {
                policy: QueuePolicy::Block,
                ..spec
            },
            ClockMode::Wall => spec,
        }
    }
}

/// One camera's stages, ready to run.
pub struct CameraPipeline {
    pub config: PipelineConfig,
    pub source: BoxedSource,
    pub detector: Box<dyn Detector>,
    pub processor: FrameProcessor,
}

struct Acquired {
    frame: Frame,
    truth: Option<GroundTruthRecord>,
    camera_temp_c: f64,
    t_scheduled: TimestampNs,
    t_acquire: TimestampNs,
}

impl Sequenced for Acquired {
    fn seq(&self) -> u64 {
        self.frame.seq()
    }
}

struct Detected {
    acquired: Acquired,
    detections: Vec<crate::types::Detection>,
    t_detect_done: TimestampNs,
}

impl Sequenced for Detected {
    fn seq(&self) -> u64 {
        self.acquired.frame.seq()
    }
}

struct Stored {
    ts: TimestampNs,
    record: AcquiredFrame,
}

impl Sequenced for Stored {
    fn seq(&self) -> u64 {
        self.record.frame.seq
    }
}

/// Closes queues when a stage ends, normally or by panic, so neighbours
/// never wait on a dead stage.
struct CloseOnDrop<'a>(Vec<&'a dyn Closable>);

trait Closable: Sync {
    fn close_queue(&self);
}

impl<T: Sequenced + Send> Closable for BoundedQueue<T> {
    fn close_queue(&self) {
        self.close();
    }
}

impl Drop for CloseOnDrop<'_> {
    fn drop(&mut self) {
        for q in &self.0 {
            q.close_queue();
        }
    }
}

#[derive(Default)]
struct Shared {
    acquired: AtomicU64,
    rejected: AtomicU64,
    reconnects: AtomicU64,
    failure: Mutex<Option<String>>,
    timings: Mutex<Vec<StageTiming>>,
}

impl Shared {
    fn fail(&self, msg: String) {
        let mut f = self.failure.lock();
        if f.is_none() {
            *f = Some(msg);
        }
    }
}

fn panic_message(payload: &(dyn Any + Send)) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "non-string panic payload".into())
}

/// Runs one camera. Alerts are closed and sinks flushed before returning.
pub fn run_pipeline(camera: CameraPipeline, sinks: &Sinks) -> RunReport {
    run_cameras(vec![camera], sinks)
}

/// Runs independent camera pipelines concurrently over shared sinks.
pub fn run_cameras(cameras: Vec<CameraPipeline>, sinks: &Sinks) -> RunReport {
    let started = Instant::now();
    let simulated = cameras.iter().all(|c| c.config.clock == ClockMode::Simulated);
    let reports: Vec<CameraReport> = thread::scope(|s| {
        let handles: Vec<_> = cameras
            .into_iter()
            .map(|cam| {
                let id = cam.config.camera_id.clone();
                let profile = cam.config.profile_mm;
                (id, profile, s.spawn(move || run_camera(cam, sinks)))
            })
            .collect();
        handles
            .into_iter()
            .map(|(camera_id, profile_mm, h)| {
                h.join().unwrap_or_else(|p| CameraReport {
                    camera_id,
                    profile_mm,
                    failed: true,
                    failure: Some(format!("camera supervisor panicked: {}", panic_message(&*p))),
                    ..CameraReport::default()
                })
            })
            .collect()
    });

    let mut sink_errors: u64 = reports
        .iter()
        .map(|r| r.clips.as_ref().map_or(0, |c| c.errors))
        .sum();
    let mut failed = reports.iter().any(|r| r.failed);
    if let Err(e) = sinks.alerts.finish() {
        log::error!("closing alerts: {e}");
        sink_errors += 1;
        failed = true;
    }
    if let Err(e) = sinks.metrics.flush() {
        log::error!("flushing metrics: {e}");
        sink_errors += 1;
    }
    let alerts = sinks.alerts.counts();
    RunReport {
        failed,
        simulated_clock: simulated,
        elapsed_s: started.elapsed().as_secs_f64(),
        cameras: reports,
        alerts,
        metrics_written: sinks.metrics.written(),
        sink_errors: sink_errors + sinks.metrics.errors() + alerts.write_errors,
        sink_overhead: sinks.metrics.sink_overhead().ok(),
    }
}

fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        thread::sleep(deadline - now);
    }
}

fn run_camera(cam: CameraPipeline, sinks: &Sinks) -> CameraReport {
    let CameraPipeline {
        config,
        source,
        mut detector,
        mut processor,
    } = cam;
    let camera_id = config.camera_id.clone();
    let cid: &str = &camera_id;
    let stage = |name: &str| format!("{cid}/{name}");
    let set_stage = |name: &str, status: StageStatus| {
        if let Some(live) = &sinks.live {
            live.set_stage(&stage(name), status);
        }
    };
    if let Some(live) = &sinks.live {
        live.register_camera(cid);
    }

    let acq_spec = config.effective_spec(config.acquisition_queue);
    let ana_spec = config.effective_spec(config.analytics_queue);
    let sto_spec = config.storage_queue;
    let queues = (|| -> Result<_> {
        Ok((
            BoundedQueue::<Acquired>::new(acq_spec.capacity, acq_spec.policy)?,
            BoundedQueue::<Detected>::new(ana_spec.capacity, ana_spec.policy)?,
            BoundedQueue::<Stored>::new(sto_spec.capacity, sto_spec.policy)?,
        ))
    })();
    let segmenter = config
        .clips
        .clone()
        .map(|c| ClipSegmenter::new(c, cid, config.profile_mm))
        .transpose();
    let (acq_q, ana_q, sto_q, segmenter) = match (queues, segmenter) {
        (Ok((a, b, c)), Ok(seg)) => (a, b, c, seg),
        (Err(e), _) | (_, Err(e)) => {
            return CameraReport {
                camera_id: cid.to_string(),
                profile_mm: config.profile_mm,
                failed: true,
                failure: Some(e.to_string()),
                ..CameraReport::default()
            }
        }
    };
    let storing = segmenter.is_some();
    let wall = WallClock::new();
    let shared = Shared::default();
    let mut clip_stats = None;

    thread::scope(|s| {
        let (acq_q, ana_q, sto_q, shared, wall) = (&acq_q, &ana_q, &sto_q, &shared, &wall);
        for name in ["acquire", "detect", "analytics"] {
            set_stage(name, StageStatus::Running);
        }

        let acquisition = s.spawn(move || {
            let _close = CloseOnDrop(vec![acq_q, sto_q]);
            let mut anchor: Option<(Instant, TimestampNs, TimestampNs)> = None;
            for item in source {
                let af = match item {
                    SourceItem::Reconnect(r) => {
                        shared.reconnects.fetch_add(1, Ordering::Relaxed);
                        log::warn!(
                            "{}: camera reconnected after {} missed frames",
                            r.camera_id,
                            r.missed_frames
                        );
                        continue;
                    }
                    SourceItem::Frame(af) => *af,
                };
                let ts = af.frame.ts_acquire;
                let (anchor_instant, anchor_ts, anchor_wall) =
                    *anchor.get_or_insert_with(|| (Instant::now(), ts, wall.now()));
                let offset = ts.saturating_sub(anchor_ts);
                if config.clock == ClockMode::Wall {
                    sleep_until(anchor_instant + Duration::from_nanos(offset));
                }
                let t_acquire = wall.now();
                let t_scheduled = (anchor_wall + offset).min(t_acquire);
                let AcquiredFrame {
                    frame: raw,
                    truth,
                    camera_temp_c,
                } = af;
                let stored = storing.then(|| AcquiredFrame {
                    frame: crate::types::RawFrame {
                        data: if config.store_pixels { raw.data.clone() } else { None },
                        ..raw.clone()
                    },
                    truth: truth.clone(),
                    camera_temp_c,
                });
                let frame = match Frame::try_from(raw) {
                    Ok(f) => f,
                    Err(e) => {
                        shared.rejected.fetch_add(1, Ordering::Relaxed);
                        if let Some(live) = &sinks.live {
                            live.with_counters(cid, |c| {
                                c.rejected.fetch_add(1, Ordering::Relaxed);
                            });
                        }
                        log::warn!("{cid}: rejected frame: {e}");
                        continue;
                    }
                };
                shared.acquired.fetch_add(1, Ordering::Relaxed);
                if let Some(record) = stored {
                    if sto_q.push(Stored { ts, record }).is_err() {
                        shared.fail("storage stage stopped accepting records".into());
                    }
                }
                let pushed = acq_q.push(Acquired {
                    frame,
                    truth: Some(truth),
                    camera_temp_c,
                    t_scheduled,
                    t_acquire,
                });
                if let Some(live) = &sinks.live {
                    live.with_counters(cid, |c| {
                        c.acquired.fetch_add(1, Ordering::Relaxed);
                        if matches!(pushed, Ok(EnqueueOutcome::Dropped(_))) {
                            c.dropped.fetch_add(1, Ordering::Relaxed);
                        }
                    });
                }
                if pushed.is_err() {
                    break;
                }
            }
        });

        let detection = s.spawn(move || {
            let _close = CloseOnDrop(vec![acq_q, ana_q]);
            while let Some(acquired) = acq_q.pop() {
                let result = if acquired.frame.pixel_format() == PixelFormat::BayerRG8 {
                    demosaic_rg8(&acquired.frame)
                } else {
                    Ok(acquired.frame.clone())
                }
                .and_then(|rgb| {
                    detector
                        .detect(&rgb, acquired.truth.as_ref())
                        .map(|d| (rgb, d))
                });
                let (rgb, detections) = match result {
                    Ok(r) => r,
                    Err(e) => {
                        shared.fail(format!("detect: {e}"));
                        return Err(e);
                    }
                };
                let t_detect_done = wall.now();
                let item = Detected {
                    acquired: Acquired { frame: rgb, ..acquired },
                    detections,
                    t_detect_done,
                };
                if ana_q.push(item).is_err() {
                    break;
                }
            }
            Ok(())
        });

        let analytics = s.spawn(|| {
            let _close = CloseOnDrop(vec![ana_q]);
            while let Some(d) = ana_q.pop() {
                let a = &d.acquired;
                let verdict = match processor.analyze(&a.frame, a.truth.as_ref(), a.camera_temp_c, &d.detections) {
                    Ok(v) => v,
                    Err(e) => {
                        shared.fail(format!("analytics: {e}"));
                        return Err(e);
                    }
                };
                let t_analytics_done = wall.now();
                processor.emit(&a.frame, d.detections, verdict);
                let t_alert_done = wall.now();
                let timing = StageTiming {
                    seq: a.frame.seq(),
                    t_scheduled: a.t_scheduled,
                    t_acquire: a.t_acquire,
                    t_detect_done: d.t_detect_done,
                    t_analytics_done,
                    t_alert_done,
                };
                if let Some(live) = &sinks.live {
                    live.with_counters(cid, |c| {
                        c.processed.fetch_add(1, Ordering::Relaxed);
                        c.latency_us_total
                            .fetch_add(timing.end_to_end_ns() / 1000, Ordering::Relaxed);
                        c.gated.store(processor.tally().gated, Ordering::Relaxed);
                        c.suppressed.store(processor.tally().suppressed, Ordering::Relaxed);
                        c.events.store(processor.tally().events, Ordering::Relaxed);
                    });
                }
                shared.timings.lock().push(timing);
            }
            Ok::<_, Error>(())
        });

        let storage = segmenter.map(|mut seg| {
            set_stage("storage", StageStatus::Running);
            let delay = Duration::from_secs_f64(config.storage_delay_ms.max(0.0) / 1000.0);
            s.spawn(move || {
                let _close = CloseOnDrop(vec![sto_q]);
                while let Some(item) = sto_q.pop() {
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                    match serde_json::to_string(&item.record) {
                        Ok(line) => {
                            if let Err(e) = seg.record(item.ts, &line) {
                                log::warn!("clip write failed: {e}");
                            }
                        }
                        Err(e) => log::warn!("clip record not serializable: {e}"),
                    }
                }
                let _ = seg.finish();
                seg.stats().clone()
            })
        });

        let joined = [
            ("acquire", acquisition.join().map(|()| Ok(()))),
            ("detect", detection.join()),
            ("analytics", analytics.join()),
        ];
        for (name, result) in joined {
            let failure = match result {
                Ok(Ok(())) => None,
                Ok(Err(e)) => Some(e.to_string()),
                Err(p) => Some(format!("panicked: {}", panic_message(&*p))),
            };
            match failure {
                None => set_stage(name, StageStatus::Finished),
                Some(msg) => {
                    shared.fail(format!("{name}: {msg}"));
                    set_stage(name, StageStatus::Halted(msg));
                }
            }
        }
        if let Some(h) = storage {
            match h.join() {
                Ok(stats) => {
                    set_stage("storage", StageStatus::Finished);
                    clip_stats = Some(stats);
                }
                Err(p) => {
                    let msg = format!("panicked: {}", panic_message(&*p));
                    shared.fail(format!("storage: {msg}"));
                    set_stage("storage", StageStatus::Halted(msg));
                }
            }
        }
    });

    let tally = processor.finish();
    let timings = std::mem::take(&mut *shared.timings.lock());
    let acq_c = acq_q.counters();
    let ana_c = ana_q.counters();
    let mut queues = vec![
        ("acquisition".to_string(), acq_c),
        ("analytics".to_string(), ana_c),
    ];
    if storing {
        queues.push(("storage".to_string(), sto_q.counters()));
    }
    for (name, c) in &queues {
        if !c.conserved() {
            shared.fail(format!("queue {name} lost items: {c:?}"));
        }
    }
    let failure = shared.failure.lock().clone();
    CameraReport {
        camera_id: cid.to_string(),
        profile_mm: config.profile_mm,
        frames_acquired: shared.acquired.load(Ordering::Relaxed),
        frames_rejected: shared.rejected.load(Ordering::Relaxed),
        frames_processed: tally.processed,
        dropped: queues.iter().map(|(_, c)| c.dropped).sum(),
        reconnects: shared.reconnects.load(Ordering::Relaxed),
        events_raised: tally.events,
        events_gated: tally.gated,
        events_suppressed: tally.suppressed,
        presence_accuracy: tally.presence_accuracy(),
        billets: tally.billets,
        latency: summarize(&timings, config.warmup_frames),
        queues,
        clips: clip_stats,
        timing_violations: timings.iter().filter(|t| !t.is_monotonic()).count() as u64,
        order_violations: tally.order_violations,
        failed: failure.is_some(),
        failure,
        timings,
    }
}
