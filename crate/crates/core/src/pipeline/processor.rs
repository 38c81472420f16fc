use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::alertstore::{AlertHub, MetricSink};
use crate::analytics::{AnalyticsParams, BilletInterval, CameraAnalytics, DiverterCalibration, FlapperBaseline};
use crate::clock::{Clock, WallClock};
use crate::error::Result;
use crate::fusion::{FusionStage, FusionVerdict};
use crate::live::{LiveSnapshot, LiveState};
use crate::simsource::{GroundTruthRecord, SceneGeometry};
use crate::types::{AnomalyEvent, Detection, Frame, MetricPoint, TimestampNs, NANOS_PER_SEC};

/// Sinks shared by every camera in a run.
#[derive(Clone)]
pub struct Sinks {
    pub alerts: Arc<AlertHub>,
    pub metrics: Arc<MetricSink>,
    pub live: Option<Arc<LiveState>>,
}

impl Sinks {
    /// In-memory alerts, discarded metrics, no live state.
    pub fn scratch(rule: crate::alertstore::DebounceRule) -> Self {
        Sinks {
            alerts: Arc::new(AlertHub::in_memory(rule)),
            metrics: Arc::new(MetricSink::discard()),
            live: None,
        }
    }
}

/// Per-camera geometry calibration. Unset baselines fall back to the
/// simulator's scene geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraCalibration {
    pub flapper_baseline: Option<(f64, f64)>,
    pub diverter_reference_x: Option<f64>,
    pub mm_per_px: f64,
}

impl Default for CameraCalibration {
    fn default() -> Self {
        CameraCalibration {
            flapper_baseline: None,
            diverter_reference_x: None,
            mm_per_px: 0.5,
        }
    }
}

pub fn build_analytics(
    camera_id: &str,
    profile_mm: u32,
    params: &AnalyticsParams,
    calibration: &CameraCalibration,
    geometry: &SceneGeometry,
) -> Result<CameraAnalytics> {
    CameraAnalytics::new(
        camera_id,
        profile_mm,
        params.clone(),
        FlapperBaseline {
            baseline: calibration.flapper_baseline.unwrap_or(geometry.flapper_baseline),
            threshold_px: params.flapper_threshold_px,
        },
        DiverterCalibration {
            mm_per_px: calibration.mm_per_px,
            reference_x: calibration
                .diverter_reference_x
                .unwrap_or(geometry.diverter_reference_x),
            threshold_mm: params.diverter_threshold_mm,
        },
    )
}

/// What a processor accumulated over a run.
#[derive(Debug, Clone, Default)]
pub struct Tally {
    pub processed: u64,
    pub events: u64,
    pub gated: u64,
    pub suppressed: u64,
    pub billets: Vec<BilletInterval>,
    /// `(ts, true rod presence)` for frames that carried ground truth.
    pub presence_truth: Vec<(TimestampNs, bool)>,
    pub order_violations: u64,
}

impl Tally {
    pub fn presence_accuracy(&self) -> Option<f64> {
        crate::alertstore::presence_accuracy(&self.billets, &self.presence_truth)
    }
}

/// Analytics, fusion and alerting for one camera, one frame at a time.
/// The threaded pipeline and the offline runner share it.
pub struct FrameProcessor {
    analytics: CameraAnalytics,
    fusion: FusionStage,
    sinks: Sinks,
    simulated: bool,
    wall: WallClock,
    recent: VecDeque<AnomalyEvent>,
    last_temp_second: Option<u64>,
    last_seq: Option<u64>,
    tally: Tally,
}

impl FrameProcessor {
    /// With `simulated`, alerts are stamped with their event time instead of
    /// the wall clock so output is a pure function of the input.
    pub fn new(analytics: CameraAnalytics, fusion: FusionStage, sinks: Sinks, simulated: bool) -> Self {
        FrameProcessor {
            analytics,
            fusion,
            sinks,
            simulated,
            wall: WallClock::new(),
            recent: VecDeque::new(),
            last_temp_second: None,
            last_seq: None,
            tally: Tally::default(),
        }
    }

    pub fn camera_id(&self) -> &str {
        self.analytics.camera_id()
    }

    fn temperature_point(&mut self, frame: &Frame, camera_temp_c: f64) -> Option<MetricPoint> {
        let second = frame.ts_acquire() / NANOS_PER_SEC;
        if self.last_temp_second == Some(second) || !camera_temp_c.is_finite() {
            return None;
        }
        self.last_temp_second = Some(second);
        MetricPoint::build(
            "camera",
            &[
                ("camera_id", frame.camera_id()),
                ("profile", &format!("{}mm", frame.profile_mm())),
            ],
            &[("temperature_c", camera_temp_c)],
            frame.ts_acquire(),
        )
        .ok()
    }

    /// Analytics plus gating and suppression.
    pub fn analyze(
        &mut self,
        frame: &Frame,
        truth: Option<&GroundTruthRecord>,
        camera_temp_c: f64,
        detections: &[Detection],
    ) -> Result<FusionVerdict> {
        if self.last_seq.is_some_and(|s| frame.seq() <= s) {
            self.tally.order_violations += 1;
        }
        self.last_seq = Some(frame.seq());
        let ts = frame.ts_acquire();
        let mut out = self.analytics.process(frame.seq(), ts, detections)?;
        if let Some(t) = truth {
            self.tally.presence_truth.push((ts, t.rod_present));
        }
        if let Some(b) = out.billet.take() {
            self.tally.billets.push(b);
        }
        if let Some(p) = self.temperature_point(frame, camera_temp_c) {
            out.metrics.push(p);
        }
        self.tally.events += out.events.len() as u64;
        Ok(self.fusion.process(ts, out.events, out.metrics))
    }

    /// Raises alerts, writes metrics and refreshes the live view.
    pub fn emit(&mut self, frame: &Frame, detections: Vec<Detection>, verdict: FusionVerdict) {
        for (event, suppressed) in verdict.events {
            let raised = if self.simulated { event.ts } else { self.wall.now() };
            self.sinks.alerts.raise(event.clone(), suppressed, raised);
            if self.sinks.live.is_some() {
                self.recent.push_back(event);
            }
        }
        for point in &verdict.metrics {
            self.sinks.metrics.write_point(point);
        }
        self.tally.processed += 1;
        self.tally.gated = self.fusion.gated;
        self.tally.suppressed = self.fusion.suppressed;
        if let Some(live) = &self.sinks.live {
            let horizon = frame.ts_acquire().saturating_sub(NANOS_PER_SEC);
            while self.recent.front().is_some_and(|e| e.ts < horizon) {
                self.recent.pop_front();
            }
            live.publish_frame(LiveSnapshot {
                frame: frame.clone(),
                detections,
                recent_events: self.recent.iter().cloned().collect(),
                gate: verdict.gate,
            });
        }
    }

    pub fn process(
        &mut self,
        frame: &Frame,
        truth: Option<&GroundTruthRecord>,
        camera_temp_c: f64,
        detections: Vec<Detection>,
    ) -> Result<()> {
        let verdict = self.analyze(frame, truth, camera_temp_c, &detections)?;
        self.emit(frame, detections, verdict);
        Ok(())
    }

    pub fn tally(&self) -> &Tally {
        &self.tally
    }

    /// Ends the run: a billet still in view counts up to its last sighting.
    pub fn finish(&mut self) -> Tally {
        if let Some((entry, last)) = self.analytics.billet_state().open_span() {
            self.tally.billets.push(BilletInterval {
                camera_id: self.analytics.camera_id().to_string(),
                entry_ts: entry,
                exit_ts: last,
                duration_s: crate::types::ns_to_secs(last - entry),
            });
        }
        self.tally.gated = self.fusion.gated;
        self.tally.suppressed = self.fusion.suppressed;
        std::mem::take(&mut self.tally)
    }
}
