use serde::{Deserialize, Serialize};

use crate::alertstore::{AlertCounts, SinkOverhead};
use crate::analytics::BilletInterval;
use crate::types::TimestampNs;

use super::clip::ClipStats;
use super::queue::QueueCounters;

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Wall-clock instants (ns) one frame passed each stage boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTiming {
    pub seq: u64,
    /// When the frame was due from the source (pacing schedule).
    pub t_scheduled: TimestampNs,
    pub t_acquire: TimestampNs,
    pub t_detect_done: TimestampNs,
    pub t_analytics_done: TimestampNs,
    pub t_alert_done: TimestampNs,
}

impl StageTiming {
    pub fn end_to_end_ns(&self) -> u64 {
        self.t_alert_done.saturating_sub(self.t_acquire)
    }

    pub fn is_monotonic(&self) -> bool {
        self.t_acquire <= self.t_detect_done
            && self.t_detect_done <= self.t_analytics_done
            && self.t_analytics_done <= self.t_alert_done
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub frames: usize,
    pub warmup_excluded: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    /// Frames per second from the first measured frame's schedule to the
    /// last frame's completion.
    pub sustained_fps: f64,
    pub stage_mean_ms: StageBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageBreakdown {
    pub queue_and_detect: f64,
    pub analytics_and_fusion: f64,
    pub alert_and_sink: f64,
}

fn ms(ns: u64) -> f64 {
    ns as f64 / 1e6
}

/// Summarizes timings after skipping the first `warmup` frames.
pub fn summarize(timings: &[StageTiming], warmup: usize) -> LatencySummary {
    let measured = &timings[warmup.min(timings.len())..];
    if measured.is_empty() {
        return LatencySummary {
            warmup_excluded: warmup.min(timings.len()),
            ..LatencySummary::default()
        };
    }
    let mut e2e: Vec<f64> = measured.iter().map(|t| ms(t.end_to_end_ns())).collect();
    e2e.sort_by(f64::total_cmp);
    let n = measured.len() as f64;
    let mean = |f: &dyn Fn(&StageTiming) -> u64| measured.iter().map(|t| ms(f(t))).sum::<f64>() / n;
    let first = measured.iter().map(|t| t.t_scheduled).min().expect("non-empty");
    let last = measured.iter().map(|t| t.t_alert_done).max().expect("non-empty");
    let span_s = last.saturating_sub(first) as f64 / 1e9;
    LatencySummary {
        frames: measured.len(),
        warmup_excluded: timings.len() - measured.len(),
        mean_ms: e2e.iter().sum::<f64>() / n,
        p50_ms: percentile(&e2e, 50.0),
        p95_ms: percentile(&e2e, 95.0),
        p99_ms: percentile(&e2e, 99.0),
        max_ms: *e2e.last().expect("non-empty"),
        sustained_fps: if measured.len() > 1 && span_s > 0.0 {
            (measured.len() - 1) as f64 / span_s
        } else {
            0.0
        },
        stage_mean_ms: StageBreakdown {
            queue_and_detect: mean(&|t| t.t_detect_done - t.t_acquire),
            analytics_and_fusion: mean(&|t| t.t_analytics_done - t.t_detect_done),
            alert_and_sink: mean(&|t| t.t_alert_done - t.t_analytics_done),
        },
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CameraReport {
    pub camera_id: String,
    pub profile_mm: u32,
    pub frames_acquired: u64,
    pub frames_rejected: u64,
    pub frames_processed: u64,
    pub dropped: u64,
    pub reconnects: u64,
    pub events_raised: u64,
    pub events_gated: u64,
    pub events_suppressed: u64,
    pub billets: Vec<BilletInterval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presence_accuracy: Option<f64>,
    pub latency: LatencySummary,
    pub queues: Vec<(String, QueueCounters)>,
    pub clips: Option<ClipStats>,
    pub timing_violations: u64,
    pub order_violations: u64,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// One record per frame that entered detection.
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub failed: bool,
    pub simulated_clock: bool,
    pub elapsed_s: f64,
    pub cameras: Vec<CameraReport>,
    pub alerts: AlertCounts,
    pub metrics_written: u64,
    /// Failed clip, metric and alert writes.
    pub sink_errors: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sink_overhead: Option<SinkOverhead>,
}

impl RunReport {
    pub fn frames_processed(&self) -> u64 {
        self.cameras.iter().map(|c| c.frames_processed).sum()
    }

    pub fn dropped(&self) -> u64 {
        self.cameras.iter().map(|c| c.dropped).sum()
    }

    pub fn camera(&self, camera_id: &str) -> Option<&CameraReport> {
        self.cameras.iter().find(|c| c.camera_id == camera_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nearest_rank() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&xs, 50.0), 50.0);
        assert_eq!(percentile(&xs, 99.0), 99.0);
        assert_eq!(percentile(&xs, 100.0), 100.0);
        assert_eq!(percentile(&[7.0], 95.0), 7.0);
    }

    fn timing(seq: u64, t: u64, lat: u64) -> StageTiming {
        StageTiming {
            seq,
            t_scheduled: t,
            t_acquire: t,
            t_detect_done: t + lat / 2,
            t_analytics_done: t + lat / 2,
            t_alert_done: t + lat,
        }
    }

    #[test]
    fn warmup_excluded_and_fps() {
        let ts: Vec<StageTiming> = (0..200).map(|i| timing(i, i * 10_000_000, 2_000_000)).collect();
        let s = summarize(&ts, 100);
        assert_eq!((s.frames, s.warmup_excluded), (100, 100));
        assert!((s.mean_ms - 2.0).abs() < 1e-9);
        // 99 intervals of 10 ms plus the final 2 ms of processing
        assert!((s.sustained_fps - 99.0 / 0.992).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn percentiles_monotone(lats in prop::collection::vec(0u64..1_000_000_000, 1..300)) {
            let ts: Vec<StageTiming> = lats.iter().enumerate().map(|(i, &l)| timing(i as u64, i as u64 * 1000, l)).collect();
            let s = summarize(&ts, 0);
            prop_assert!(s.p50_ms <= s.p95_ms && s.p95_ms <= s.p99_ms && s.p99_ms <= s.max_ms);
        }
    }
}
