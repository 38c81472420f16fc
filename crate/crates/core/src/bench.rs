//! Latency and throughput harness over the full wall-clock pipeline.

use serde::{Deserialize, Serialize};

use crate::alertstore::SinkOverhead;
use crate::error::{Error, Result};
use crate::harness::ScenarioSetup;
use crate::pipeline::{run_pipeline, ClockMode, PipelineConfig, RunReport, Sinks, StageBreakdown};
use crate::simsource::Scenario;

pub const MIN_BENCH_FRAMES: usize = 1000;
pub const WARMUP_FRAMES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub frames: usize,
    pub warmup_excluded: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    pub sustained_fps: f64,
    pub source_fps: f64,
    pub stage_mean_ms: StageBreakdown,
    pub frames_processed: u64,
    pub dropped: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sink_overhead: Option<SinkOverhead>,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// The scenario cut or stretched to exactly `n` frames. Events past the new
/// end are dropped, events straddling it are clipped.
pub fn resize_scenario(scenario: &Scenario, n: usize) -> Scenario {
    let mut s = scenario.clone();
    s.duration_s = (n as f64 + 0.5) / s.fps;
    let end = s.duration_s;
    s.events.retain(|e| e.t_start_s < end);
    for e in &mut s.events {
        e.t_end_s = e.t_end_s.min(end);
    }
    s
}

/// Runs `n_frames` of the scenario through the wall-clock pipeline and
/// reports end-to-end latency, excluding the first 100 frames.
pub fn measure(setup: &ScenarioSetup, config: &PipelineConfig, n_frames: usize, sinks: &Sinks) -> Result<LatencyReport> {
    if n_frames < MIN_BENCH_FRAMES {
        return Err(Error::InsufficientSamples {
            needed: MIN_BENCH_FRAMES,
            have: n_frames,
        });
    }
    let mut setup = setup.clone();
    setup.scenario = resize_scenario(&setup.scenario, n_frames);
    let config = PipelineConfig {
        clock: ClockMode::Wall,
        warmup_frames: WARMUP_FRAMES,
        ..config.clone()
    };
    let pipeline = setup.pipeline(config, sinks)?;
    let report = run_pipeline(pipeline, sinks);
    Ok(latency_report(&report, setup.scenario.fps))
}

pub fn latency_report(report: &RunReport, source_fps: f64) -> LatencyReport {
    let cam = report.cameras.first().cloned().unwrap_or_default();
    let l = &cam.latency;
    LatencyReport {
        frames: l.frames,
        warmup_excluded: l.warmup_excluded,
        mean_ms: l.mean_ms,
        p50_ms: l.p50_ms,
        p95_ms: l.p95_ms,
        p99_ms: l.p99_ms,
        max_ms: l.max_ms,
        sustained_fps: l.sustained_fps,
        source_fps,
        stage_mean_ms: l.stage_mean_ms.clone(),
        frames_processed: cam.frames_processed,
        dropped: cam.dropped,
        sink_overhead: report.sink_overhead,
        failed: report.failed,
        failure: cam.failure.clone(),
    }
}
