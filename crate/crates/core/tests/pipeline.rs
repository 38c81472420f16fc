use std::sync::Arc;

use millwatch_core::alertstore::DebounceRule;
use millwatch_core::detect::{Detector, OracleNoise};
use millwatch_core::harness::{run_scenario, ScenarioSetup};
use millwatch_core::live::{LiveState, StageStatus};
use millwatch_core::pipeline::{run_cameras, run_pipeline, ClipConfig, ClockMode, PipelineConfig, Sinks};
use millwatch_core::scenarios;
use millwatch_core::simsource::{GroundTruthRecord, Scenario};
use millwatch_core::types::{Detection, Frame};
use millwatch_core::Result;

fn sim_config() -> PipelineConfig {
    PipelineConfig::new("cam1", 12, ClockMode::Simulated)
}

fn noisy(scenario: Scenario) -> ScenarioSetup {
    let mut setup = ScenarioSetup::new(scenario);
    setup.noise = OracleNoise {
        center_noise_px: 2.0,
        miss_rate: 0.05,
        fp_rate: 0.02,
        seed: 5,
    };
    setup
}

#[test]
fn simulated_run_conserves_frames() {
    let setup = noisy(scenarios::mixed(3, 6));
    let sinks = Sinks::scratch(DebounceRule::default());
    let report = run_pipeline(setup.pipeline(sim_config(), &sinks).unwrap(), &sinks);
    let cam = report.camera("cam1").unwrap();
    let n = setup.scenario.frame_count();
    assert!(!report.failed, "{:?}", cam.failure);
    assert!(report.simulated_clock);
    assert_eq!((cam.frames_acquired, cam.frames_processed, cam.dropped), (n, n, 0));
    assert!(cam.queues.iter().all(|(_, q)| q.conserved() && q.dropped == 0));
    assert_eq!((cam.timing_violations, cam.order_violations), (0, 0));
    assert_eq!(cam.timings.len() as u64, n);
    assert!(cam.presence_accuracy.unwrap() > 0.99);
    assert!(report.alerts.new_alerts > 0);
}

#[test]
fn pipeline_matches_offline_scoring() {
    let setup = noisy(scenarios::mixed(8, 9));
    let offline = run_scenario(&setup).unwrap();
    let sinks = Sinks::scratch(setup.debounce);
    let report = run_pipeline(setup.pipeline(sim_config(), &sinks).unwrap(), &sinks);
    assert!(!report.failed);
    assert_eq!(sinks.alerts.closed_alerts(), offline.alerts);
    assert_eq!(report.camera("cam1").unwrap().billets, offline.tally.billets);
}

#[test]
fn wall_clock_run_of_two_seconds() {
    let setup = ScenarioSetup::new(scenarios::production(1, 45.0, 2.0, 12));
    let sinks = Sinks::scratch(DebounceRule::default());
    let report = run_pipeline(
        setup.pipeline(PipelineConfig::new("cam1", 12, ClockMode::Wall), &sinks).unwrap(),
        &sinks,
    );
    let cam = report.camera("cam1").unwrap();
    assert!(!report.failed);
    assert_eq!(cam.frames_processed, 90);
    assert!(report.elapsed_s >= 89.0 / 45.0);
    let l = &cam.latency;
    assert!(l.p50_ms <= l.p95_ms && l.p95_ms <= l.p99_ms && l.p99_ms <= l.max_ms);
    assert!(l.sustained_fps <= 45.0 + 1e-6, "{}", l.sustained_fps);
}

#[test]
fn empty_source_finishes_cleanly() {
    let setup = ScenarioSetup::new(Scenario::new(1, 45.0, 0.01, 12));
    assert_eq!(setup.scenario.frame_count(), 0);
    let sinks = Sinks::scratch(DebounceRule::default());
    let report = run_pipeline(setup.pipeline(sim_config(), &sinks).unwrap(), &sinks);
    assert!(!report.failed);
    assert_eq!(report.frames_processed(), 0);
    assert_eq!(report.cameras[0].latency.frames, 0);
}

struct Exploding(u64);

impl Detector for Exploding {
    fn name(&self) -> &str {
        "exploding"
    }

    fn detect(&mut self, frame: &Frame, _truth: Option<&GroundTruthRecord>) -> Result<Vec<Detection>> {
        if frame.seq() == self.0 {
            panic!("detector blew up at frame {}", self.0);
        }
        Ok(Vec::new())
    }
}

#[test]
fn stage_panic_fails_the_report_without_hanging() {
    let setup = ScenarioSetup::new(scenarios::production(1, 45.0, 20.0, 12));
    let live = LiveState::new();
    let mut sinks = Sinks::scratch(DebounceRule::default());
    sinks.live = Some(Arc::clone(&live));
    let mut pipeline = setup.pipeline(sim_config(), &sinks).unwrap();
    pipeline.detector = Box::new(Exploding(10));
    let report = run_pipeline(pipeline, &sinks);
    let cam = report.camera("cam1").unwrap();
    assert!(report.failed && cam.failed);
    let failure = cam.failure.as_deref().unwrap();
    assert!(failure.contains("detect") && failure.contains("blew up"), "{failure}");
    assert_eq!(cam.frames_processed, 10);
    assert!(live.halted_stages().iter().any(|name| name == "cam1/detect"));
    assert!(matches!(live.stages().get("cam1/acquire"), Some(StageStatus::Finished)));
}

#[test]
fn unwritable_clip_root_counts_sink_errors() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("not_a_dir");
    std::fs::write(&blocker, b"").unwrap();
    let setup = ScenarioSetup::new(scenarios::production(1, 45.0, 3.0, 12));
    let mut config = sim_config();
    config.clips = Some(ClipConfig {
        root: blocker.join("clips"),
        clip_len_s: 120.0,
    });
    let sinks = Sinks::scratch(DebounceRule::default());
    let report = run_pipeline(setup.pipeline(config, &sinks).unwrap(), &sinks);
    let cam = report.camera("cam1").unwrap();
    // detection is unaffected; every record shows up as a sink error
    assert_eq!(cam.frames_processed, 135);
    assert_eq!(report.sink_errors, 135);
    assert_eq!(cam.clips.as_ref().unwrap().records, 0);
}

#[test]
fn cameras_run_side_by_side() {
    let sinks = Sinks::scratch(DebounceRule::default());
    let cams = ["north", "south"]
        .iter()
        .map(|id| {
            let mut setup = noisy(scenarios::mixed(4, 3));
            setup.camera_id = id.to_string();
            setup
                .pipeline(PipelineConfig::new(id, 12, ClockMode::Simulated), &sinks)
                .unwrap()
        })
        .collect();
    let report = run_cameras(cams, &sinks);
    assert!(!report.failed);
    assert_eq!(report.cameras.len(), 2);
    let per_cam = |id: &str| {
        sinks
            .alerts
            .closed_alerts()
            .iter()
            .filter(|a| a.event.camera_id == id)
            .count()
    };
    assert!(per_cam("north") > 0);
    assert_eq!(per_cam("north"), per_cam("south"));
}
