//! Scenario-level runs: wire the simulator, oracle detector, analytics and
//! fusion together, either through the threaded pipeline or sequentially
//! in-process for scoring and sweeps.

use std::sync::Arc;

use crate::alertstore::{evaluate, DebounceRule, EvalReport, TruthEvent, DEFAULT_MATCH_WINDOW_S};
use crate::analytics::AnalyticsParams;
use crate::detect::{demosaic_rg8, Detector, DetectorSpec, OracleDetector, OracleNoise};
use crate::error::Result;
use crate::fusion::{FusionConfig, FusionStage, SignalBus, SignalFeed};
use crate::par::{self, Execution};
use crate::pipeline::{
    build_analytics, CameraCalibration, CameraPipeline, FrameProcessor, PipelineConfig, Sinks, Tally,
};
use crate::simsource::{
    gen_signals, synthetic_source, truth_events, BilletExpectation, BoxedSource, Scenario,
    SceneGeometry, SourceItem, StreamOptions,
};
use crate::types::{Alert, Frame, PixelFormat, TimestampNs};

/// 2024-03-15T10:00:00Z, the default start of simulated time.
pub const DEFAULT_START_TS: TimestampNs = 1_710_496_800_000_000_000;

/// Everything needed to run one camera over one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioSetup {
    pub scenario: Scenario,
    pub camera_id: String,
    pub start_ts: TimestampNs,
    pub render: bool,
    pub detector: DetectorSpec,
    pub noise: OracleNoise,
    pub params: AnalyticsParams,
    pub fusion: FusionConfig,
    pub debounce: DebounceRule,
    pub calibration: CameraCalibration,
    pub geometry: SceneGeometry,
    pub match_window_s: f64,
}

impl ScenarioSetup {
    /// Noise-free oracle seeded from the scenario, default thresholds.
    pub fn new(scenario: Scenario) -> Self {
        let noise = OracleNoise {
            seed: scenario.seed,
            ..OracleNoise::none()
        };
        ScenarioSetup {
            scenario,
            camera_id: "cam1".into(),
            start_ts: DEFAULT_START_TS,
            render: false,
            detector: DetectorSpec::new("oracle", &crate::types::ROD_PROFILES_MM),
            noise,
            params: AnalyticsParams::default(),
            fusion: FusionConfig::default(),
            debounce: DebounceRule::default(),
            calibration: CameraCalibration::default(),
            geometry: SceneGeometry::default(),
            match_window_s: DEFAULT_MATCH_WINDOW_S,
        }
    }

    pub fn source(&self) -> Result<BoxedSource> {
        let mut opts = StreamOptions::new(&self.camera_id, self.start_ts);
        opts.render = self.render;
        opts.geometry = self.geometry;
        synthetic_source(&self.scenario, opts)
    }

    pub fn oracle(&self) -> Result<OracleDetector> {
        OracleDetector::new(self.detector.clone(), self.noise, self.geometry)
    }

    pub fn processor(&self, sinks: Sinks, simulated: bool) -> Result<FrameProcessor> {
        let analytics = build_analytics(
            &self.camera_id,
            self.scenario.profile_mm,
            &self.params,
            &self.calibration,
            &self.geometry,
        )?;
        let signals = gen_signals(&self.scenario, self.start_ts)?;
        let fusion = FusionStage::new(
            self.fusion.clone(),
            SignalBus::new(self.fusion.staleness_limit_s),
            SignalFeed::Scripted(Arc::new(signals)),
        );
        Ok(FrameProcessor::new(analytics, fusion, sinks, simulated))
    }

    /// The threaded pipeline for this scenario.
    pub fn pipeline(&self, config: PipelineConfig, sinks: &Sinks) -> Result<CameraPipeline> {
        let simulated = config.clock == crate::pipeline::ClockMode::Simulated;
        Ok(CameraPipeline {
            source: self.source()?,
            detector: Box::new(self.oracle()?),
            processor: self.processor(sinks.clone(), simulated)?,
            config,
        })
    }

    pub fn truth(&self) -> Vec<TruthEvent> {
        truth_events(
            &self.scenario,
            self.start_ts,
            Some(&self.camera_id),
            BilletExpectation {
                nominal_s: self.params.nominal_billet_s,
                short_factor: self.params.short_factor,
                long_factor: self.params.long_factor,
            },
        )
    }
}

/// Feeds every frame of `source` straight through detection and the
/// processor on the calling thread. Returns the number of frames processed;
/// frames failing format validation are skipped.
pub fn run_offline(source: BoxedSource, detector: &mut dyn Detector, processor: &mut FrameProcessor) -> Result<u64> {
    let mut n = 0;
    for item in source {
        let SourceItem::Frame(af) = item else { continue };
        let Ok(frame) = Frame::try_from(af.frame) else { continue };
        let frame = if frame.pixel_format() == PixelFormat::BayerRG8 {
            demosaic_rg8(&frame)?
        } else {
            frame
        };
        let detections = detector.detect(&frame, Some(&af.truth))?;
        processor.process(&frame, Some(&af.truth), af.camera_temp_c, detections)?;
        n += 1;
    }
    Ok(n)
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub frames: u64,
    /// Every closed alert, suppressed ones included, in close order.
    pub alerts: Vec<Alert>,
    pub truth: Vec<TruthEvent>,
    pub eval: EvalReport,
    pub tally: Tally,
}

/// Runs a scenario sequentially in-process and scores it.
pub fn run_scenario(setup: &ScenarioSetup) -> Result<ScenarioOutcome> {
    let sinks = Sinks::scratch(setup.debounce);
    let mut processor = setup.processor(sinks.clone(), true)?;
    let mut detector = setup.oracle()?;
    let frames = run_offline(setup.source()?, &mut detector, &mut processor)?;
    sinks.alerts.finish()?;
    let tally = processor.finish();
    let alerts = sinks.alerts.closed_alerts();
    let truth = setup.truth();
    let mut eval = evaluate(&alerts, &truth, setup.match_window_s);
    eval.presence_accuracy = tally.presence_accuracy();
    Ok(ScenarioOutcome {
        frames,
        alerts,
        truth,
        eval,
        tally,
    })
}

/// Runs many scenarios; each is independent, so they parallelize cleanly.
pub fn sweep(setups: &[ScenarioSetup], exec: Execution) -> Vec<Result<ScenarioOutcome>> {
    par::map(exec, setups, run_scenario)
}
