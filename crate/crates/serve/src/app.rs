//! Turns a [`RunConfig`] into running pipelines, sinks and the HTTP surface.

use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::mpsc::Sender;
use std::sync::Arc;
use std::time::Duration;

use millwatch_core::alertstore::{AlertHub, DebounceRule, MetricSink};
use millwatch_core::detect::OracleDetector;
use millwatch_core::fusion::{spawn_tcp_feed, FusionStage, SignalBus, SignalFeed};
use millwatch_core::harness::DEFAULT_START_TS;
use millwatch_core::live::LiveState;
use millwatch_core::pipeline::{
    build_analytics, run_cameras, CameraPipeline, ClipConfig, ClockMode, FrameProcessor, PipelineConfig, RunReport,
    Sinks,
};
use millwatch_core::simsource::{
    gen_signals, replay_source, synthetic_source, BoxedSource, Scenario, SceneGeometry, StreamOptions,
};
use millwatch_core::types::Alert;
use millwatch_core::Error;

use crate::config::{CameraConfig, RunConfig, SignalSpec, SourceSpec};
use crate::http::{self, HttpServer};

/// Why a command failed, which decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad input: arguments, config, files. Exit 1.
    Invalid(String),
    /// The run itself went wrong. Exit 2.
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Stage { .. } => Failure::Runtime(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

fn create_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Runtime(format!("creating {}: {e}", dir.display()))),
        _ => Ok(()),
    }
}

pub fn build_sinks(cfg: &RunConfig, live: &Arc<LiveState>) -> Result<Sinks, Failure> {
    let rule = DebounceRule::new(cfg.debounce_s).map_err(|e| Failure::Invalid(e.to_string()))?;
    let out: Option<Box<dyn std::io::Write + Send>> = match &cfg.sinks.alerts {
        Some(path) => {
            create_parent(path)?;
            let file = File::create(path).map_err(|e| Failure::Runtime(format!("creating {}: {e}", path.display())))?;
            Some(Box::new(BufWriter::new(file)))
        }
        None => None,
    };
    let metrics = match &cfg.sinks.metrics {
        Some(path) => MetricSink::file(path)?,
        None => MetricSink::discard(),
    };
    // without an output file the closed alerts are kept for scoring
    let hub = match out {
        Some(out) => AlertHub::new(rule, Some(out)),
        None => AlertHub::in_memory(rule),
    };
    Ok(Sinks {
        alerts: Arc::new(hub.with_live(Arc::clone(live))),
        metrics: Arc::new(metrics),
        live: Some(Arc::clone(live)),
    })
}

/// Replay read errors surface after the run through these slots.
pub type ReplayErrors = Vec<(String, Arc<parking_lot::Mutex<Option<Error>>>)>;

pub fn build_camera(
    cfg: &RunConfig,
    cam: &CameraConfig,
    sinks: &Sinks,
    shared_bus: Option<&Arc<SignalBus>>,
    replay_errors: &mut ReplayErrors,
) -> Result<CameraPipeline, Failure> {
    let geometry = SceneGeometry::default();
    let (source, scenario): (BoxedSource, Option<Scenario>) = match &cam.source {
        SourceSpec::Synth(path) => {
            let scenario = Scenario::from_json_file(path)?;
            let mut opts = StreamOptions::new(&cam.camera_id, DEFAULT_START_TS);
            opts.render = cam.render;
            opts.geometry = geometry;
            (synthetic_source(&scenario, opts)?, Some(scenario))
        }
        SourceSpec::Replay(path) => {
            let (source, slot) = replay_source(path)?;
            replay_errors.push((cam.camera_id.clone(), slot));
            (source, None)
        }
    };
    let spec = cfg.registry().select_model(cam.profile_mm)?.clone();
    let analytics = build_analytics(&cam.camera_id, cam.profile_mm, &cam.thresholds, &cam.calibration, &geometry)?;
    let detector = OracleDetector::new(spec, cam.noise, geometry)?;
    let own_bus = || SignalBus::new(cfg.fusion.staleness_limit_s);
    let (bus, feed) = match (&cfg.signals, &scenario, shared_bus) {
        (SignalSpec::Tcp { .. }, _, Some(bus)) => (Arc::clone(bus), SignalFeed::External),
        (SignalSpec::Scripted, Some(s), _) => (own_bus(), SignalFeed::Scripted(Arc::new(gen_signals(s, DEFAULT_START_TS)?))),
        (SignalSpec::Scripted, None, _) => {
            log::warn!("{}: replay sources carry no process signals; analytics stay active", cam.camera_id);
            (own_bus(), SignalFeed::AlwaysRunning)
        }
        _ => (own_bus(), SignalFeed::AlwaysRunning),
    };
    let fusion = FusionStage::new(cfg.fusion.clone(), bus, feed);
    let processor = FrameProcessor::new(analytics, fusion, sinks.clone(), cfg.clock == ClockMode::Simulated);
    let mut config = PipelineConfig::new(&cam.camera_id, cam.profile_mm, cfg.clock);
    config.acquisition_queue = cfg.queues.acquisition;
    config.analytics_queue = cfg.queues.analytics;
    config.storage_queue = cfg.queues.storage;
    config.warmup_frames = cfg.warmup_frames;
    if let Some(clips) = &cfg.clips {
        config.clips = Some(ClipConfig {
            root: clips.root.clone(),
            clip_len_s: clips.clip_len_s,
        });
        config.store_pixels = clips.store_pixels;
    }
    Ok(CameraPipeline {
        config,
        source,
        detector: Box::new(detector),
        processor,
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep serving HTTP this long after the pipelines finish.
    pub linger: Duration,
    /// Told the HTTP address once it is bound, before any frame is read.
    pub http_ready: Option<Sender<SocketAddr>>,
}

/// Runs every configured camera to completion. The HTTP surface and TCP
/// signal feed, if configured, live for the duration of the run.
pub struct RunOutcome {
    pub report: RunReport,
    /// Closed alerts, kept only when no alerts file is configured.
    pub alerts: Vec<Alert>,
}

pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome, Failure> {
    let live = LiveState::new();
    let sinks = build_sinks(cfg, &live)?;
    for cam in &cfg.cameras {
        live.register_camera(&cam.camera_id);
    }

    let shared_bus = match &cfg.signals {
        SignalSpec::Tcp { bind } => {
            let bus = SignalBus::new(cfg.fusion.staleness_limit_s);
            let (addr, _handle) = spawn_tcp_feed(bind.as_str(), Arc::clone(&bus))
                .map_err(|e| Failure::Runtime(format!("signal feed on {bind}: {e}")))?;
            eprintln!("signals: listening on {addr}");
            Some(bus)
        }
        _ => None,
    };

    let server: Option<HttpServer> = match &cfg.http {
        Some(h) => {
            let state = http::AppState::new(Arc::clone(&live), Arc::clone(&sinks.alerts), Arc::clone(&sinks.metrics), h.stream_fps);
            let server = http::spawn(&h.bind, state).map_err(|e| Failure::Runtime(format!("http on {}: {e}", h.bind)))?;
            eprintln!("http: listening on http://{}", server.addr());
            if let Some(tx) = &opts.http_ready {
                let _ = tx.send(server.addr());
            }
            Some(server)
        }
        None => None,
    };

    let mut replay_errors = Vec::new();
    let cameras = cfg
        .cameras
        .iter()
        .map(|cam| build_camera(cfg, cam, &sinks, shared_bus.as_ref(), &mut replay_errors))
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = run_cameras(cameras, &sinks);
    for (camera_id, slot) in replay_errors {
        if let Some(e) = slot.lock().take() {
            report.failed = true;
            if let Some(cam) = report.cameras.iter_mut().find(|c| c.camera_id == camera_id) {
                cam.failed = true;
                cam.failure.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if let Some(server) = server {
        if !opts.linger.is_zero() {
            std::thread::sleep(opts.linger);
        }
        server.shutdown();
    }
    Ok(RunOutcome {
        report,
        alerts: sinks.alerts.closed_alerts(),
    })
}
