//! Command-line entry points.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use millwatch_core::alertstore::{evaluate, DebounceRule, TruthEvent, DEFAULT_MATCH_WINDOW_S};
use millwatch_core::bench::{measure, LatencyReport};
use millwatch_core::harness::{ScenarioSetup, DEFAULT_START_TS};
use millwatch_core::pipeline::{ClockMode, PipelineConfig, QueuePolicy, QueueSpec, Sinks};
use millwatch_core::scenarios;
use millwatch_core::simsource::{read_replay, truth_events, BilletExpectation, Scenario, DEFAULT_FPS};
use millwatch_core::analytics::AnalyticsParams;
use millwatch_core::types::Alert;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::app::{self, Failure, RunOptions};
use crate::config::{config_path, load_config, parse_config, RunConfig, SourceSpec, CONFIG_ENV};

#[derive(Debug, Parser)]
#[command(name = "millwatch", version, about = "Rolling-mill anomaly detection pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the live pipeline from a config file or a single source.
    Run(RunArgs),
    /// Re-score a recorded replay file.
    Replay(ReplayArgs),
    /// Measure end-to-end latency and throughput on a scenario.
    Bench(BenchArgs),
    /// Score an alerts file against ground truth.
    Evaluate(EvaluateArgs),
    /// Print the ground-truth anomalies of a scenario.
    Truth(TruthArgs),
    /// Print a ready-made scenario.
    Scenario(ScenarioArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Config file; falls back to $MILLWATCH_CONFIG.
    #[arg(long, conflicts_with = "source")]
    pub config: Option<PathBuf>,
    /// Single camera source: synth:<scenario.json> or replay:<file.ndjson>.
    #[arg(long)]
    pub source: Option<SourceSpec>,
    /// Rod profile for --source; defaults to the one recorded in the source.
    #[arg(long, requires = "source")]
    pub profile: Option<u32>,
    /// Emit rendered frames (--source only).
    #[arg(long, requires = "source")]
    pub render: bool,
    /// Alerts output (--source only).
    #[arg(long, requires = "source")]
    pub alerts: Option<PathBuf>,
    /// Metrics output in line protocol (--source only).
    #[arg(long, requires = "source")]
    pub metrics: Option<PathBuf>,
    /// Clip root directory (--source only).
    #[arg(long, requires = "source")]
    pub clips: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub clock: Option<Clock>,
    /// Serve the operator endpoints on this address.
    #[arg(long)]
    pub http: Option<String>,
    /// Keep serving HTTP this many seconds after the run.
    #[arg(long, default_value_t = 0.0)]
    pub linger_s: f64,
    /// Write the run report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Clock {
    Wall,
    Simulated,
}

impl From<Clock> for ClockMode {
    fn from(c: Clock) -> Self {
        match c {
            Clock::Wall => ClockMode::Wall,
            Clock::Simulated => ClockMode::Simulated,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Ground truth to score against: a JSON array or NDJSON of truth events.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<u32>,
    /// Also write the closed alerts here.
    #[arg(long)]
    pub alerts: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MATCH_WINDOW_S)]
    pub window_s: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub frames: usize,
    /// Fixed per-frame detector delay.
    #[arg(long, default_value_t = 0.0)]
    pub latency_ms: f64,
    #[arg(long)]
    pub acq_capacity: Option<usize>,
    /// Evict the oldest frame when the acquisition queue is full.
    #[arg(long)]
    pub drop_oldest: bool,
    /// Also write metrics here, to measure sink overhead.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Closed alerts, NDJSON as written by `run`.
    #[arg(long)]
    pub alerts: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MATCH_WINDOW_S)]
    pub window_s: f64,
}

#[derive(Debug, Args)]
pub struct TruthArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Restrict matches to this camera.
    #[arg(long)]
    pub camera: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Production,
    Mixed,
    GateStress,
    ShortCut,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Length of a production run.
    #[arg(long, default_value_t = 60.0)]
    pub duration_s: f64,
    /// Anomalies in a mixed run.
    #[arg(long, default_value_t = 50)]
    pub anomalies: usize,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.exit_code()
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(e.to_string())
}

fn emit<T: Serialize>(value: &T, to: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    match to {
        Some(path) => std::fs::write(path, text + "\n")
            .map_err(|e| Failure::Runtime(format!("writing {}: {e}", path.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|e| Failure::Runtime(format!("writing stdout: {e}")))
        }
    }
}

fn execute(command: Command) -> Result<i32, Failure> {
    match command {
        Command::Run(a) => cmd_run(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Truth(a) => cmd_truth(a),
        Command::Scenario(a) => cmd_scenario(a),
    }
}

/// Camera id and profile recorded in the first frame of a replay file.
fn replay_identity(path: &Path) -> Result<(String, u32), Failure> {
    match read_replay(path)?.next() {
        Some(Ok(f)) => Ok((f.frame.camera_id, f.frame.profile_mm)),
        Some(Err(e)) => Err(invalid(e)),
        None => Err(Failure::Invalid(format!("{}: replay file is empty", path.display()))),
    }
}

fn config_error(problems: Vec<String>) -> Failure {
    Failure::Invalid(format!("invalid settings:\n  {}", problems.join("\n  ")))
}

/// A one-camera config around a source, validated like a config file.
fn source_config(a: &RunArgs, source: &SourceSpec) -> Result<RunConfig, Failure> {
    let (camera_id, recorded_profile) = match source {
        SourceSpec::Synth(p) => ("cam1".to_string(), Scenario::from_json_file(p)?.profile_mm),
        SourceSpec::Replay(p) => replay_identity(p)?,
    };
    let mut doc = json!({
        "cameras": [{
            "camera_id": camera_id,
            "source": source.to_string(),
            "profile_mm": a.profile.unwrap_or(recorded_profile),
            "render": a.render,
        }],
        "sinks": {"alerts": a.alerts, "metrics": a.metrics},
    });
    if let Some(root) = &a.clips {
        doc["clips"] = json!({ "root": root });
    }
    let cwd = std::env::current_dir().map_err(|e| Failure::Runtime(format!("current directory: {e}")))?;
    parse_config(&doc.to_string(), &cwd).map_err(config_error)
}

fn cmd_run(a: RunArgs) -> Result<i32, Failure> {
    let mut cfg = match (&a.source, config_path(a.config.clone())) {
        (Some(source), _) => source_config(&a, source)?,
        (None, Some(path)) => load_config(&path).map_err(invalid)?,
        (None, None) => {
            return Err(Failure::Invalid(format!(
                "no configuration: pass --config <file>, set {CONFIG_ENV}, or pass --source"
            )))
        }
    };
    if let Some(clock) = a.clock {
        cfg.clock = clock.into();
    }
    if let Some(bind) = &a.http {
        let mut http = cfg.http.take().unwrap_or_else(|| crate::config::HttpConfig::new(bind));
        http.bind = bind.clone();
        cfg.http = Some(http);
    }
    if !(a.linger_s >= 0.0 && a.linger_s.is_finite()) {
        return Err(Failure::Invalid(format!("--linger-s must be >= 0, got {}", a.linger_s)));
    }
    let opts = RunOptions {
        linger: Duration::from_secs_f64(a.linger_s),
        http_ready: None,
    };
    let outcome = app::run(&cfg, &opts)?;
    emit(&outcome.report, a.report.as_deref())?;
    Ok(if outcome.report.failed { 2 } else { 0 })
}

fn cmd_replay(a: ReplayArgs) -> Result<i32, Failure> {
    let (camera_id, recorded_profile) = replay_identity(&a.input)?;
    let doc = json!({
        "cameras": [{
            "camera_id": camera_id,
            "source": SourceSpec::Replay(a.input.clone()).to_string(),
            "profile_mm": a.profile.unwrap_or(recorded_profile),
        }],
        "clock": "simulated",
        "signals": {"kind": "none"},
        "match_window_s": a.window_s,
    });
    let cwd = std::env::current_dir().map_err(|e| Failure::Runtime(format!("current directory: {e}")))?;
    let cfg = parse_config(&doc.to_string(), &cwd).map_err(config_error)?;
    let truth = a.truth.as_deref().map(read_records::<TruthEvent>).transpose()?;
    let outcome = app::run(&cfg, &RunOptions::default())?;
    if let Some(path) = &a.alerts {
        write_ndjson(path, &outcome.alerts)?;
    }
    let eval = truth.map(|t| evaluate(&outcome.alerts, &t, a.window_s));
    emit(&json!({ "report": outcome.report, "eval": eval }), None)?;
    Ok(if outcome.report.failed { 2 } else { 0 })
}

fn cmd_bench(a: BenchArgs) -> Result<i32, Failure> {
    let scenario = Scenario::from_json_file(&a.scenario)?;
    if !(a.latency_ms >= 0.0 && a.latency_ms.is_finite()) {
        return Err(Failure::Invalid(format!("--latency-ms must be >= 0, got {}", a.latency_ms)));
    }
    let mut setup = ScenarioSetup::new(scenario);
    setup.detector.latency_model_ms = a.latency_ms;
    let mut config = PipelineConfig::new(&setup.camera_id, setup.scenario.profile_mm, ClockMode::Wall);
    if a.acq_capacity.is_some() || a.drop_oldest {
        config.acquisition_queue = QueueSpec {
            capacity: a.acq_capacity.unwrap_or(config.acquisition_queue.capacity),
            policy: if a.drop_oldest { QueuePolicy::DropOldest } else { QueuePolicy::Block },
        };
    }
    let mut sinks = Sinks::scratch(DebounceRule::default());
    if let Some(path) = &a.metrics {
        sinks.metrics = std::sync::Arc::new(millwatch_core::alertstore::MetricSink::file(path)?);
    }
    let report: LatencyReport = measure(&setup, &config, a.frames, &sinks)?;
    emit(&report, None)?;
    Ok(if report.failed { 2 } else { 0 })
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<i32, Failure> {
    if !(a.window_s >= 0.0 && a.window_s.is_finite()) {
        return Err(Failure::Invalid(format!("--window-s must be >= 0, got {}", a.window_s)));
    }
    let alerts: Vec<Alert> = read_records(&a.alerts)?;
    let truth: Vec<TruthEvent> = read_records(&a.truth)?;
    emit(&evaluate(&alerts, &truth, a.window_s), None)?;
    Ok(0)
}

fn cmd_truth(a: TruthArgs) -> Result<i32, Failure> {
    let scenario = Scenario::from_json_file(&a.scenario)?;
    let p = AnalyticsParams::default();
    let billet = BilletExpectation {
        nominal_s: p.nominal_billet_s,
        short_factor: p.short_factor,
        long_factor: p.long_factor,
    };
    emit(&truth_events(&scenario, DEFAULT_START_TS, a.camera.as_deref(), billet), None)?;
    Ok(0)
}

fn cmd_scenario(a: ScenarioArgs) -> Result<i32, Failure> {
    let scenario = match a.preset {
        Preset::Production => scenarios::production(a.seed, DEFAULT_FPS, a.duration_s, 12),
        Preset::Mixed => scenarios::mixed(a.seed, a.anomalies),
        Preset::GateStress => scenarios::gate_stress(a.seed),
        Preset::ShortCut => scenarios::short_billet_during_cut(a.seed),
    };
    scenario.validate()?;
    emit(&scenario, None)?;
    Ok(0)
}

/// A JSON array, or one JSON value per line.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("reading {}: {e}", path.display())))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Failure::Invalid(format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn write_ndjson<T: Serialize>(path: &Path, records: &[T]) -> Result<(), Failure> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("records serialize"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("writing {}: {e}", path.display())))
}
