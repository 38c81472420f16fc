//! Run configuration: one JSON document, validated in a single pass so every
//! problem is reported at once, each naming the key at fault.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use millwatch_core::alertstore::DEFAULT_MATCH_WINDOW_S;
use millwatch_core::analytics::AnalyticsParams;
use millwatch_core::detect::{DetectorSpec, ModelRegistry, OracleNoise};
use millwatch_core::fusion::FusionConfig;
use millwatch_core::pipeline::{CameraCalibration, ClockMode, QueueSpec, DEFAULT_CLIP_LEN_S};
use millwatch_core::simsource::Scenario;

pub const CONFIG_ENV: &str = "MILLWATCH_CONFIG";

#[derive(Debug)]
pub enum ConfigError {
    Read { path: PathBuf, message: String },
    Invalid { path: PathBuf, problems: Vec<String> },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Read { path, message } => write!(f, "cannot read config {}: {message}", path.display()),
            ConfigError::Invalid { path, problems } => {
                write!(f, "invalid config {} ({} problems):", path.display(), problems.len())?;
                for p in problems {
                    write!(f, "\n  - {p}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

/// Where a camera's frames come from: `synth:<scenario.json>` or `replay:<frames.ndjson>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SourceSpec {
    Synth(PathBuf),
    Replay(PathBuf),
}

impl SourceSpec {
    pub fn path(&self) -> &Path {
        match self {
            SourceSpec::Synth(p) | SourceSpec::Replay(p) => p,
        }
    }

    fn with_path(&self, path: PathBuf) -> SourceSpec {
        match self {
            SourceSpec::Synth(_) => SourceSpec::Synth(path),
            SourceSpec::Replay(_) => SourceSpec::Replay(path),
        }
    }
}

impl FromStr for SourceSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            Some(("synth", p)) if !p.is_empty() => Ok(SourceSpec::Synth(p.into())),
            Some(("replay", p)) if !p.is_empty() => Ok(SourceSpec::Replay(p.into())),
            _ => Err(format!("source {s:?} must be synth:<scenario file> or replay:<ndjson file>")),
        }
    }
}

impl TryFrom<String> for SourceSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<SourceSpec> for String {
    fn from(s: SourceSpec) -> String {
        s.to_string()
    }
}

impl fmt::Display for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceSpec::Synth(p) => write!(f, "synth:{}", p.display()),
            SourceSpec::Replay(p) => write!(f, "replay:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub camera_id: String,
    pub source: SourceSpec,
    pub profile_mm: u32,
    pub calibration: CameraCalibration,
    pub thresholds: AnalyticsParams,
    pub noise: OracleNoise,
    /// Synthesize real Bayer rasters instead of descriptor frames.
    pub render: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueConfig {
    pub acquisition: QueueSpec,
    pub analytics: QueueSpec,
    pub storage: QueueSpec,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            acquisition: QueueSpec::drop_oldest(),
            analytics: QueueSpec::block(),
            storage: QueueSpec::block(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSettings {
    pub root: PathBuf,
    pub clip_len_s: f64,
    pub store_pixels: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SinkPaths {
    pub alerts: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    /// Signals scripted in each synthetic camera's scenario.
    Scripted,
    /// NDJSON ProcessSignals from TCP clients connecting to `bind`.
    Tcp { bind: String },
    /// No process signals: analytics always active.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    pub bind: String,
    /// Upper bound on frames per second sent to each stream client.
    #[serde(default = "default_stream_fps")]
    pub stream_fps: f64,
}

fn default_stream_fps() -> f64 {
    15.0
}

impl HttpConfig {
    pub fn new(bind: &str) -> Self {
        HttpConfig {
            bind: bind.to_string(),
            stream_fps: default_stream_fps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub cameras: Vec<CameraConfig>,
    pub models: Vec<DetectorSpec>,
    pub clock: ClockMode,
    pub queues: QueueConfig,
    pub clips: Option<ClipSettings>,
    pub sinks: SinkPaths,
    pub debounce_s: f64,
    pub match_window_s: f64,
    pub fusion: FusionConfig,
    pub signals: SignalSpec,
    pub http: Option<HttpConfig>,
    pub warmup_frames: usize,
}

impl RunConfig {
    pub fn registry(&self) -> ModelRegistry {
        ModelRegistry::new(self.models.clone()).expect("validated at load")
    }
}

const TOP_KEYS: &[&str] = &[
    "seed",
    "cameras",
    "models",
    "clock",
    "queues",
    "clips",
    "sinks",
    "debounce_s",
    "match_window_s",
    "fusion",
    "signals",
    "http",
    "warmup_frames",
];
const TOP_REQUIRED: &[&str] = &["cameras"];
const CAMERA_KEYS: &[&str] = &[
    "camera_id",
    "source",
    "profile_mm",
    "calibration",
    "thresholds",
    "noise",
    "render",
];
const CAMERA_REQUIRED: &[&str] = &["camera_id", "source", "profile_mm"];
const QUEUE_KEYS: &[&str] = &["acquisition", "analytics", "storage"];
const CLIP_KEYS: &[&str] = &["root", "clip_len_s", "store_pixels"];
const CLIP_REQUIRED: &[&str] = &["root"];
const SINK_KEYS: &[&str] = &["alerts", "metrics"];

/// Collects every problem found while reading the document.
struct Checker {
    problems: Vec<String>,
}

impl Checker {
    fn object<'a>(&mut self, value: &'a Value, path: &str, known: &[&str], required: &[&str]) -> Option<&'a Map<String, Value>> {
        let Some(obj) = value.as_object() else {
            self.problems.push(format!("{}: expected an object", display_path(path)));
            return None;
        };
        for key in obj.keys().filter(|k| !known.contains(&k.as_str())) {
            self.problems.push(format!("{}: unknown key", join(path, key)));
        }
        for key in required.iter().filter(|k| obj.get(**k).is_none_or(Value::is_null)) {
            self.problems.push(format!("{}: missing required key", join(path, key)));
        }
        Some(obj)
    }

    /// The value at `key` if present and well-typed; problems are recorded.
    fn field<T: DeserializeOwned>(&mut self, obj: &Map<String, Value>, path: &str, key: &str) -> Option<T> {
        let value = obj.get(key).filter(|v| !v.is_null())?;
        match serde_json::from_value(value.clone()) {
            Ok(v) => Some(v),
            Err(e) => {
                self.problems.push(format!("{}: {e}", join(path, key)));
                None
            }
        }
    }

    fn require(&mut self, ok: bool, key: String, message: impl fmt::Display) {
        if !ok {
            self.problems.push(format!("{key}: {message}"));
        }
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn display_path(path: &str) -> &str {
    if path.is_empty() {
        "(top level)"
    } else {
        path
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
    parse_config(&text, &base).map_err(|problems| ConfigError::Invalid {
        path: path.to_path_buf(),
        problems,
    })
}

/// Parses and validates a config; relative paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<RunConfig, Vec<String>> {
    let doc: Value = serde_json::from_str(text).map_err(|e| vec![format!("not valid JSON: {e}")])?;
    let mut c = Checker { problems: Vec::new() };
    let Some(top) = c.object(&doc, "", TOP_KEYS, TOP_REQUIRED) else {
        return Err(c.problems);
    };

    let seed: u64 = c.field(top, "", "seed").unwrap_or(0);
    let models: Vec<DetectorSpec> = c
        .field(top, "", "models")
        .unwrap_or_else(|| ModelRegistry::single_oracle().specs().to_vec());
    let registry = match ModelRegistry::new(models.clone()) {
        Ok(r) => Some(r),
        Err(e) => {
            c.problems.push(format!("models: {e}"));
            None
        }
    };

    let mut cameras = Vec::new();
    match top.get("cameras") {
        Some(Value::Array(items)) => {
            c.require(!items.is_empty(), "cameras".into(), "at least one camera is required");
            for (i, item) in items.iter().enumerate() {
                let path = format!("cameras[{i}]");
                if let Some(cam) = camera(&mut c, item, &path, seed, base, registry.as_ref()) {
                    cameras.push(cam);
                }
            }
        }
        Some(_) => c.problems.push("cameras: expected an array".into()),
        None => {}
    }
    let mut seen = BTreeSet::new();
    for cam in &cameras {
        if !seen.insert(cam.camera_id.as_str()) {
            c.problems.push(format!("cameras: duplicate camera_id {:?}", cam.camera_id));
        }
    }

    let clock = c.field(top, "", "clock").unwrap_or(ClockMode::Wall);
    let mut queues = QueueConfig::default();
    if let Some(v) = top.get("queues").filter(|v| !v.is_null()) {
        if let Some(obj) = c.object(v, "queues", QUEUE_KEYS, &[]) {
            for (key, slot) in [
                ("acquisition", &mut queues.acquisition),
                ("analytics", &mut queues.analytics),
                ("storage", &mut queues.storage),
            ] {
                if let Some(spec) = c.field::<QueueSpec>(obj, "queues", key) {
                    c.require(spec.capacity > 0, format!("queues.{key}.capacity"), "must be > 0");
                    *slot = spec;
                }
            }
        }
    }

    let clips = top.get("clips").filter(|v| !v.is_null()).and_then(|v| {
        let obj = c.object(v, "clips", CLIP_KEYS, CLIP_REQUIRED)?;
        let root: PathBuf = c.field(obj, "clips", "root")?;
        let clip_len_s: f64 = c.field(obj, "clips", "clip_len_s").unwrap_or(DEFAULT_CLIP_LEN_S);
        c.require(clip_len_s > 0.0 && clip_len_s.is_finite(), "clips.clip_len_s".into(), format!("must be > 0, got {clip_len_s}"));
        Some(ClipSettings {
            root: resolve(base, &root),
            clip_len_s,
            store_pixels: c.field(obj, "clips", "store_pixels").unwrap_or(false),
        })
    });

    let mut sinks = SinkPaths::default();
    if let Some(v) = top.get("sinks").filter(|v| !v.is_null()) {
        if let Some(obj) = c.object(v, "sinks", SINK_KEYS, &[]) {
            sinks.alerts = c.field::<PathBuf>(obj, "sinks", "alerts").map(|p| resolve(base, &p));
            sinks.metrics = c.field::<PathBuf>(obj, "sinks", "metrics").map(|p| resolve(base, &p));
        }
    }

    let debounce_s: f64 = c.field(top, "", "debounce_s").unwrap_or(10.0);
    c.require(debounce_s > 0.0 && debounce_s.is_finite(), "debounce_s".into(), format!("must be > 0, got {debounce_s}"));
    let match_window_s: f64 = c.field(top, "", "match_window_s").unwrap_or(DEFAULT_MATCH_WINDOW_S);
    c.require(match_window_s >= 0.0 && match_window_s.is_finite(), "match_window_s".into(), format!("must be >= 0, got {match_window_s}"));

    let fusion: FusionConfig = c.field(top, "", "fusion").unwrap_or_default();
    c.require(fusion.grace_s >= 0.0 && fusion.grace_s.is_finite(), "fusion.grace_s".into(), format!("must be >= 0, got {}", fusion.grace_s));
    c.require(fusion.staleness_limit_s > 0.0, "fusion.staleness_limit_s".into(), format!("must be > 0, got {}", fusion.staleness_limit_s));

    let signals: SignalSpec = c.field(top, "", "signals").unwrap_or(SignalSpec::Scripted);
    let http: Option<HttpConfig> = c.field(top, "", "http");
    if let Some(h) = &http {
        c.require(h.stream_fps > 0.0 && h.stream_fps.is_finite(), "http.stream_fps".into(), format!("must be > 0, got {}", h.stream_fps));
    }
    let warmup_frames = c.field(top, "", "warmup_frames").unwrap_or(0);

    if !c.problems.is_empty() {
        return Err(c.problems);
    }
    Ok(RunConfig {
        seed,
        cameras,
        models,
        clock,
        queues,
        clips,
        sinks,
        debounce_s,
        match_window_s,
        fusion,
        signals,
        http,
        warmup_frames,
    })
}

fn camera(
    c: &mut Checker,
    value: &Value,
    path: &str,
    seed: u64,
    base: &Path,
    registry: Option<&ModelRegistry>,
) -> Option<CameraConfig> {
    let obj = c.object(value, path, CAMERA_KEYS, CAMERA_REQUIRED)?;
    let camera_id: Option<String> = c.field(obj, path, "camera_id");
    if let Some(id) = &camera_id {
        let ok = !id.is_empty() && id.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '-' || ch == '_');
        c.require(ok, join(path, "camera_id"), format!("{id:?} must be non-empty ASCII letters, digits, '-' or '_'"));
    }
    let source: Option<SourceSpec> = c.field(obj, path, "source");
    let profile_mm: Option<u32> = c.field(obj, path, "profile_mm");
    let calibration: CameraCalibration = c.field(obj, path, "calibration").unwrap_or_default();
    let thresholds: AnalyticsParams = c.field(obj, path, "thresholds").unwrap_or_default();
    let noise: OracleNoise = c.field(obj, path, "noise").unwrap_or(OracleNoise {
        seed,
        ..OracleNoise::none()
    });
    let render: bool = c.field(obj, path, "render").unwrap_or(false);

    if let Err(e) = thresholds.validate() {
        c.problems.push(format!("{}: {e}", join(path, "thresholds")));
    }
    if let Err(e) = noise.validate() {
        c.problems.push(format!("{}: {e}", join(path, "noise")));
    }
    c.require(
        calibration.mm_per_px > 0.0 && calibration.mm_per_px.is_finite(),
        join(path, "calibration.mm_per_px"),
        format!("must be > 0, got {}", calibration.mm_per_px),
    );
    if let (Some(p), Some(reg)) = (profile_mm, registry) {
        if let Err(e) = reg.select_model(p) {
            c.problems.push(format!("{}: {e}", join(path, "profile_mm")));
        }
    }

    let source = source.map(|s| {
        let resolved = resolve(base, s.path());
        if !resolved.is_file() {
            c.problems.push(format!("{}: file {} does not exist", join(path, "source"), resolved.display()));
        } else if let SourceSpec::Synth(_) = s {
            match Scenario::from_json_file(&resolved) {
                Ok(sc) => {
                    if let Some(p) = profile_mm.filter(|&p| p != sc.profile_mm) {
                        c.problems.push(format!(
                            "{}: {p} mm does not match the scenario's {} mm",
                            join(path, "profile_mm"),
                            sc.profile_mm
                        ));
                    }
                }
                Err(e) => c.problems.push(format!("{}: {e}", join(path, "source"))),
            }
        }
        s.with_path(resolved)
    });

    Some(CameraConfig {
        camera_id: camera_id?,
        source: source?,
        profile_mm: profile_mm?,
        calibration,
        thresholds,
        noise,
        render,
    })
}

/// Config path from the command line, else from `MILLWATCH_CONFIG`.
pub fn config_path(cli: Option<PathBuf>) -> Option<PathBuf> {
    cli.or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
}
