//! Frame sources: the scenario-scripted synthetic mill and the NDJSON replay
//! reader.
//!
//! A [`Scenario`] is a list of timed [`ScriptEvent`]s. The generator turns it
//! into a frame stream at a fixed rate plus the matching ground truth, and into
//! a process-signal stream. Everything is a pure function of the scenario and
//! its seed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::alertstore::TruthEvent;
use crate::error::{Error, Result};
use crate::types::{
    check_profile, secs_to_ns, AnomalyKind, PixelFormat, ProcessSignals, RawFrame, TimestampNs,
    NANOS_PER_SEC,
};

pub const DEFAULT_FPS: f64 = 45.0;
const DEFAULT_VIBRATION_HZ: f64 = 5.0;
const DEFAULT_FLAPPER_SHIFT_PX: f64 = 40.0;
const DEFAULT_DIVERTER_SHIFT_PX: f64 = 30.0;
const DEFAULT_GHOST_SWING_PX: f64 = 30.0;
const DEFAULT_GHOST_PERIOD_S: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScriptKind {
    BilletPass,
    VibrationBurst,
    FlapperDrift,
    DiverterShift,
    IdleWindow,
    GhostRolling,
    DividingCut,
    CameraDropout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEvent {
    pub kind: ScriptKind,
    pub t_start_s: f64,
    pub t_end_s: f64,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl ScriptEvent {
    pub fn new(kind: ScriptKind, t_start_s: f64, t_end_s: f64) -> Self {
        ScriptEvent {
            kind,
            t_start_s,
            t_end_s,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn param(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    fn start_ns(&self) -> u64 {
        secs_to_ns(self.t_start_s)
    }

    fn end_ns(&self) -> u64 {
        secs_to_ns(self.t_end_s)
    }

    /// Half-open `[t_start, t_end)` membership on scenario-relative ns.
    fn contains_ns(&self, rel_ns: u64) -> bool {
        self.start_ns() <= rel_ns && rel_ns < self.end_ns()
    }

    fn overlaps(&self, other: &ScriptEvent) -> bool {
        self.t_start_s < other.t_end_s && other.t_start_s < self.t_end_s
    }

    fn duration_s(&self) -> f64 {
        self.t_end_s - self.t_start_s
    }
}

fn default_fps() -> f64 {
    DEFAULT_FPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub duration_s: f64,
    pub profile_mm: u32,
    #[serde(default)]
    pub events: Vec<ScriptEvent>,
}

impl Scenario {
    pub fn new(seed: u64, fps: f64, duration_s: f64, profile_mm: u32) -> Self {
        Scenario {
            seed,
            fps,
            duration_s,
            profile_mm,
            events: Vec::new(),
        }
    }

    /// Adds an event, keeping the list sorted by start time.
    pub fn push(&mut self, event: ScriptEvent) {
        let at = self
            .events
            .partition_point(|e| e.t_start_s <= event.t_start_s);
        self.events.insert(at, event);
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Scenario(msg));
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return fail(format!("fps must be > 0, got {}", self.fps));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return fail(format!("duration_s must be > 0, got {}", self.duration_s));
        }
        check_profile(self.profile_mm)?;
        for (i, e) in self.events.iter().enumerate() {
            if !(e.t_start_s.is_finite() && e.t_end_s.is_finite()) || e.t_start_s >= e.t_end_s {
                return fail(format!(
                    "event {i} ({:?}): t_start_s {} must be < t_end_s {}",
                    e.kind, e.t_start_s, e.t_end_s
                ));
            }
            if e.t_start_s < 0.0 || e.t_end_s > self.duration_s {
                return fail(format!(
                    "event {i} ({:?}): window [{}, {}] outside [0, {}]",
                    e.kind, e.t_start_s, e.t_end_s, self.duration_s
                ));
            }
            if let Some(bad) = e.params.iter().find(|(_, v)| !v.is_finite()) {
                return fail(format!("event {i}: param {} is not finite", bad.0));
            }
            if i > 0 && self.events[i - 1].t_start_s > e.t_start_s {
                return fail(format!("events not sorted by start time at index {i}"));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading scenario {}", path.display()), e))?;
        let scenario: Scenario = serde_json::from_str(&text)
            .map_err(|e| Error::json(format!("parsing scenario {}", path.display()), e))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn frame_count(&self) -> u64 {
        (self.fps * self.duration_s).floor() as u64
    }

    /// Frame spacing on the simulated clock.
    pub fn frame_step_ns(&self) -> u64 {
        (NANOS_PER_SEC as f64 / self.fps).round() as u64
    }

    fn events_of(&self, kind: ScriptKind) -> impl Iterator<Item = &ScriptEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

/// Fixed scene layout of the synthetic camera view, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub width: u32,
    pub height: u32,
    pub rod_cx: f64,
    pub rod_baseline_cy: f64,
    pub rod_half: (f64, f64),
    pub flapper_baseline: (f64, f64),
    pub flapper_half: (f64, f64),
    pub diverter_reference_x: f64,
    pub diverter_y: f64,
    pub diverter_half: (f64, f64),
}

impl Default for SceneGeometry {
    fn default() -> Self {
        SceneGeometry {
            width: 640,
            height: 480,
            rod_cx: 320.0,
            rod_baseline_cy: 240.0,
            rod_half: (100.0, 10.0),
            flapper_baseline: (100.0, 400.0),
            flapper_half: (15.0, 15.0),
            diverter_reference_x: 500.0,
            diverter_y: 100.0,
            diverter_half: (15.0, 15.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub frame_seq: u64,
    pub rod_present: bool,
    pub rod_center: Option<(f64, f64)>,
    pub flapper_pos: (f64, f64),
    pub diverter_x: f64,
    pub active_event_kinds: BTreeSet<ScriptKind>,
}

/// One acquired frame with its ground truth and camera telemetry; this is
/// also the line format of replay and clip files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquiredFrame {
    pub frame: RawFrame,
    pub truth: GroundTruthRecord,
    pub camera_temp_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconnectRecord {
    pub camera_id: String,
    pub ts: TimestampNs,
    pub missed_frames: u64,
    pub first_missed_seq: u64,
    pub resumed_seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceItem {
    Frame(Box<AcquiredFrame>),
    Reconnect(ReconnectRecord),
}

impl SourceItem {
    pub fn as_frame(&self) -> Option<&AcquiredFrame> {
        match self {
            SourceItem::Frame(f) => Some(f),
            SourceItem::Reconnect(_) => None,
        }
    }
}

pub type BoxedSource = Box<dyn Iterator<Item = SourceItem> + Send>;

#[derive(Debug, Clone)]
pub struct StreamOptions {
    pub camera_id: String,
    pub start_ts: TimestampNs,
    /// Emit real BayerRG8 rasters instead of descriptor-only frames.
    pub render: bool,
    pub geometry: SceneGeometry,
}

impl StreamOptions {
    pub fn new(camera_id: &str, start_ts: TimestampNs) -> Self {
        StreamOptions {
            camera_id: camera_id.to_string(),
            start_ts,
            render: false,
            geometry: SceneGeometry::default(),
        }
    }
}

/// Iterator over the synthetic frames of a scenario.
pub struct FrameStream {
    scenario: Arc<Scenario>,
    opts: StreamOptions,
    next_seq: u64,
    count: u64,
    step_ns: u64,
}

/// Generates `floor(fps * duration_s)` frames with their ground truth.
pub fn gen_stream(scenario: &Scenario, opts: StreamOptions) -> Result<FrameStream> {
    scenario.validate()?;
    Ok(FrameStream {
        count: scenario.frame_count(),
        step_ns: scenario.frame_step_ns(),
        scenario: Arc::new(scenario.clone()),
        opts,
        next_seq: 0,
    })
}

impl Iterator for FrameStream {
    type Item = AcquiredFrame;

    fn next(&mut self) -> Option<AcquiredFrame> {
        if self.next_seq >= self.count {
            return None;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        Some(synth_frame(&self.scenario, &self.opts, seq, self.step_ns))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.count - self.next_seq) as usize;
        (left, Some(left))
    }
}

fn synth_frame(scenario: &Scenario, opts: &StreamOptions, seq: u64, step_ns: u64) -> AcquiredFrame {
    let rel_ns = seq * step_ns;
    let t = rel_ns as f64 / NANOS_PER_SEC as f64;
    let g = &opts.geometry;
    let active: Vec<&ScriptEvent> = scenario
        .events
        .iter()
        .filter(|e| e.contains_ns(rel_ns))
        .collect();
    let active_kinds: BTreeSet<ScriptKind> = active.iter().map(|e| e.kind).collect();

    let rod_present = active_kinds.contains(&ScriptKind::BilletPass);
    let rod_center = rod_present.then(|| {
        let offset: f64 = active
            .iter()
            .filter(|e| e.kind == ScriptKind::VibrationBurst)
            .map(|e| {
                let amp = e.param("amplitude_px", 0.0);
                let hz = e.param("freq_hz", DEFAULT_VIBRATION_HZ);
                amp * (2.0 * PI * hz * (t - e.t_start_s)).sin()
            })
            .sum();
        (g.rod_cx, g.rod_baseline_cy + offset)
    });

    let mut flapper = g.flapper_baseline;
    let mut diverter_x = g.diverter_reference_x;
    for e in &active {
        match e.kind {
            ScriptKind::FlapperDrift => {
                let ramp = ramp_factor(e, t);
                flapper.0 += ramp * e.param("shift_px", DEFAULT_FLAPPER_SHIFT_PX);
                flapper.1 += ramp * e.param("dy_px", 0.0);
            }
            ScriptKind::DiverterShift => {
                diverter_x += ramp_factor(e, t) * e.param("shift_px", DEFAULT_DIVERTER_SHIFT_PX);
            }
            ScriptKind::GhostRolling => {
                // equipment exercised without material
                let swing = e.param("swing_px", DEFAULT_GHOST_SWING_PX);
                let period = e.param("period_s", DEFAULT_GHOST_PERIOD_S).max(1e-3);
                let s = swing * (2.0 * PI * (t - e.t_start_s) / period).sin();
                flapper.0 += s;
                diverter_x += s;
            }
            _ => {}
        }
    }

    let truth = GroundTruthRecord {
        frame_seq: seq,
        rod_present,
        rod_center,
        flapper_pos: flapper,
        diverter_x,
        active_event_kinds: active_kinds,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x7e3a_5c1f_0d2b_9e47);
    rng.set_stream(seq);
    let jitter = Normal::new(0.0, 0.05).expect("valid sigma").sample(&mut rng);
    let camera_temp_c = 38.0 + 4.0 * (2.0 * PI * t / 900.0).sin() + jitter;

    let data = opts.render.then(|| render_bayer(g, &truth));
    let frame = RawFrame {
        camera_id: opts.camera_id.clone(),
        seq,
        ts_acquire: opts.start_ts + rel_ns,
        width: g.width,
        height: g.height,
        pixel_format: PixelFormat::BayerRG8,
        data,
        profile_mm: scenario.profile_mm,
    };
    AcquiredFrame {
        frame,
        truth,
        camera_temp_c,
    }
}

fn ramp_factor(e: &ScriptEvent, t: f64) -> f64 {
    let ramp = e.param("ramp_s", 0.0);
    if ramp <= 0.0 {
        1.0
    } else {
        ((t - e.t_start_s) / ramp).clamp(0.0, 1.0)
    }
}

const BACKGROUND: [u8; 3] = [40, 40, 40];
const ROD_RGB: [u8; 3] = [255, 140, 0];
const FLAPPER_RGB: [u8; 3] = [0, 200, 0];
const DIVERTER_RGB: [u8; 3] = [0, 120, 255];

/// Draws the scene and samples it through an RGGB color filter array.
fn render_bayer(g: &SceneGeometry, truth: &GroundTruthRecord) -> Arc<[u8]> {
    let (w, h) = (g.width as usize, g.height as usize);
    let mut rgb = vec![BACKGROUND; w * h];
    let mut fill = |cx: f64, cy: f64, half: (f64, f64), color: [u8; 3]| {
        let x0 = (cx - half.0).max(0.0) as usize;
        let x1 = ((cx + half.0).max(0.0) as usize).min(w);
        let y0 = (cy - half.1).max(0.0) as usize;
        let y1 = ((cy + half.1).max(0.0) as usize).min(h);
        for y in y0..y1 {
            for px in &mut rgb[y * w + x0.min(x1)..y * w + x1] {
                *px = color;
            }
        }
    };
    fill(truth.diverter_x, g.diverter_y, g.diverter_half, DIVERTER_RGB);
    fill(truth.flapper_pos.0, truth.flapper_pos.1, g.flapper_half, FLAPPER_RGB);
    if let Some((cx, cy)) = truth.rod_center {
        fill(cx, cy, g.rod_half, ROD_RGB);
    }
    let mut bayer = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let channel = match (y % 2, x % 2) {
                (0, 0) => 0,
                (1, 1) => 2,
                _ => 1,
            };
            bayer.push(rgb[y * w + x][channel]);
        }
    }
    Arc::from(bayer)
}

/// Camera dropout window in absolute time, half-open.
#[derive(Debug, Clone, Copy)]
pub struct DropoutWindow {
    pub from: TimestampNs,
    pub until: TimestampNs,
}

impl DropoutWindow {
    pub fn from_event(event: &ScriptEvent, start_ts: TimestampNs) -> Self {
        DropoutWindow {
            from: start_ts + event.start_ns(),
            until: start_ts + event.end_ns(),
        }
    }
}

/// Removes the frames inside a dropout window and emits a reconnect record
/// before the first frame after it (or at the end of the stream).
pub struct Dropout<I> {
    inner: I,
    window: DropoutWindow,
    camera_id: String,
    pending: Option<SourceItem>,
    missed: u64,
    first_missed: Option<u64>,
    reported: bool,
}

pub fn simulate_dropout<I: Iterator<Item = SourceItem>>(
    stream: I,
    window: DropoutWindow,
    camera_id: &str,
) -> Dropout<I> {
    Dropout {
        inner: stream,
        window,
        camera_id: camera_id.to_string(),
        pending: None,
        missed: 0,
        first_missed: None,
        reported: false,
    }
}

impl<I: Iterator<Item = SourceItem>> Dropout<I> {
    fn reconnect(&mut self, ts: TimestampNs, resumed_seq: Option<u64>) -> SourceItem {
        self.reported = true;
        log::info!(
            "camera {} reconnected after {} missed frames",
            self.camera_id,
            self.missed
        );
        SourceItem::Reconnect(ReconnectRecord {
            camera_id: self.camera_id.clone(),
            ts,
            missed_frames: self.missed,
            first_missed_seq: self.first_missed.unwrap_or(0),
            resumed_seq,
        })
    }
}

impl<I: Iterator<Item = SourceItem>> Iterator for Dropout<I> {
    type Item = SourceItem;

    fn next(&mut self) -> Option<SourceItem> {
        if let Some(item) = self.pending.take() {
            return Some(item);
        }
        loop {
            match self.inner.next() {
                Some(SourceItem::Frame(f)) => {
                    let ts = f.frame.ts_acquire;
                    if self.window.from <= ts && ts < self.window.until {
                        self.missed += 1;
                        self.first_missed.get_or_insert(f.frame.seq);
                        continue;
                    }
                    if self.missed > 0 && !self.reported && ts >= self.window.until {
                        let seq = f.frame.seq;
                        self.pending = Some(SourceItem::Frame(f));
                        return Some(self.reconnect(ts, Some(seq)));
                    }
                    return Some(SourceItem::Frame(f));
                }
                Some(other) => return Some(other),
                None => {
                    if self.missed > 0 && !self.reported {
                        let ts = self.window.until;
                        return Some(self.reconnect(ts, None));
                    }
                    return None;
                }
            }
        }
    }
}

/// Full synthetic camera: the frame stream with every scripted dropout applied.
pub fn synthetic_source(scenario: &Scenario, opts: StreamOptions) -> Result<BoxedSource> {
    let start = opts.start_ts;
    let camera = opts.camera_id.clone();
    let mut source: BoxedSource = Box::new(
        gen_stream(scenario, opts)?.map(|f| SourceItem::Frame(Box::new(f))),
    );
    for event in scenario.events_of(ScriptKind::CameraDropout) {
        let window = DropoutWindow::from_event(event, start);
        source = Box::new(simulate_dropout(source, window, &camera));
    }
    Ok(source)
}

/// Process-signal snapshots: one per simulated second, plus one at every
/// idle/ghost/cut window boundary so the gate switches on the exact edge.
pub fn gen_signals(scenario: &Scenario, start_ts: TimestampNs) -> Result<Vec<ProcessSignals>> {
    scenario.validate()?;
    let duration_ns = secs_to_ns(scenario.duration_s);
    let mut times: BTreeSet<u64> = (0..)
        .map(|s: u64| s * NANOS_PER_SEC)
        .take_while(|&t| t < duration_ns)
        .collect();
    for e in &scenario.events {
        if matches!(
            e.kind,
            ScriptKind::IdleWindow | ScriptKind::GhostRolling | ScriptKind::DividingCut
        ) {
            times.extend([e.start_ns(), e.end_ns()].into_iter().filter(|&t| t < duration_ns));
        }
    }
    Ok(times
        .into_iter()
        .map(|rel| {
            let active = |kind| scenario.events_of(kind).any(|e| e.contains_ns(rel));
            let idle = active(ScriptKind::IdleWindow);
            let ghost = active(ScriptKind::GhostRolling);
            let cut_end = scenario
                .events_of(ScriptKind::DividingCut)
                .filter(|e| e.contains_ns(rel))
                .map(|e| e.end_ns())
                .max();
            ProcessSignals {
                mill_running: !idle,
                ghost_rolling: ghost,
                material_present: !(idle || ghost),
                dividing_cut_active: cut_end.is_some(),
                dividing_cut_until: cut_end.map_or(0, |end| start_ts + end),
                signal_ts: start_ts + rel,
            }
        })
        .collect())
}

/// How billet durations are judged, used to derive billet-length ground truth.
#[derive(Debug, Clone, Copy)]
pub struct BilletExpectation {
    pub nominal_s: f64,
    pub short_factor: f64,
    pub long_factor: f64,
}

/// Scripted anomalies an ideal system should alert on.
///
/// Vibration needs a rod in view, so bursts outside every billet pass are
/// dropped. Billet-length anomalies explained by a dividing cut are not
/// anomalies. Anything entirely inside an idle or ghost-rolling window is
/// dropped because the gate pauses analytics there.
pub fn truth_events(
    scenario: &Scenario,
    start_ts: TimestampNs,
    camera_id: Option<&str>,
    billet: BilletExpectation,
) -> Vec<TruthEvent> {
    let paused: Vec<&ScriptEvent> = scenario
        .events
        .iter()
        .filter(|e| matches!(e.kind, ScriptKind::IdleWindow | ScriptKind::GhostRolling))
        .collect();
    let inside_pause = |e: &ScriptEvent| {
        paused
            .iter()
            .any(|p| p.t_start_s <= e.t_start_s && e.t_end_s <= p.t_end_s)
    };
    let mut out = Vec::new();
    for e in &scenario.events {
        let kind = match e.kind {
            ScriptKind::VibrationBurst => {
                let visible = scenario
                    .events_of(ScriptKind::BilletPass)
                    .any(|b| b.overlaps(e));
                visible.then_some(AnomalyKind::Vibration)
            }
            ScriptKind::FlapperDrift => Some(AnomalyKind::FlapperDeviation),
            ScriptKind::DiverterShift => Some(AnomalyKind::DiverterShift),
            ScriptKind::BilletPass => {
                let cut = scenario
                    .events_of(ScriptKind::DividingCut)
                    .any(|c| c.overlaps(e));
                let d = e.duration_s();
                if cut {
                    None
                } else if d < billet.short_factor * billet.nominal_s {
                    Some(AnomalyKind::ShortMetal)
                } else if d > billet.long_factor * billet.nominal_s {
                    Some(AnomalyKind::AbnormalBilletDuration)
                } else {
                    None
                }
            }
            _ => None,
        };
        if let Some(kind) = kind {
            if !inside_pause(e) {
                out.push(TruthEvent {
                    kind,
                    camera_id: camera_id.map(str::to_string),
                    t_start: start_ts + e.start_ns(),
                    t_end: start_ts + e.end_ns(),
                });
            }
        }
    }
    out.sort_by_key(|t| (t.t_start, t.kind));
    out
}

/// Writes frames in the canonical one-object-per-line replay format.
pub fn write_replay<'a>(
    path: &Path,
    frames: impl IntoIterator<Item = &'a AcquiredFrame>,
) -> Result<usize> {
    let file = File::create(path)
        .map_err(|e| Error::io(format!("creating replay {}", path.display()), e))?;
    let mut out = BufWriter::new(file);
    let mut n = 0;
    for f in frames {
        serde_json::to_writer(&mut out, f)
            .map_err(|e| Error::json(format!("writing replay {}", path.display()), e))?;
        out.write_all(b"\n")
            .map_err(|e| Error::io(format!("writing replay {}", path.display()), e))?;
        n += 1;
    }
    out.flush()
        .map_err(|e| Error::io(format!("writing replay {}", path.display()), e))?;
    Ok(n)
}

/// Streaming reader for replay files; checks per-camera seq monotonicity.
pub struct ReplayReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    last_seq: HashMap<String, u64>,
    failed: bool,
}

pub fn read_replay(path: &Path) -> Result<ReplayReader> {
    let file =
        File::open(path).map_err(|e| Error::io(format!("opening replay {}", path.display()), e))?;
    Ok(ReplayReader {
        path: path.to_path_buf(),
        lines: BufReader::new(file).lines(),
        line_no: 0,
        last_seq: HashMap::new(),
        failed: false,
    })
}

impl Iterator for ReplayReader {
    type Item = Result<AcquiredFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let result = line
                .map_err(|e| Error::Replay {
                    path: self.path.clone(),
                    line: self.line_no,
                    message: e.to_string(),
                })
                .and_then(|text| {
                    if text.trim().is_empty() {
                        return Ok(None);
                    }
                    serde_json::from_str::<AcquiredFrame>(&text)
                        .map(Some)
                        .map_err(|e| Error::Replay {
                            path: self.path.clone(),
                            line: self.line_no,
                            message: e.to_string(),
                        })
                })
                .and_then(|rec| match rec {
                    Some(rec) => self.check_seq(rec).map(Some),
                    None => Ok(None),
                });
            match result {
                Ok(None) => continue,
                Ok(Some(rec)) => return Some(Ok(rec)),
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

impl ReplayReader {
    fn check_seq(&mut self, rec: AcquiredFrame) -> Result<AcquiredFrame> {
        let cam = &rec.frame.camera_id;
        if let Some(&previous) = self.last_seq.get(cam) {
            if rec.frame.seq <= previous {
                return Err(Error::SeqRegression {
                    path: self.path.clone(),
                    line: self.line_no,
                    camera_id: cam.clone(),
                    previous,
                    seq: rec.frame.seq,
                });
            }
        }
        self.last_seq.insert(cam.clone(), rec.frame.seq);
        Ok(rec)
    }
}

/// Replay file as a pipeline source. Read errors end the stream and are
/// reported through the returned slot.
pub fn replay_source(path: &Path) -> Result<(BoxedSource, Arc<parking_lot::Mutex<Option<Error>>>)> {
    let reader = read_replay(path)?;
    let error = Arc::new(parking_lot::Mutex::new(None));
    let slot = Arc::clone(&error);
    let iter = reader.map_while(move |r| match r {
        Ok(f) => Some(SourceItem::Frame(Box::new(f))),
        Err(e) => {
            *slot.lock() = Some(e);
            None
        }
    });
    Ok((Box::new(iter), error))
}
