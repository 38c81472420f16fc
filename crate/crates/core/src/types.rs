//! Domain types shared by every stage.
//!
//! All of them are immutable once built. Constructors enforce the invariants,
//! and deserialization goes through the same constructors, so a value that
//! crosses a module boundary (or a file) is always valid.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer nanoseconds since the Unix epoch.
pub type TimestampNs = u64;

pub const NANOS_PER_SEC: u64 = 1_000_000_000;

/// Rod profiles the mill rolls.
pub const ROD_PROFILES_MM: [u32; 5] = [10, 12, 16, 20, 40];

pub fn secs_to_ns(secs: f64) -> u64 {
    (secs * NANOS_PER_SEC as f64).round().max(0.0) as u64
}

pub fn ns_to_secs(ns: u64) -> f64 {
    ns as f64 / NANOS_PER_SEC as f64
}

pub fn check_profile(profile_mm: u32) -> Result<()> {
    if ROD_PROFILES_MM.contains(&profile_mm) {
        Ok(())
    } else {
        Err(Error::UnsupportedProfile(profile_mm))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelFormat {
    BayerRG8,
    RGB8,
}

impl PixelFormat {
    pub fn bytes_per_pixel(self) -> usize {
        match self {
            PixelFormat::BayerRG8 => 1,
            PixelFormat::RGB8 => 3,
        }
    }
}

mod opt_base64 {
    use std::sync::Arc;

    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(data: &Option<Arc<[u8]>>, s: S) -> Result<S::Ok, S::Error> {
        match data {
            Some(bytes) => s.serialize_str(&STANDARD.encode(bytes)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Arc<[u8]>>, D::Error> {
        let encoded: Option<String> = Option::deserialize(d)?;
        encoded
            .map(|text| {
                STANDARD
                    .decode(text.as_bytes())
                    .map(Arc::from)
                    .map_err(serde::de::Error::custom)
            })
            .transpose()
    }
}

/// A frame as handed over by a camera or a replay file, before validation.
///
/// `data` is `None` for descriptor-only frames, whose content is carried by
/// the accompanying ground truth instead of pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFrame {
    pub camera_id: String,
    pub seq: u64,
    pub ts_acquire: TimestampNs,
    pub width: u32,
    pub height: u32,
    pub pixel_format: PixelFormat,
    #[serde(with = "opt_base64", default)]
    pub data: Option<Arc<[u8]>>,
    pub profile_mm: u32,
}

/// A validated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFrame")]
pub struct Frame {
    camera_id: String,
    seq: u64,
    ts_acquire: TimestampNs,
    width: u32,
    height: u32,
    pixel_format: PixelFormat,
    #[serde(with = "opt_base64")]
    data: Option<Arc<[u8]>>,
    profile_mm: u32,
}

/// Checks that a raw frame is non-empty and its byte count matches its
/// pixel format and dimensions.
pub fn validate_format(raw: &RawFrame) -> Result<()> {
    if raw.width == 0 || raw.height == 0 {
        return Err(Error::EmptyFrame {
            width: raw.width,
            height: raw.height,
        });
    }
    if let Some(data) = &raw.data {
        let expected =
            raw.width as usize * raw.height as usize * raw.pixel_format.bytes_per_pixel();
        if data.len() != expected {
            return Err(Error::FormatMismatch {
                format: raw.pixel_format,
                width: raw.width,
                height: raw.height,
                expected,
                actual: data.len(),
            });
        }
    }
    Ok(())
}

impl TryFrom<RawFrame> for Frame {
    type Error = Error;

    fn try_from(raw: RawFrame) -> Result<Self> {
        validate_format(&raw)?;
        check_profile(raw.profile_mm)?;
        if raw.camera_id.is_empty() {
            return Err(Error::Invalid("frame camera_id is empty".into()));
        }
        Ok(Frame {
            camera_id: raw.camera_id,
            seq: raw.seq,
            ts_acquire: raw.ts_acquire,
            width: raw.width,
            height: raw.height,
            pixel_format: raw.pixel_format,
            data: raw.data,
            profile_mm: raw.profile_mm,
        })
    }
}

impl From<Frame> for RawFrame {
    fn from(f: Frame) -> Self {
        RawFrame {
            camera_id: f.camera_id,
            seq: f.seq,
            ts_acquire: f.ts_acquire,
            width: f.width,
            height: f.height,
            pixel_format: f.pixel_format,
            data: f.data,
            profile_mm: f.profile_mm,
        }
    }
}

impl Frame {
    pub fn camera_id(&self) -> &str {
        &self.camera_id
    }
    pub fn seq(&self) -> u64 {
        self.seq
    }
    pub fn ts_acquire(&self) -> TimestampNs {
        self.ts_acquire
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn pixel_format(&self) -> PixelFormat {
        self.pixel_format
    }
    pub fn data(&self) -> Option<&Arc<[u8]>> {
        self.data.as_ref()
    }
    pub fn profile_mm(&self) -> u32 {
        self.profile_mm
    }

    /// Same frame with new pixel content (used by preprocessing).
    pub(crate) fn with_pixels(&self, format: PixelFormat, data: Option<Arc<[u8]>>) -> Frame {
        Frame {
            pixel_format: format,
            data,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DetectionClass {
    Rod,
    Flapper,
    Diverter,
}

impl DetectionClass {
    pub fn name(self) -> &'static str {
        match self {
            DetectionClass::Rod => "Rod",
            DetectionClass::Flapper => "Flapper",
            DetectionClass::Diverter => "Diverter",
        }
    }
}

/// Axis-aligned box in pixels, serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<BBox> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min >= x_max || y_min >= y_max {
            return Err(Error::DegenerateBbox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Box of the given half extents around a center point.
    pub fn around(cx: f64, cy: f64, half_w: f64, half_h: f64) -> Result<BBox> {
        BBox::new(cx - half_w, cy - half_h, cx + half_w, cy + half_h)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;
    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

/// Midpoint of a box given as `(x_min, y_min, x_max, y_max)`.
pub fn bbox_center(bbox: (f64, f64, f64, f64)) -> Result<(f64, f64)> {
    let b = BBox::new(bbox.0, bbox.1, bbox.2, bbox.3)?;
    Ok(midpoint(&b))
}

fn midpoint(b: &BBox) -> (f64, f64) {
    ((b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0)
}

#[derive(Deserialize)]
struct DetectionRepr {
    class: DetectionClass,
    bbox: BBox,
    confidence: f64,
    frame_seq: u64,
    center: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DetectionRepr")]
pub struct Detection {
    class: DetectionClass,
    bbox: BBox,
    confidence: f64,
    frame_seq: u64,
    center: (f64, f64),
}

impl Detection {
    pub fn new(class: DetectionClass, bbox: BBox, confidence: f64, frame_seq: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Invalid(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Detection {
            class,
            center: midpoint(&bbox),
            bbox,
            confidence,
            frame_seq,
        })
    }

    pub fn class(&self) -> DetectionClass {
        self.class
    }
    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }
    pub fn confidence(&self) -> f64 {
        self.confidence
    }
    pub fn frame_seq(&self) -> u64 {
        self.frame_seq
    }
    pub fn center(&self) -> (f64, f64) {
        self.center
    }
}

impl TryFrom<DetectionRepr> for Detection {
    type Error = Error;
    fn try_from(r: DetectionRepr) -> Result<Self> {
        let d = Detection::new(r.class, r.bbox, r.confidence, r.frame_seq)?;
        if d.center != r.center {
            return Err(Error::Invalid(format!(
                "detection center {:?} is not the bbox midpoint {:?}",
                r.center, d.center
            )));
        }
        Ok(d)
    }
}

#[derive(Deserialize)]
struct SignalsRepr {
    mill_running: bool,
    ghost_rolling: bool,
    material_present: bool,
    dividing_cut_active: bool,
    dividing_cut_until: TimestampNs,
    signal_ts: TimestampNs,
}

/// Snapshot of plant state from the process-control side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SignalsRepr")]
pub struct ProcessSignals {
    pub mill_running: bool,
    pub ghost_rolling: bool,
    pub material_present: bool,
    pub dividing_cut_active: bool,
    pub dividing_cut_until: TimestampNs,
    pub signal_ts: TimestampNs,
}

impl ProcessSignals {
    /// Normal production: running, material on the line, no cut window.
    pub fn running(signal_ts: TimestampNs) -> Self {
        ProcessSignals {
            mill_running: true,
            ghost_rolling: false,
            material_present: true,
            dividing_cut_active: false,
            dividing_cut_until: 0,
            signal_ts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dividing_cut_active && self.dividing_cut_until < self.signal_ts {
            return Err(Error::Invalid(format!(
                "dividing_cut_until {} precedes signal_ts {}",
                self.dividing_cut_until, self.signal_ts
            )));
        }
        Ok(())
    }
}

impl TryFrom<SignalsRepr> for ProcessSignals {
    type Error = Error;
    fn try_from(r: SignalsRepr) -> Result<Self> {
        let s = ProcessSignals {
            mill_running: r.mill_running,
            ghost_rolling: r.ghost_rolling,
            material_present: r.material_present,
            dividing_cut_active: r.dividing_cut_active,
            dividing_cut_until: r.dividing_cut_until,
            signal_ts: r.signal_ts,
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnomalyKind {
    Vibration,
    FlapperDeviation,
    DiverterShift,
    ShortMetal,
    AbnormalBilletDuration,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 5] = [
        AnomalyKind::Vibration,
        AnomalyKind::FlapperDeviation,
        AnomalyKind::DiverterShift,
        AnomalyKind::ShortMetal,
        AnomalyKind::AbnormalBilletDuration,
    ];

    /// Unit of `AnomalyEvent::magnitude` for this kind.
    pub fn unit(self) -> &'static str {
        match self {
            AnomalyKind::Vibration => "px_std",
            AnomalyKind::FlapperDeviation => "px",
            AnomalyKind::DiverterShift => "mm",
            AnomalyKind::ShortMetal | AnomalyKind::AbnormalBilletDuration => "s",
        }
    }

    /// Billet-length kinds are the ones a dividing cut can explain.
    pub fn is_billet_length(self) -> bool {
        matches!(
            self,
            AnomalyKind::ShortMetal | AnomalyKind::AbnormalBilletDuration
        )
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Deserialize)]
struct EventRepr {
    kind: AnomalyKind,
    camera_id: String,
    frame_seq: u64,
    ts: TimestampNs,
    magnitude: f64,
    detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EventRepr")]
pub struct AnomalyEvent {
    pub kind: AnomalyKind,
    pub camera_id: String,
    pub frame_seq: u64,
    pub ts: TimestampNs,
    pub magnitude: f64,
    pub detail: String,
}

impl AnomalyEvent {
    pub fn new(
        kind: AnomalyKind,
        camera_id: impl Into<String>,
        frame_seq: u64,
        ts: TimestampNs,
        magnitude: f64,
        detail: impl Into<String>,
    ) -> Result<Self> {
        if !(magnitude >= 0.0 && magnitude.is_finite()) {
            return Err(Error::Invalid(format!(
                "{kind} magnitude {magnitude} must be finite and >= 0"
            )));
        }
        Ok(AnomalyEvent {
            kind,
            camera_id: camera_id.into(),
            frame_seq,
            ts,
            magnitude,
            detail: detail.into(),
        })
    }
}

impl TryFrom<EventRepr> for AnomalyEvent {
    type Error = Error;
    fn try_from(r: EventRepr) -> Result<Self> {
        AnomalyEvent::new(r.kind, r.camera_id, r.frame_seq, r.ts, r.magnitude, r.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub event: AnomalyEvent,
    pub alert_id: u64,
    pub raised_ts: TimestampNs,
    pub suppressed: bool,
    pub coalesced_count: u64,
}

#[derive(Deserialize)]
struct MetricRepr {
    measurement: String,
    #[serde(default)]
    tags: BTreeMap<String, String>,
    fields: BTreeMap<String, f64>,
    ts: TimestampNs,
}

/// One time-series record for the metrics sink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MetricRepr")]
pub struct MetricPoint {
    measurement: String,
    tags: BTreeMap<String, String>,
    fields: BTreeMap<String, f64>,
    ts: TimestampNs,
}

fn check_key(what: &str, key: &str) -> Result<()> {
    if key.is_empty() {
        return Err(Error::Invalid(format!("{what} is empty")));
    }
    if key.chars().any(|c| c.is_whitespace() || c == ',' || c == '=') {
        return Err(Error::Invalid(format!(
            "{what} {key:?} contains whitespace, ',' or '='"
        )));
    }
    Ok(())
}

impl MetricPoint {
    pub fn new(
        measurement: impl Into<String>,
        tags: BTreeMap<String, String>,
        fields: BTreeMap<String, f64>,
        ts: TimestampNs,
    ) -> Result<Self> {
        let measurement = measurement.into();
        check_key("measurement", &measurement)?;
        for key in tags.keys() {
            check_key("tag key", key)?;
        }
        if fields.is_empty() {
            return Err(Error::Invalid(format!(
                "metric point {measurement:?} has no fields"
            )));
        }
        for (key, value) in &fields {
            if key.is_empty() {
                return Err(Error::Invalid("field key is empty".into()));
            }
            if !value.is_finite() {
                return Err(Error::Invalid(format!("field {key} is not finite")));
            }
        }
        Ok(MetricPoint {
            measurement,
            tags,
            fields,
            ts,
        })
    }

    /// Builder-style construction from slices, used all over the analytics code.
    pub fn build(
        measurement: &str,
        tags: &[(&str, &str)],
        fields: &[(&str, f64)],
        ts: TimestampNs,
    ) -> Result<Self> {
        MetricPoint::new(
            measurement,
            tags.iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            fields.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            ts,
        )
    }

    pub fn measurement(&self) -> &str {
        &self.measurement
    }
    pub fn tags(&self) -> &BTreeMap<String, String> {
        &self.tags
    }
    pub fn fields(&self) -> &BTreeMap<String, f64> {
        &self.fields
    }
    pub fn ts(&self) -> TimestampNs {
        self.ts
    }

    pub fn with_tag(mut self, key: &str, value: &str) -> Result<Self> {
        check_key("tag key", key)?;
        self.tags.insert(key.to_string(), value.to_string());
        Ok(self)
    }
}

impl TryFrom<MetricRepr> for MetricPoint {
    type Error = Error;
    fn try_from(r: MetricRepr) -> Result<Self> {
        MetricPoint::new(r.measurement, r.tags, r.fields, r.ts)
    }
}
