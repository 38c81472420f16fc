//! Feature extraction per camera: rod tracking and vibration statistics,
//! flapper deviation, diverter shift, and rod presence / billet segmentation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    ns_to_secs, AnomalyEvent, AnomalyKind, Detection, DetectionClass, MetricPoint, TimestampNs,
};

/// Analytics knobs. Every field is overridable from the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsParams {
    pub window: usize,
    pub gap_tolerance: u32,
    /// Fixed rod baseline; `None` averages the first `baseline_frames` samples.
    pub rod_baseline_cy: Option<f64>,
    pub baseline_frames: usize,
    pub vibration_std_px: f64,
    pub flapper_threshold_px: f64,
    pub diverter_threshold_mm: f64,
    pub n_on: u32,
    pub n_off: u32,
    pub nominal_billet_s: f64,
    pub short_factor: f64,
    pub long_factor: f64,
    /// Detections below this confidence are ignored.
    pub min_confidence: f64,
}

impl Default for AnalyticsParams {
    fn default() -> Self {
        AnalyticsParams {
            window: 30,
            gap_tolerance: 5,
            rod_baseline_cy: None,
            baseline_frames: 10,
            vibration_std_px: 15.0,
            flapper_threshold_px: 20.0,
            diverter_threshold_mm: 5.0,
            n_on: 3,
            n_off: 5,
            nominal_billet_s: 8.0,
            short_factor: 0.8,
            long_factor: 1.25,
            min_confidence: 0.5,
        }
    }
}

impl AnalyticsParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vibration_std_px", self.vibration_std_px),
            ("flapper_threshold_px", self.flapper_threshold_px),
            ("diverter_threshold_mm", self.diverter_threshold_mm),
            ("nominal_billet_s", self.nominal_billet_s),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{key} must be > 0, got {v}")));
            }
        }
        if self.window < 2 {
            return Err(Error::Invalid("window must be >= 2".into()));
        }
        if self.n_on < 2 || self.n_off < 1 {
            return Err(Error::Invalid("n_on must be >= 2 and n_off >= 1".into()));
        }
        if !(self.short_factor > 0.0 && self.short_factor < 1.0) {
            return Err(Error::Invalid("short_factor must be in (0, 1)".into()));
        }
        if !(self.long_factor > 1.0 && self.long_factor.is_finite()) {
            return Err(Error::Invalid("long_factor must be > 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::Invalid("min_confidence must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Where an event happened, for building [`AnomalyEvent`]s.
#[derive(Debug, Clone, Copy)]
pub struct EventContext<'a> {
    pub camera_id: &'a str,
    pub frame_seq: u64,
    pub ts: TimestampNs,
}

impl EventContext<'_> {
    fn event(&self, kind: AnomalyKind, magnitude: f64, detail: String) -> AnomalyEvent {
        AnomalyEvent::new(kind, self.camera_id, self.frame_seq, self.ts, magnitude, detail)
            .expect("analytics magnitudes are non-negative")
    }
}

/// Sliding window of rod center heights.
#[derive(Debug, Clone)]
pub struct RodTrack {
    pub camera_id: String,
    window: VecDeque<(u64, f64)>,
    capacity: usize,
    baseline_cy: Option<f64>,
    baseline_samples: Vec<f64>,
    baseline_frames: usize,
    gap_count: u32,
    gap_tolerance: u32,
}

impl RodTrack {
    pub fn new(camera_id: &str, params: &AnalyticsParams) -> Self {
        RodTrack {
            camera_id: camera_id.to_string(),
            window: VecDeque::with_capacity(params.window),
            capacity: params.window,
            baseline_cy: params.rod_baseline_cy,
            baseline_samples: Vec::new(),
            baseline_frames: params.baseline_frames.max(1),
            gap_count: 0,
            gap_tolerance: params.gap_tolerance,
        }
    }

    /// Feeds one frame's detections. The most confident rod (ties: lowest cx)
    /// is sampled; frames without a rod count as gaps and a gap longer than
    /// the tolerance resets the track. Returns whether a sample was taken.
    pub fn update(&mut self, frame_seq: u64, detections: &[Detection]) -> bool {
        let best = detections
            .iter()
            .filter(|d| d.class() == DetectionClass::Rod)
            .min_by(|a, b| {
                b.confidence()
                    .total_cmp(&a.confidence())
                    .then(a.center().0.total_cmp(&b.center().0))
            });
        match best {
            Some(d) => {
                let cy = d.center().1;
                if self.window.len() == self.capacity {
                    self.window.pop_front();
                }
                self.window.push_back((frame_seq, cy));
                self.gap_count = 0;
                if self.baseline_cy.is_none() {
                    self.baseline_samples.push(cy);
                    if self.baseline_samples.len() >= self.baseline_frames {
                        let n = self.baseline_samples.len() as f64;
                        self.baseline_cy = Some(self.baseline_samples.iter().sum::<f64>() / n);
                    }
                }
                true
            }
            None => {
                self.gap_count += 1;
                if self.gap_count > self.gap_tolerance {
                    self.window.clear();
                }
                false
            }
        }
    }

    pub fn samples(&self) -> Vec<f64> {
        self.window.iter().map(|&(_, cy)| cy).collect()
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn gap_count(&self) -> u32 {
        self.gap_count
    }

    pub fn baseline_cy(&self) -> Option<f64> {
        self.baseline_cy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VibrationStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

/// Population statistics over the samples; `None` below two samples.
pub fn vibration_stats(samples: &[f64]) -> Option<VibrationStats> {
    if samples.len() < 2 {
        return None;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let (min, max) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    Some(VibrationStats {
        // rounding can leave the mean an ulp outside [min, max]
        mean: mean.clamp(min, max),
        std: var.sqrt(),
        min,
        max,
        n: samples.len(),
    })
}

/// Vibration event iff the window is full and std strictly exceeds the threshold.
pub fn check_vibration(
    stats: &VibrationStats,
    threshold_px_std: f64,
    window: usize,
    ctx: EventContext<'_>,
) -> Option<AnomalyEvent> {
    (stats.n == window && stats.std > threshold_px_std).then(|| {
        ctx.event(
            AnomalyKind::Vibration,
            stats.std,
            format!("rod std {:.3} px > {threshold_px_std} px over {window} frames", stats.std),
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlapperBaseline {
    pub baseline: (f64, f64),
    pub threshold_px: f64,
}

pub fn flapper_deviation(
    detection: &Detection,
    baseline: &FlapperBaseline,
    ctx: EventContext<'_>,
) -> Result<(f64, Option<AnomalyEvent>)> {
    expect_class(detection, DetectionClass::Flapper)?;
    let (cx, cy) = detection.center();
    let displacement = (cx - baseline.baseline.0).hypot(cy - baseline.baseline.1);
    let event = (displacement > baseline.threshold_px).then(|| {
        ctx.event(
            AnomalyKind::FlapperDeviation,
            displacement,
            format!(
                "flapper {displacement:.2} px from baseline ({}, {})",
                baseline.baseline.0, baseline.baseline.1
            ),
        )
    });
    Ok((displacement, event))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiverterCalibration {
    pub mm_per_px: f64,
    pub reference_x: f64,
    pub threshold_mm: f64,
}

pub fn diverter_shift_mm(
    detection: &Detection,
    calib: &DiverterCalibration,
    ctx: EventContext<'_>,
) -> Result<(f64, Option<AnomalyEvent>)> {
    expect_class(detection, DetectionClass::Diverter)?;
    let shift = (detection.center().0 - calib.reference_x).abs() * calib.mm_per_px;
    let event = (shift > calib.threshold_mm).then(|| {
        ctx.event(
            AnomalyKind::DiverterShift,
            shift,
            format!("diverter shifted {shift:.2} mm"),
        )
    });
    Ok((shift, event))
}

fn expect_class(d: &Detection, class: DetectionClass) -> Result<()> {
    if d.class() == class {
        Ok(())
    } else {
        Err(Error::WrongClass {
            expected: class.name(),
            actual: d.class().name(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BilletPhase {
    Absent,
    Entering,
    Present,
    Exiting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilletInterval {
    pub camera_id: String,
    pub entry_ts: TimestampNs,
    pub exit_ts: TimestampNs,
    pub duration_s: f64,
}

#[derive(Debug, Default)]
pub struct BilletUpdate {
    pub interval: Option<BilletInterval>,
    pub event: Option<AnomalyEvent>,
}

/// Hysteresis on per-frame rod presence: `n_on` present frames open a billet
/// (entry at the first of them), `n_off` absent frames close it (exit at the
/// last present frame).
#[derive(Debug, Clone)]
pub struct BilletState {
    pub phase: BilletPhase,
    pub on_count: u32,
    pub off_count: u32,
    pub entry_ts: Option<TimestampNs>,
    pub exit_ts: Option<TimestampNs>,
    pub nominal_duration_s: f64,
    pub short_factor: f64,
    pub long_factor: f64,
    n_on: u32,
    n_off: u32,
    candidate_ts: TimestampNs,
    last_present_ts: TimestampNs,
}

impl BilletState {
    pub fn new(params: &AnalyticsParams) -> Self {
        BilletState {
            phase: BilletPhase::Absent,
            on_count: 0,
            off_count: 0,
            entry_ts: None,
            exit_ts: None,
            nominal_duration_s: params.nominal_billet_s,
            short_factor: params.short_factor,
            long_factor: params.long_factor,
            n_on: params.n_on,
            n_off: params.n_off,
            candidate_ts: 0,
            last_present_ts: 0,
        }
    }

    /// Whether a billet is currently considered in view.
    pub fn in_billet(&self) -> bool {
        matches!(self.phase, BilletPhase::Present | BilletPhase::Exiting)
    }

    /// `(entry_ts, last_present_ts)` of a billet still in view.
    pub fn open_span(&self) -> Option<(TimestampNs, TimestampNs)> {
        if self.in_billet() {
            self.entry_ts.map(|e| (e, self.last_present_ts))
        } else {
            None
        }
    }

    pub fn update(&mut self, present: bool, ctx: EventContext<'_>) -> BilletUpdate {
        let ts = ctx.ts;
        match (self.phase, present) {
            (BilletPhase::Absent, true) => {
                self.on_count = 1;
                self.candidate_ts = ts;
                self.last_present_ts = ts;
                self.phase = BilletPhase::Entering;
                self.promote();
            }
            (BilletPhase::Absent, false) => {}
            (BilletPhase::Entering, true) => {
                self.on_count += 1;
                self.last_present_ts = ts;
                self.promote();
            }
            (BilletPhase::Entering, false) => {
                self.on_count = 0;
                self.phase = BilletPhase::Absent;
            }
            (BilletPhase::Present | BilletPhase::Exiting, true) => {
                self.off_count = 0;
                self.last_present_ts = ts;
                self.phase = BilletPhase::Present;
            }
            (BilletPhase::Present | BilletPhase::Exiting, false) => {
                self.off_count += 1;
                self.phase = BilletPhase::Exiting;
                if self.off_count >= self.n_off {
                    return self.complete(ctx);
                }
            }
        }
        BilletUpdate::default()
    }

    fn promote(&mut self) {
        if self.on_count >= self.n_on {
            self.phase = BilletPhase::Present;
            self.entry_ts = Some(self.candidate_ts);
            self.exit_ts = None;
            self.off_count = 0;
        }
    }

    fn complete(&mut self, ctx: EventContext<'_>) -> BilletUpdate {
        let entry = self.entry_ts.unwrap_or(self.candidate_ts);
        let exit = self.last_present_ts;
        self.exit_ts = Some(exit);
        self.phase = BilletPhase::Absent;
        self.on_count = 0;
        self.off_count = 0;
        let duration_s = ns_to_secs(exit - entry);
        let short = self.short_factor * self.nominal_duration_s;
        let long = self.long_factor * self.nominal_duration_s;
        let event = if duration_s < short {
            Some(ctx.event(
                AnomalyKind::ShortMetal,
                duration_s,
                format!("billet lasted {duration_s:.3} s, below {short:.3} s"),
            ))
        } else if duration_s > long {
            Some(ctx.event(
                AnomalyKind::AbnormalBilletDuration,
                duration_s,
                format!("billet lasted {duration_s:.3} s, above {long:.3} s"),
            ))
        } else {
            None
        };
        BilletUpdate {
            interval: Some(BilletInterval {
                camera_id: ctx.camera_id.to_string(),
                entry_ts: entry,
                exit_ts: exit,
                duration_s,
            }),
            event,
        }
    }
}

#[derive(Debug, Default)]
pub struct AnalyticsOutput {
    pub events: Vec<AnomalyEvent>,
    pub metrics: Vec<MetricPoint>,
    pub billet: Option<BilletInterval>,
    /// Raw per-frame rod presence (a confident rod detection this frame).
    pub rod_present: bool,
    pub stats: Option<VibrationStats>,
}

/// All analytics state for one camera.
///
/// Vibration, flapper and diverter events fire once per excursion and re-arm
/// when the measurement falls back within its threshold.
#[derive(Debug, Clone)]
pub struct CameraAnalytics {
    camera_id: String,
    profile_tag: String,
    params: AnalyticsParams,
    track: RodTrack,
    flapper: FlapperBaseline,
    diverter: DiverterCalibration,
    billet: BilletState,
    vibration_armed: bool,
    flapper_armed: bool,
    diverter_armed: bool,
}

impl CameraAnalytics {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
    pub fn new(
        camera_id: &str,
        profile_mm: u32,
        params: AnalyticsParams,
        flapper: FlapperBaseline,
        diverter: DiverterCalibration,
    ) -> Result<Self> {
        params.validate()?;
        if !(flapper.threshold_px > 0.0) {
            return Err(Error::Invalid("flapper threshold_px must be > 0".into()));
        }
        if !(diverter.mm_per_px > 0.0 && diverter.threshold_mm > 0.0) {
            return Err(Error::Invalid(
                "diverter mm_per_px and threshold_mm must be > 0".into(),
            ));
        }
        Ok(CameraAnalytics {
            camera_id: camera_id.to_string(),
            profile_tag: format!("{profile_mm}mm"),
            track: RodTrack::new(camera_id, &params),
            billet: BilletState::new(&params),
            params,
            flapper,
            diverter,
            vibration_armed: true,
            flapper_armed: true,
            diverter_armed: true,
        })
    }

    pub fn camera_id(&self) -> &str {
        &self.camera_id
    }

    pub fn params(&self) -> &AnalyticsParams {
        &self.params
    }

    pub fn billet_state(&self) -> &BilletState {
        &self.billet
    }

    fn point(&self, measurement: &str, fields: &[(&str, f64)], ts: TimestampNs) -> MetricPoint {
        MetricPoint::build(
            measurement,
            &[("camera_id", &self.camera_id), ("profile", &self.profile_tag)],
            fields,
            ts,
        )
        .expect("analytics metric names are valid")
    }

    pub fn process(
        &mut self,
        frame_seq: u64,
        ts: TimestampNs,
        detections: &[Detection],
    ) -> Result<AnalyticsOutput> {
        let confident: Vec<&Detection> = detections
            .iter()
            .filter(|d| d.confidence() >= self.params.min_confidence)
            .collect();
        let best = |class: DetectionClass| {
            confident
                .iter()
                .filter(|d| d.class() == class)
                .max_by(|a, b| a.confidence().total_cmp(&b.confidence()))
                .copied()
        };
        let camera_id = self.camera_id.clone();
        let ctx = EventContext {
            camera_id: &camera_id,
            frame_seq,
            ts,
        };
        let mut out = AnalyticsOutput::default();

        let rods: Vec<Detection> = confident
            .iter()
            .filter(|d| d.class() == DetectionClass::Rod)
            .map(|d| (*d).clone())
            .collect();
        out.rod_present = !rods.is_empty();
        self.track.update(frame_seq, &rods);
        let samples = self.track.samples();
        if samples.is_empty() {
            self.vibration_armed = true;
        }
        if let Some(stats) = vibration_stats(&samples) {
            let mut fields = vec![
                ("mean", stats.mean),
                ("std", stats.std),
                ("min", stats.min),
                ("max", stats.max),
            ];
            if let Some(base) = self.track.baseline_cy() {
                fields.push(("offset", stats.mean - base));
            }
            out.metrics.push(self.point("rod_alignment", &fields, ts));
            match check_vibration(&stats, self.params.vibration_std_px, self.track.capacity(), ctx) {
                Some(event) if self.vibration_armed => {
                    self.vibration_armed = false;
                    out.events.push(event);
                }
                Some(_) => {}
                None if stats.std <= self.params.vibration_std_px => self.vibration_armed = true,
                None => {}
            }
            out.stats = Some(stats);
        }

        if let Some(d) = best(DetectionClass::Flapper) {
            let (displacement, event) = flapper_deviation(d, &self.flapper, ctx)?;
            out.metrics
                .push(self.point("flapper", &[("displacement_px", displacement)], ts));
            Self::latch(&mut self.flapper_armed, event, &mut out.events);
        }

        if let Some(d) = best(DetectionClass::Diverter) {
            let (shift, event) = diverter_shift_mm(d, &self.diverter, ctx)?;
            out.metrics.push(self.point("diverter", &[("shift_mm", shift)], ts));
            Self::latch(&mut self.diverter_armed, event, &mut out.events);
        }

        let update = self.billet.update(out.rod_present, ctx);
        if let Some(interval) = update.interval {
            out.metrics
                .push(self.point("billet", &[("duration_s", interval.duration_s)], ts));
            out.billet = Some(interval);
        }
        out.events.extend(update.event);
        Ok(out)
    }

    fn latch(armed: &mut bool, event: Option<AnomalyEvent>, events: &mut Vec<AnomalyEvent>) {
        match event {
            Some(e) if *armed => {
                *armed = false;
                events.push(e);
            }
            Some(_) => {}
            None => *armed = true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::BBox;
    use proptest::prelude::*;

    const CTX: EventContext<'static> = EventContext {
        camera_id: "cam1",
        frame_seq: 7,
        ts: 1_000,
    };

    fn det(class: DetectionClass, cx: f64, cy: f64, conf: f64) -> Detection {
        Detection::new(class, BBox::around(cx, cy, 5.0, 5.0).unwrap(), conf, 0).unwrap()
    }

    /// Brute-force reference: Welford's running update, a different
    /// algorithm from the two-pass implementation under test.
    fn oracle_stats(xs: &[f64]) -> (f64, f64, f64, f64) {
        let mut mean = 0.0;
        let mut m2 = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (i, &x) in xs.iter().enumerate() {
            let delta = x - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (x - mean);
            lo = if x < lo { x } else { lo };
            hi = if x > hi { x } else { hi };
        }
        (mean, (m2 / xs.len() as f64).sqrt(), lo, hi)
    }

    #[test]
    fn stats_examples() {
        let s = vibration_stats(&[100.0, 102.0, 98.0, 101.0, 99.0]).unwrap();
        let o = oracle_stats(&[100.0, 102.0, 98.0, 101.0, 99.0]);
        assert_eq!((s.mean, s.min, s.max), (100.0, 98.0, 102.0));
        assert!((s.std - 2f64.sqrt()).abs() < 1e-12);
        assert!((s.std - o.1).abs() < 1e-12);

        let c = vibration_stats(&[50.0; 30]).unwrap();
        assert_eq!((c.mean, c.std, c.min, c.max), (50.0, 0.0, 50.0, 50.0));

        let two = vibration_stats(&[0.0, 10.0]).unwrap();
        assert_eq!((two.mean, two.std, two.min, two.max), (5.0, 5.0, 0.0, 10.0));
        assert_eq!(oracle_stats(&[0.0, 10.0]).1, 5.0);

        assert!(vibration_stats(&[1.0]).is_none());
        assert!(vibration_stats(&[]).is_none());
    }

    #[test]
    fn vibration_threshold_rules() {
        let stats = |std, n| VibrationStats {
            mean: 0.0,
            std,
            min: 0.0,
            max: 0.0,
            n,
        };
        let e = check_vibration(&stats(16.2, 30), 15.0, 30, CTX).unwrap();
        assert_eq!(e.kind, AnomalyKind::Vibration);
        assert_eq!(e.magnitude, 16.2);
        assert!(check_vibration(&stats(15.0, 30), 15.0, 30, CTX).is_none());
        assert!(check_vibration(&stats(40.0, 29), 15.0, 30, CTX).is_none());
    }

    #[test]
    fn track_takes_most_confident_rod() {
        let mut t = RodTrack::new("cam1", &AnalyticsParams::default());
        t.update(1, &[det(DetectionClass::Rod, 10.0, 100.0, 0.9), det(DetectionClass::Rod, 20.0, 140.0, 0.7)]);
        assert_eq!(t.samples(), vec![100.0]);
        // tie on confidence goes to the lowest cx
        t.update(2, &[det(DetectionClass::Rod, 50.0, 1.0, 0.8), det(DetectionClass::Rod, 20.0, 2.0, 0.8)]);
        assert_eq!(t.samples(), vec![100.0, 2.0]);
    }

    #[test]
    fn track_gap_reset() {
        let mut t = RodTrack::new("cam1", &AnalyticsParams::default());
        t.update(0, &[det(DetectionClass::Rod, 0.0, 1.0, 0.9)]);
        for seq in 1..=5 {
            t.update(seq, &[]);
        }
        assert_eq!(t.len(), 1);
        t.update(6, &[]);
        assert!(t.is_empty());

        let mut t = RodTrack::new("cam1", &AnalyticsParams::default());
        t.update(0, &[det(DetectionClass::Rod, 0.0, 1.0, 0.9)]);
        t.update(1, &[]);
        assert_eq!(t.gap_count(), 1);
        assert!(t.update(2, &[det(DetectionClass::Rod, 0.0, 3.0, 0.9)]));
        assert_eq!(t.gap_count(), 0);
        assert_eq!(t.samples(), vec![1.0, 3.0]);
    }

    #[test]
    fn window_is_bounded() {
        let params = AnalyticsParams::default();
        let mut t = RodTrack::new("cam1", &params);
        for seq in 0..100 {
            t.update(seq, &[det(DetectionClass::Rod, 0.0, seq as f64, 0.9)]);
        }
        assert_eq!(t.len(), params.window);
        assert_eq!(t.samples()[0], 70.0);
    }

    #[test]
    fn flapper_examples() {
        let base = FlapperBaseline {
            baseline: (100.0, 100.0),
            threshold_px: 20.0,
        };
        let (d, e) = flapper_deviation(&det(DetectionClass::Flapper, 103.0, 104.0, 0.9), &base, CTX).unwrap();
        assert_eq!(d, 5.0);
        assert!(e.is_none());
        let (d, e) = flapper_deviation(&det(DetectionClass::Flapper, 100.0, 100.0, 0.9), &base, CTX).unwrap();
        assert_eq!(d, 0.0);
        assert!(e.is_none());
        let (d, e) = flapper_deviation(&det(DetectionClass::Flapper, 115.0, 120.0, 0.9), &base, CTX).unwrap();
        assert_eq!(d, 25.0);
        let e = e.unwrap();
        assert_eq!((e.kind, e.magnitude), (AnomalyKind::FlapperDeviation, 25.0));
        assert!(flapper_deviation(&det(DetectionClass::Rod, 0.0, 0.0, 0.9), &base, CTX).is_err());
    }

    #[test]
    fn diverter_examples() {
        let cal = DiverterCalibration {
            mm_per_px: 0.5,
            reference_x: 200.0,
            threshold_mm: 5.0,
        };
        let (s, e) = diverter_shift_mm(&det(DetectionClass::Diverter, 214.0, 0.0, 0.9), &cal, CTX).unwrap();
        assert_eq!(s, 7.0);
        let e = e.unwrap();
        assert_eq!((e.kind, e.magnitude), (AnomalyKind::DiverterShift, 7.0));
        let (s, e) = diverter_shift_mm(&det(DetectionClass::Diverter, 200.0, 0.0, 0.9), &cal, CTX).unwrap();
        assert_eq!(s, 0.0);
        assert!(e.is_none());
    }

    fn run_presence(state: &mut BilletState, presence: &[(f64, bool)]) -> Vec<BilletUpdate> {
        presence
            .iter()
            .map(|&(t, p)| {
                state.update(
                    p,
                    EventContext {
                        camera_id: "cam1",
                        frame_seq: 0,
                        ts: (t * 1e9).round() as u64,
                    },
                )
            })
            .filter(|u| u.interval.is_some())
            .collect()
    }

    fn presence_track(fps: f64, total_s: f64, on: (f64, f64)) -> Vec<(f64, bool)> {
        let n = (total_s * fps) as usize;
        (0..n)
            .map(|k| {
                let t = k as f64 / fps;
                // small epsilon keeps the window endpoints inclusive despite rounding
                (t, t >= on.0 - 1e-9 && t <= on.1 + 1e-9)
            })
            .collect()
    }

    #[test]
    fn billet_nominal_duration_no_event() {
        let params = AnalyticsParams {
            nominal_billet_s: 9.0,
            ..Default::default()
        };
        let mut s = BilletState::new(&params);
        let done = run_presence(&mut s, &presence_track(10.0, 14.0, (2.0, 10.4)));
        assert_eq!(done.len(), 1);
        let interval = done[0].interval.as_ref().unwrap();
        assert!((interval.duration_s - 8.4).abs() < 1e-9);
        assert!(interval.entry_ts < interval.exit_ts);
        assert!(done[0].event.is_none());
    }

    #[test]
    fn billet_short_metal() {
        let params = AnalyticsParams {
            nominal_billet_s: 9.0,
            ..Default::default()
        };
        let mut s = BilletState::new(&params);
        let done = run_presence(&mut s, &presence_track(10.0, 10.0, (1.0, 6.0)));
        let e = done[0].event.as_ref().unwrap();
        assert_eq!(e.kind, AnomalyKind::ShortMetal);
        assert!((e.magnitude - 5.0).abs() < 1e-9);
    }

    #[test]
    fn billet_long_duration() {
        let params = AnalyticsParams::default();
        let mut s = BilletState::new(&params);
        let done = run_presence(&mut s, &presence_track(10.0, 14.0, (1.0, 12.0)));
        assert_eq!(done[0].event.as_ref().unwrap().kind, AnomalyKind::AbnormalBilletDuration);
    }

    #[test]
    fn billet_blip_ignored() {
        let mut s = BilletState::new(&AnalyticsParams::default());
        let track: Vec<(f64, bool)> = (0..20).map(|k| (k as f64 * 0.1, k == 5 || k == 6)).collect();
        assert!(run_presence(&mut s, &track).is_empty());
        assert_eq!(s.phase, BilletPhase::Absent);
    }

    #[test]
    fn billet_survives_short_dropouts() {
        let mut s = BilletState::new(&AnalyticsParams::default());
        let track: Vec<(f64, bool)> = (0..100)
            .map(|k| (k as f64 * 0.1, (10..80).contains(&k) && k % 7 != 0))
            .collect();
        let done = run_presence(&mut s, &track);
        assert_eq!(done.len(), 1);
    }

    #[test]
    fn sinusoid_std_is_amplitude_over_root_two() {
        // 45 fps, 5 Hz: 9 samples per period; 27 samples = 3 whole periods
        for amp in [5.0, 20.0, 40.0] {
            let xs: Vec<f64> = (0..27)
                .map(|k| 240.0 + amp * (2.0 * std::f64::consts::PI * 5.0 * k as f64 / 45.0).sin())
                .collect();
            let s = vibration_stats(&xs).unwrap();
            let expected = amp / 2f64.sqrt();
            assert!((s.std - expected).abs() / expected < 0.02, "{} vs {expected}", s.std);
        }
    }

    #[test]
    fn vibration_fires_once_per_excursion() {
        let mut a = CameraAnalytics::new(
            "cam1",
            12,
            AnalyticsParams::default(),
            FlapperBaseline { baseline: (100.0, 400.0), threshold_px: 20.0 },
            DiverterCalibration { mm_per_px: 0.5, reference_x: 500.0, threshold_mm: 5.0 },
        )
        .unwrap();
        let mut events = 0;
        for k in 0..200u64 {
            let t = k as f64 / 45.0;
            let cy = if (50..120).contains(&k) {
                240.0 + 40.0 * (2.0 * std::f64::consts::PI * 5.0 * t).sin()
            } else {
                240.0
            };
            let out = a.process(k, k * 22_222_222, &[det(DetectionClass::Rod, 320.0, cy, 0.9)]).unwrap();
            events += out.events.iter().filter(|e| e.kind == AnomalyKind::Vibration).count();
        }
        assert_eq!(events, 1);
    }

    #[test]
    fn low_confidence_ignored() {
        let mut a = CameraAnalytics::new(
            "cam1",
            12,
            AnalyticsParams::default(),
            FlapperBaseline { baseline: (100.0, 400.0), threshold_px: 20.0 },
            DiverterCalibration { mm_per_px: 0.5, reference_x: 500.0, threshold_mm: 5.0 },
        )
        .unwrap();
        let out = a.process(0, 0, &[det(DetectionClass::Rod, 320.0, 240.0, 0.3)]).unwrap();
        assert!(!out.rod_present);
    }

    proptest! {
        #[test]
        fn stats_match_oracle(xs in prop::collection::vec(-1e3f64..1e3, 2..64)) {
            let s = vibration_stats(&xs).unwrap();
            let (mean, std, lo, hi) = oracle_stats(&xs);
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
            prop_assert!(rel(s.mean, mean) < 1e-9 || (s.mean - mean).abs() < 1e-9);
            prop_assert!(rel(s.std, std) < 1e-9 || (s.std - std).abs() < 1e-9);
            prop_assert_eq!((s.min, s.max), (lo, hi));
            prop_assert!(s.min <= s.mean && s.mean <= s.max && s.std >= 0.0);
        }

        #[test]
        fn translation_invariance(
            xs in prop::collection::vec(-500i32..500, 2..40),
            shift in -1000i32..1000,
        ) {
            let a: Vec<f64> = xs.iter().map(|&x| x as f64).collect();
            let b: Vec<f64> = xs.iter().map(|&x| (x + shift) as f64).collect();
            let sa = vibration_stats(&a).unwrap();
            let sb = vibration_stats(&b).unwrap();
            prop_assert!((sa.std - sb.std).abs() < 1e-9);
            prop_assert_eq!(sa.max - sa.min, sb.max - sb.min);
            prop_assert!((sb.mean - sa.mean - shift as f64).abs() < 1e-9);
            let w = a.len();
            for th in [1.0, 10.0, 100.0] {
                prop_assert_eq!(
                    check_vibration(&sa, th, w, CTX).is_some(),
                    check_vibration(&sb, th, w, CTX).is_some()
                );
            }
        }
    }
}
