//! Detection layer: detector interface, per-profile model registry, the
//! ground-truth oracle detector, and Bayer preprocessing.
//!
//! The oracle's PRNG is ChaCha8 seeded with the noise seed and switched to
//! stream `frame_seq`, so each frame's detections depend only on
//! `(seed, frame_seq, truth)` regardless of call order or platform.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::simsource::{GroundTruthRecord, SceneGeometry};
use crate::types::{check_profile, BBox, Detection, DetectionClass, Frame, PixelFormat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub name: String,
    pub supported_profiles: BTreeSet<u32>,
    /// Fixed per-frame delay added by the detector, for benchmark realism.
    #[serde(default)]
    pub latency_model_ms: f64,
}

impl DetectorSpec {
    pub fn new(name: &str, profiles: &[u32]) -> Self {
        DetectorSpec {
            name: name.to_string(),
            supported_profiles: profiles.iter().copied().collect(),
            latency_model_ms: 0.0,
        }
    }
}

/// Routes each rod profile to its model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistry {
    specs: Vec<DetectorSpec>,
}

impl ModelRegistry {
    pub fn new(specs: Vec<DetectorSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Invalid("model registry is empty".into()));
        }
        for spec in &specs {
            if spec.supported_profiles.is_empty() {
                return Err(Error::Invalid(format!(
                    "detector {} supports no profiles",
                    spec.name
                )));
            }
            for &p in &spec.supported_profiles {
                check_profile(p)?;
            }
            if !(spec.latency_model_ms >= 0.0 && spec.latency_model_ms.is_finite()) {
                return Err(Error::Invalid(format!(
                    "detector {} latency_model_ms must be >= 0",
                    spec.name
                )));
            }
        }
        Ok(ModelRegistry { specs })
    }

    /// One oracle model covering every profile.
    pub fn single_oracle() -> Self {
        ModelRegistry {
            specs: vec![DetectorSpec::new("oracle", &crate::types::ROD_PROFILES_MM)],
        }
    }

    pub fn specs(&self) -> &[DetectorSpec] {
        &self.specs
    }

    pub fn select_model(&self, profile_mm: u32) -> Result<&DetectorSpec> {
        self.specs
            .iter()
            .find(|s| s.supported_profiles.contains(&profile_mm))
            .ok_or(Error::UnsupportedProfile(profile_mm))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleNoise {
    #[serde(default)]
    pub center_noise_px: f64,
    #[serde(default)]
    pub miss_rate: f64,
    #[serde(default)]
    pub fp_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl OracleNoise {
    pub fn none() -> Self {
        OracleNoise {
            center_noise_px: 0.0,
            miss_rate: 0.0,
            fp_rate: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| (0.0..=1.0).contains(&r);
        if !(self.center_noise_px >= 0.0 && self.center_noise_px.is_finite()) {
            return Err(Error::Invalid(format!(
                "center_noise_px must be >= 0, got {}",
                self.center_noise_px
            )));
        }
        if !rate_ok(self.miss_rate) || !rate_ok(self.fp_rate) {
            return Err(Error::Invalid("miss_rate and fp_rate must be in [0, 1]".into()));
        }
        Ok(())
    }
}

impl Default for OracleNoise {
    fn default() -> Self {
        Self::none()
    }
}

/// Per-frame object detector. The oracle is the only bundled implementation;
/// a model-backed adapter plugs in here.
pub trait Detector: Send {
    fn name(&self) -> &str;

    fn detect(&mut self, frame: &Frame, truth: Option<&GroundTruthRecord>) -> Result<Vec<Detection>>;
}

/// Oracle detections for one frame: the true objects perturbed by `noise`.
pub fn detect(
    frame: &Frame,
    truth: &GroundTruthRecord,
    noise: &OracleNoise,
    geometry: &SceneGeometry,
) -> Result<Vec<Detection>> {
    if frame.seq() != truth.frame_seq {
        return Err(Error::SeqMismatch {
            frame: frame.seq(),
            truth: truth.frame_seq,
        });
    }
    oracle_detections(truth, noise, geometry)
}

fn oracle_detections(
    truth: &GroundTruthRecord,
    noise: &OracleNoise,
    g: &SceneGeometry,
) -> Result<Vec<Detection>> {
    let seq = truth.frame_seq;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    rng.set_stream(seq);
    let jitter = Normal::new(0.0, noise.center_noise_px)
        .map_err(|e| Error::Invalid(format!("center noise: {e}")))?;

    let mut objects = Vec::with_capacity(3);
    if let Some((cx, cy)) = truth.rod_center {
        objects.push((DetectionClass::Rod, cx, cy, g.rod_half));
    }
    objects.push((
        DetectionClass::Flapper,
        truth.flapper_pos.0,
        truth.flapper_pos.1,
        g.flapper_half,
    ));
    objects.push((
        DetectionClass::Diverter,
        truth.diverter_x,
        g.diverter_y,
        g.diverter_half,
    ));

    let mut out = Vec::with_capacity(4);
    for (class, cx, cy, half) in objects {
        // draws happen unconditionally so one object's miss does not shift
        // the random sequence of the next
        let missed = rng.random::<f64>() < noise.miss_rate;
        let dx = jitter.sample(&mut rng);
        let dy = jitter.sample(&mut rng);
        let conf = rng.random_range(0.5..=1.0);
        if !missed {
            let bbox = BBox::around(cx + dx, cy + dy, half.0, half.1)?;
            out.push(Detection::new(class, bbox, conf, seq)?);
        }
    }

    let spurious = rng.random::<f64>() < noise.fp_rate;
    let x = rng.random_range(g.rod_half.0..=(g.width as f64 - g.rod_half.0).max(g.rod_half.0 + 1.0));
    let y = rng.random_range(g.rod_half.1..=(g.height as f64 - g.rod_half.1).max(g.rod_half.1 + 1.0));
    let conf = rng.random_range(0.1..0.5);
    if spurious {
        let bbox = BBox::around(x, y, g.rod_half.0, g.rod_half.1)?;
        out.push(Detection::new(DetectionClass::Rod, bbox, conf, seq)?);
    }
    Ok(out)
}

/// Oracle-backed detector bound to one model spec.
pub struct OracleDetector {
    spec: DetectorSpec,
    noise: OracleNoise,
    geometry: SceneGeometry,
    latency: Duration,
}

impl OracleDetector {
    pub fn new(spec: DetectorSpec, noise: OracleNoise, geometry: SceneGeometry) -> Result<Self> {
        noise.validate()?;
        let latency = Duration::from_secs_f64(spec.latency_model_ms.max(0.0) / 1000.0);
        Ok(OracleDetector {
            spec,
            noise,
            geometry,
            latency,
        })
    }

    pub fn spec(&self) -> &DetectorSpec {
        &self.spec
    }
}

impl Detector for OracleDetector {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn detect(&mut self, frame: &Frame, truth: Option<&GroundTruthRecord>) -> Result<Vec<Detection>> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let truth = truth.ok_or_else(|| Error::Stage {
            stage: "detect".into(),
            message: format!("oracle detector has no ground truth for frame {}", frame.seq()),
        })?;
        detect(frame, truth, &self.noise, &self.geometry)
    }
}

/// Detects nothing. Used to measure the harness itself.
#[derive(Debug, Default)]
pub struct NullDetector;

impl Detector for NullDetector {
    fn name(&self) -> &str {
        "null"
    }

    fn detect(&mut self, _frame: &Frame, _truth: Option<&GroundTruthRecord>) -> Result<Vec<Detection>> {
        Ok(Vec::new())
    }
}

/// Oracle detections for many frames at once.
pub fn detect_batch(
    truths: &[GroundTruthRecord],
    noise: &OracleNoise,
    geometry: &SceneGeometry,
    exec: Execution,
) -> Result<Vec<Vec<Detection>>> {
    par::map(exec, truths, |t| oracle_detections(t, noise, geometry))
        .into_iter()
        .collect()
}

/// 2x2 nearest-neighbour demosaic of an RGGB mosaic.
///
/// Each block gives R from its R site, G as the half-up mean of the two G
/// sites and B from its B site, replicated over the four output pixels.
/// Descriptor-only frames only change their format tag.
pub fn demosaic_rg8(frame: &Frame) -> Result<Frame> {
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    if frame.pixel_format() != PixelFormat::BayerRG8 || w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Demosaic {
            format: frame.pixel_format(),
            width: frame.width(),
            height: frame.height(),
        });
    }
    let Some(src) = frame.data() else {
        return Ok(frame.with_pixels(PixelFormat::RGB8, None));
    };
    let mut rgb = vec![0u8; w * h * 3];
    for by in (0..h).step_by(2) {
        for bx in (0..w).step_by(2) {
            let r = src[by * w + bx];
            let g1 = src[by * w + bx + 1] as u16;
            let g2 = src[(by + 1) * w + bx] as u16;
            let b = src[(by + 1) * w + bx + 1];
            let g = (g1 + g2).div_ceil(2) as u8;
            for (y, x) in [(by, bx), (by, bx + 1), (by + 1, bx), (by + 1, bx + 1)] {
                let o = (y * w + x) * 3;
                rgb[o..o + 3].copy_from_slice(&[r, g, b]);
            }
        }
    }
    Ok(frame.with_pixels(PixelFormat::RGB8, Some(Arc::from(rgb))))
}
