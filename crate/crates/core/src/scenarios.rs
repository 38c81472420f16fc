//! Ready-made scenario scripts: a steady production line, a mixed anomaly
//! run, randomized gate stress and a dividing cut over a short billet.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::simsource::{Scenario, ScriptEvent, ScriptKind, DEFAULT_FPS};

/// Nominal billet pass, matching the analytics default.
pub const BILLET_S: f64 = 8.0;
/// Gap between consecutive billets.
pub const BILLET_GAP_S: f64 = 2.0;
const CYCLE_S: f64 = BILLET_S + BILLET_GAP_S;

/// Back-to-back nominal billets for `duration_s`, nothing else.
pub fn production(seed: u64, fps: f64, duration_s: f64, profile_mm: u32) -> Scenario {
    let mut s = Scenario::new(seed, fps, duration_s, profile_mm);
    let mut t = 0.5;
    while t + BILLET_S <= duration_s {
        s.push(ScriptEvent::new(ScriptKind::BilletPass, t, t + BILLET_S));
        t += CYCLE_S;
    }
    s
}

/// `n_anomalies` vibration bursts, flapper drifts and diverter shifts in
/// rotation, one per billet cycle, on a line that also stops, ghost-rolls
/// and makes a dividing cut over a short billet now and then.
///
/// Same-kind anomalies are 30 s apart, well clear of the alert debounce.
pub fn mixed(seed: u64, n_anomalies: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let mut t = 0.5;
    for i in 0..n_anomalies {
        if i > 0 && i % 9 == 0 {
            // no material while the line is idle or ghost-rolling
            let kind = if i % 18 == 0 { ScriptKind::GhostRolling } else { ScriptKind::IdleWindow };
            events.push(ScriptEvent::new(kind, t, t + 8.0));
            t += 10.0;
        }
        if i > 0 && i % 12 == 0 {
            events.push(ScriptEvent::new(ScriptKind::BilletPass, t, t + 4.0));
            events.push(ScriptEvent::new(ScriptKind::DividingCut, t - 0.5, t + 4.0));
            t += 6.0;
        }
        events.push(ScriptEvent::new(ScriptKind::BilletPass, t, t + BILLET_S));
        let start = t + rng.random_range(2.0..3.0);
        let anomaly = match i % 3 {
            0 => ScriptEvent::new(ScriptKind::VibrationBurst, start, start + 2.0)
                .with_param("amplitude_px", rng.random_range(35.0..50.0)),
            1 => ScriptEvent::new(ScriptKind::FlapperDrift, start, start + 3.0)
                .with_param("shift_px", rng.random_range(35.0..50.0)),
            _ => ScriptEvent::new(ScriptKind::DiverterShift, start, start + 3.0)
                .with_param("shift_px", rng.random_range(25.0..40.0)),
        };
        events.push(anomaly);
        t += CYCLE_S;
    }
    let mut s = Scenario::new(seed, DEFAULT_FPS, t + 1.0, 12);
    for e in events {
        s.push(e);
    }
    s
}

/// Random billets and anomalies with idle and ghost-rolling windows dropped
/// on top regardless of what else is happening.
pub fn gate_stress(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration_s = rng.random_range(40.0..80.0);
    let mut s = Scenario::new(seed, DEFAULT_FPS, duration_s, 12);
    let mut t = rng.random_range(0.0..2.0);
    while t < duration_s - 1.0 {
        let len = rng.random_range(2.0..12.0_f64).min(duration_s - t);
        s.push(ScriptEvent::new(ScriptKind::BilletPass, t, t + len));
        t += len + rng.random_range(0.5..3.0);
    }
    for _ in 0..rng.random_range(3..8) {
        let start = rng.random_range(0.0..duration_s - 2.0);
        let end = (start + rng.random_range(1.0..6.0)).min(duration_s);
        let e = match rng.random_range(0..3) {
            0 => ScriptEvent::new(ScriptKind::VibrationBurst, start, end).with_param("amplitude_px", 40.0),
            1 => ScriptEvent::new(ScriptKind::FlapperDrift, start, end),
            _ => ScriptEvent::new(ScriptKind::DiverterShift, start, end),
        };
        s.push(e);
    }
    for _ in 0..rng.random_range(1..4) {
        let start = rng.random_range(0.0..duration_s - 3.0);
        let end = (start + rng.random_range(2.0..10.0)).min(duration_s);
        let kind = if rng.random_bool(0.5) { ScriptKind::IdleWindow } else { ScriptKind::GhostRolling };
        s.push(ScriptEvent::new(kind, start, end));
    }
    s
}

/// Nominal billets, then one cut short by a dividing cut that spans it.
pub fn short_billet_during_cut(seed: u64) -> Scenario {
    let mut s = Scenario::new(seed, DEFAULT_FPS, 40.0, 12);
    s.push(ScriptEvent::new(ScriptKind::BilletPass, 0.5, 8.5));
    s.push(ScriptEvent::new(ScriptKind::BilletPass, 10.5, 18.5));
    s.push(ScriptEvent::new(ScriptKind::DividingCut, 20.0, 25.0));
    s.push(ScriptEvent::new(ScriptKind::BilletPass, 20.5, 24.5));
    s.push(ScriptEvent::new(ScriptKind::BilletPass, 26.5, 34.5));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builders_produce_valid_scenarios() {
        production(1, 45.0, 100.0, 12).validate().unwrap();
        mixed(1, 50).validate().unwrap();
        short_billet_during_cut(1).validate().unwrap();
        for seed in 0..50 {
            gate_stress(seed).validate().unwrap();
        }
    }

    #[test]
    fn mixed_counts() {
        let s = mixed(7, 50);
        let count = |k| s.events.iter().filter(|e| e.kind == k).count();
        let anomalies = count(ScriptKind::VibrationBurst) + count(ScriptKind::FlapperDrift) + count(ScriptKind::DiverterShift);
        assert_eq!(anomalies, 50);
        assert!(count(ScriptKind::IdleWindow) > 0 && count(ScriptKind::GhostRolling) > 0);
        assert!(count(ScriptKind::DividingCut) > 0);
    }

    #[test]
    fn production_billets_fit() {
        let s = production(1, 45.0, 30.0, 12);
        assert_eq!(s.events.len(), 3);
        assert!(s.events.iter().all(|e| e.t_end_s <= 30.0));
    }
}
