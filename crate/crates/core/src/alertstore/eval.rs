//! Scores surfaced alerts against scripted ground truth.

use serde::{Deserialize, Serialize};

use crate::analytics::BilletInterval;
use crate::par::{self, Execution};
use crate::types::{secs_to_ns, Alert, AnomalyKind, TimestampNs};

pub const DEFAULT_MATCH_WINDOW_S: f64 = 3.0;

/// One scripted anomaly. `camera_id: None` matches alerts from any camera.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub kind: AnomalyKind,
    #[serde(default)]
    pub camera_id: Option<String>,
    pub t_start: TimestampNs,
    pub t_end: TimestampNs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    pub kind: AnomalyKind,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// 1.0 when there was nothing to recall; see `recall_defined`.
    pub recall: f64,
    pub recall_defined: bool,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub match_window_s: f64,
    pub per_kind: Vec<KindReport>,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// FP / (FP + TP) over surfaced alerts; 0 when nothing surfaced.
    pub false_alarm_rate: f64,
    /// Flapper and diverter pooled.
    pub misalignment_recall: f64,
    pub misalignment_recall_defined: bool,
    pub suppressed_excluded: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presence_accuracy: Option<f64>,
}

impl EvalReport {
    pub fn kind(&self, kind: AnomalyKind) -> &KindReport {
        self.per_kind
            .iter()
            .find(|k| k.kind == kind)
            .expect("every kind is reported")
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (1.0, false)
    } else {
        (num as f64 / den as f64, true)
    }
}

fn compatible(alert: &Alert, truth: &TruthEvent, w: u64) -> bool {
    let ts = alert.event.ts;
    alert.event.kind == truth.kind
        && truth
            .camera_id
            .as_deref()
            .is_none_or(|c| c == alert.event.camera_id)
        && truth.t_start <= ts.saturating_add(w)
        && truth.t_end >= ts.saturating_sub(w)
}

/// One-to-one greedy matching: alerts in time order, each taking the
/// compatible unmatched truth event that ends first. Returns, per alert, the
/// index of the truth event it matched.
pub fn match_alerts(alerts: &[&Alert], truth: &[TruthEvent], match_window_s: f64) -> Vec<Option<usize>> {
    let w = secs_to_ns(match_window_s);
    let mut order: Vec<usize> = (0..alerts.len()).collect();
    order.sort_by_key(|&i| (alerts[i].event.ts, alerts[i].alert_id));
    let mut taken = vec![false; truth.len()];
    let mut matched = vec![None; alerts.len()];
    for i in order {
        let best = truth
            .iter()
            .enumerate()
            .filter(|(j, t)| !taken[*j] && compatible(alerts[i], t, w))
            .min_by_key(|(j, t)| (t.t_end, t.t_start, *j))
            .map(|(j, _)| j);
        if let Some(j) = best {
            taken[j] = true;
            matched[i] = Some(j);
        }
    }
    matched
}

pub fn evaluate(alerts: &[Alert], truth: &[TruthEvent], match_window_s: f64) -> EvalReport {
    let surfaced: Vec<&Alert> = alerts.iter().filter(|a| !a.suppressed).collect();
    let matched = match_alerts(&surfaced, truth, match_window_s);

    let mut per_kind = Vec::with_capacity(AnomalyKind::ALL.len());
    for kind in AnomalyKind::ALL {
        let mut tp = 0;
        let mut fp = 0;
        for (a, m) in surfaced.iter().zip(&matched) {
            if a.event.kind == kind {
                if m.is_some() {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let scripted = truth.iter().filter(|t| t.kind == kind).count() as u64;
        let fn_ = scripted - tp;
        let (recall, recall_defined) = ratio(tp, scripted);
        let (precision, _) = ratio(tp, tp + fp);
        per_kind.push(KindReport {
            kind,
            tp,
            fp,
            fn_,
            recall,
            recall_defined,
            precision,
        });
    }

    let sum = |f: fn(&KindReport) -> u64| per_kind.iter().map(f).sum::<u64>();
    let (tp, fp, fn_) = (sum(|k| k.tp), sum(|k| k.fp), sum(|k| k.fn_));
    let misalign: Vec<&KindReport> = per_kind
        .iter()
        .filter(|k| matches!(k.kind, AnomalyKind::FlapperDeviation | AnomalyKind::DiverterShift))
        .collect();
    let m_tp: u64 = misalign.iter().map(|k| k.tp).sum();
    let m_fn: u64 = misalign.iter().map(|k| k.fn_).sum();
    let (misalignment_recall, misalignment_recall_defined) = ratio(m_tp, m_tp + m_fn);
    let false_alarm_rate = if tp + fp == 0 { 0.0 } else { fp as f64 / (tp + fp) as f64 };

    EvalReport {
        match_window_s,
        per_kind,
        tp,
        fp,
        fn_,
        false_alarm_rate,
        misalignment_recall,
        misalignment_recall_defined,
        suppressed_excluded: (alerts.len() - surfaced.len()) as u64,
        presence_accuracy: None,
    }
}

/// Scores many independent runs.
pub fn evaluate_many(
    cases: &[(Vec<Alert>, Vec<TruthEvent>)],
    match_window_s: f64,
    exec: Execution,
) -> Vec<EvalReport> {
    par::map(exec, cases, |(alerts, truth)| evaluate(alerts, truth, match_window_s))
}

/// Fraction of frames whose presence decision, taken from the segmented
/// billet intervals (closed at both ends), agrees with ground truth.
/// `frames` is `(ts, rod_present)` in any order; `None` when empty.
pub fn presence_accuracy(intervals: &[BilletInterval], frames: &[(TimestampNs, bool)]) -> Option<f64> {
    if frames.is_empty() {
        return None;
    }
    let mut spans: Vec<(TimestampNs, TimestampNs)> =
        intervals.iter().map(|b| (b.entry_ts, b.exit_ts)).collect();
    spans.sort_unstable();
    let inside = |ts: TimestampNs| {
        let idx = spans.partition_point(|s| s.0 <= ts);
        idx > 0 && spans[..idx].iter().rev().any(|s| s.1 >= ts)
    };
    let correct = frames.iter().filter(|(ts, truth)| inside(*ts) == *truth).count();
    Some(correct as f64 / frames.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::AnomalyEvent;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    const S: u64 = 1_000_000_000;

    fn alert(id: u64, kind: AnomalyKind, cam: &str, ts: u64, suppressed: bool) -> Alert {
        Alert {
            event: AnomalyEvent::new(kind, cam, 0, ts, 1.0, "").unwrap(),
            alert_id: id,
            raised_ts: ts,
            suppressed,
            coalesced_count: 1,
        }
    }

    fn truth(kind: AnomalyKind, t0: u64, t1: u64) -> TruthEvent {
        TruthEvent {
            kind,
            camera_id: None,
            t_start: t0,
            t_end: t1,
        }
    }

    #[test]
    fn ten_bursts_nine_alerts() {
        let truths: Vec<TruthEvent> = (0..10)
            .map(|i| truth(AnomalyKind::Vibration, i * 60 * S, (i * 60 + 5) * S))
            .collect();
        let alerts: Vec<Alert> = (0..9)
            .map(|i| alert(i, AnomalyKind::Vibration, "cam1", (i * 60 + 2) * S, false))
            .collect();
        let r = evaluate(&alerts, &truths, 3.0);
        let v = r.kind(AnomalyKind::Vibration);
        assert_eq!((v.tp, v.fp, v.fn_), (9, 0, 1));
        assert!((v.recall - 0.9).abs() < 1e-12);
        assert_eq!(r.false_alarm_rate, 0.0);
    }

    #[test]
    fn no_truth_convention() {
        let alerts = vec![
            alert(1, AnomalyKind::Vibration, "c", 0, false),
            alert(2, AnomalyKind::ShortMetal, "c", S, false),
        ];
        let r = evaluate(&alerts, &[], 3.0);
        assert_eq!(r.fn_, 0);
        assert_eq!(r.kind(AnomalyKind::Vibration).recall, 1.0);
        assert!(!r.kind(AnomalyKind::Vibration).recall_defined);
        assert_eq!(r.false_alarm_rate, 1.0);
    }

    #[test]
    fn suppressed_alerts_not_scored() {
        let alerts = vec![alert(1, AnomalyKind::ShortMetal, "c", 0, true)];
        let r = evaluate(&alerts, &[], 3.0);
        assert_eq!((r.tp, r.fp, r.suppressed_excluded), (0, 0, 1));
        assert_eq!(r.false_alarm_rate, 0.0);
    }

    #[test]
    fn window_edges_inclusive() {
        let t = [truth(AnomalyKind::Vibration, 10 * S, 12 * S)];
        let hit = evaluate(&[alert(1, AnomalyKind::Vibration, "c", 15 * S, false)], &t, 3.0);
        assert_eq!(hit.tp, 1);
        let miss = evaluate(&[alert(1, AnomalyKind::Vibration, "c", 15 * S + 1, false)], &t, 3.0);
        assert_eq!(miss.tp, 0);
    }

    #[test]
    fn camera_scoped_truth() {
        let mut t = truth(AnomalyKind::Vibration, 0, S);
        t.camera_id = Some("cam2".into());
        let r = evaluate(&[alert(1, AnomalyKind::Vibration, "cam1", 0, false)], &[t], 3.0);
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 1));
    }

    #[test]
    fn presence_from_intervals() {
        let b = BilletInterval {
            camera_id: "c".into(),
            entry_ts: 10,
            exit_ts: 20,
            duration_s: 0.0,
        };
        let frames = [(5, false), (10, true), (20, true), (21, false), (15, false)];
        assert_eq!(presence_accuracy(&[b], &frames), Some(0.8));
        assert_eq!(presence_accuracy(&[], &[]), None);
    }

    /// Exhaustive optimal matching: the largest one-to-one assignment of
    /// alerts to compatible truth events, by search over used-truth bitmasks.
    fn brute_force_tp(alerts: &[&Alert], truth: &[TruthEvent], w: u64) -> u64 {
        fn go(i: usize, used: u32, adj: &[Vec<usize>], memo: &mut HashMap<(usize, u32), u64>) -> u64 {
            if i == adj.len() {
                return 0;
            }
            if let Some(&v) = memo.get(&(i, used)) {
                return v;
            }
            let mut best = go(i + 1, used, adj, memo);
            for &j in &adj[i] {
                if used & (1 << j) == 0 {
                    best = best.max(1 + go(i + 1, used | (1 << j), adj, memo));
                }
            }
            memo.insert((i, used), best);
            best
        }
        let adj: Vec<Vec<usize>> = alerts
            .iter()
            .map(|a| {
                (0..truth.len())
                    .filter(|&j| {
                        let t = &truth[j];
                        a.event.kind == t.kind
                            && t.t_start <= a.event.ts + w
                            && a.event.ts <= t.t_end + w
                    })
                    .collect()
            })
            .collect();
        go(0, 0, &adj, &mut HashMap::new())
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Alert>, Vec<TruthEvent>) {
        let kinds = [AnomalyKind::Vibration, AnomalyKind::FlapperDeviation];
        let n_truth = rng.random_range(0..=10);
        let n_alert = rng.random_range(0..=20 - n_truth);
        let truths = (0..n_truth)
            .map(|_| {
                let t0 = rng.random_range(0..60) * S;
                truth(kinds[rng.random_range(0..2)], t0, t0 + rng.random_range(1..8) * S)
            })
            .collect();
        let alerts = (0..n_alert)
            .map(|i| {
                alert(
                    i as u64,
                    kinds[rng.random_range(0..2)],
                    "c",
                    rng.random_range(0..70_000) * 1_000_000,
                    rng.random::<f64>() < 0.1,
                )
            })
            .collect();
        (alerts, truths)
    }

    #[test]
    fn greedy_matches_brute_force_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (alerts, truths) = random_instance(&mut rng);
            let r = evaluate(&alerts, &truths, 3.0);
            let surfaced: Vec<&Alert> = alerts.iter().filter(|a| !a.suppressed).collect();
            let tp = brute_force_tp(&surfaced, &truths, 3 * S);
            assert_eq!(r.tp, tp);
            assert_eq!(r.fp, surfaced.len() as u64 - tp);
            assert_eq!(r.fn_, truths.len() as u64 - tp);
        }
    }

    #[test]
    fn batch_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cases: Vec<_> = (0..50).map(|_| random_instance(&mut rng)).collect();
        assert_eq!(
            evaluate_many(&cases, 3.0, Execution::Sequential),
            evaluate_many(&cases, 3.0, Execution::Parallel)
        );
    }

    proptest! {
        #[test]
        fn rates_and_counts_consistent(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (alerts, truths) = random_instance(&mut rng);
            let r = evaluate(&alerts, &truths, 3.0);
            let surfaced = alerts.iter().filter(|a| !a.suppressed).count() as u64;
            prop_assert!(r.tp <= surfaced.min(truths.len() as u64));
            prop_assert_eq!(r.tp + r.fp, surfaced);
            prop_assert_eq!(r.tp + r.fn_, truths.len() as u64);
            prop_assert!((0.0..=1.0).contains(&r.false_alarm_rate));
            for k in &r.per_kind {
                prop_assert!((0.0..=1.0).contains(&k.recall) && (0.0..=1.0).contains(&k.precision));
            }
        }
    }
}
