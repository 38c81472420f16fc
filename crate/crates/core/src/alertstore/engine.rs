use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::live::LiveState;
use crate::types::{secs_to_ns, Alert, AnomalyEvent, AnomalyKind, TimestampNs};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DebounceRule {
    pub window_s: f64,
}

impl DebounceRule {
    pub fn new(window_s: f64) -> Result<Self> {
        if !(window_s > 0.0 && window_s.is_finite()) {
            return Err(Error::Invalid(format!("debounce window_s must be > 0, got {window_s}")));
        }
        Ok(DebounceRule { window_s })
    }
}

impl Default for DebounceRule {
    fn default() -> Self {
        DebounceRule { window_s: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RaiseOutcome {
    NewAlert(Alert),
    Coalesced(u64),
}

// suppressed alerts debounce separately so they never swallow a real one
type Key = (AnomalyKind, String, bool);

/// Debounces events into alerts keyed by (kind, camera).
///
/// An event within `window_s` of an open alert's first event is folded into
/// it. Alerts close once an event arrives more than `window_s` after their
/// first event, or on [`AlertEngine::finish`].
#[derive(Debug)]
pub struct AlertEngine {
    rule: DebounceRule,
    window_ns: u64,
    next_id: u64,
    open: BTreeMap<Key, Alert>,
}

impl AlertEngine {
    pub fn new(rule: DebounceRule) -> Self {
        AlertEngine {
            window_ns: secs_to_ns(rule.window_s),
            rule,
            next_id: 1,
            open: BTreeMap::new(),
        }
    }

    pub fn rule(&self) -> DebounceRule {
        self.rule
    }

    /// Returns the outcome and any alerts closed by this event's time.
    pub fn raise(&mut self, event: AnomalyEvent, suppressed: bool, raised_ts: TimestampNs) -> (RaiseOutcome, Vec<Alert>) {
        let now = event.ts;
        let closed = self.close_expired(now);
        let key = (event.kind, event.camera_id.clone(), suppressed);
        if let Some(open) = self.open.get_mut(&key) {
            if now.saturating_sub(open.event.ts) <= self.window_ns {
                open.coalesced_count += 1;
                return (RaiseOutcome::Coalesced(open.alert_id), closed);
            }
        }
        let alert = Alert {
            event,
            alert_id: self.next_id,
            raised_ts,
            suppressed,
            coalesced_count: 1,
        };
        self.next_id += 1;
        self.open.insert(key, alert.clone());
        (RaiseOutcome::NewAlert(alert), closed)
    }

    fn close_expired(&mut self, now: TimestampNs) -> Vec<Alert> {
        let expired: Vec<Key> = self
            .open
            .iter()
            .filter(|(_, a)| now.saturating_sub(a.event.ts) > self.window_ns)
            .map(|(k, _)| k.clone())
            .collect();
        let mut closed: Vec<Alert> = expired
            .into_iter()
            .filter_map(|k| self.open.remove(&k))
            .collect();
        closed.sort_by_key(|a| a.alert_id);
        closed
    }

    /// Closes every open alert.
    pub fn finish(&mut self) -> Vec<Alert> {
        let mut all: Vec<Alert> = std::mem::take(&mut self.open).into_values().collect();
        all.sort_by_key(|a| a.alert_id);
        all
    }

    pub fn open_count(&self) -> usize {
        self.open.len()
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertCounts {
    pub new_alerts: u64,
    pub surfaced: u64,
    pub suppressed: u64,
    pub coalesced: u64,
    pub write_errors: u64,
}

/// Shared alert hub: debounce engine plus the `alerts.ndjson` writer, with
/// optional mirroring of surfaced alerts to the live operator state.
/// Closed alerts are written one JSON object per line.
pub struct AlertHub {
    inner: Mutex<HubInner>,
    live: Option<Arc<LiveState>>,
}

struct HubInner {
    engine: AlertEngine,
    out: Option<Box<dyn Write + Send>>,
    written: Vec<Alert>,
    keep: bool,
    counts: AlertCounts,
}

impl AlertHub {
    pub fn new(rule: DebounceRule, out: Option<Box<dyn Write + Send>>) -> Self {
        AlertHub {
            inner: Mutex::new(HubInner {
                engine: AlertEngine::new(rule),
                out,
                written: Vec::new(),
                keep: false,
                counts: AlertCounts::default(),
            }),
            live: None,
        }
    }

    /// Hub that also keeps every closed alert in memory.
    pub fn in_memory(rule: DebounceRule) -> Self {
        let hub = AlertHub::new(rule, None);
        hub.inner.lock().keep = true;
        hub
    }

    pub fn with_live(mut self, live: Arc<LiveState>) -> Self {
        self.live = Some(live);
        self
    }

    pub fn raise(&self, event: AnomalyEvent, suppressed: bool, raised_ts: TimestampNs) -> RaiseOutcome {
        let mut inner = self.inner.lock();
        let (outcome, closed) = inner.engine.raise(event, suppressed, raised_ts);
        match &outcome {
            RaiseOutcome::NewAlert(a) => {
                inner.counts.new_alerts += 1;
                if a.suppressed {
                    inner.counts.suppressed += 1;
                } else {
                    inner.counts.surfaced += 1;
                }
                if let Some(live) = &self.live {
                    live.record_alert(a.clone());
                }
            }
            RaiseOutcome::Coalesced(id) => {
                inner.counts.coalesced += 1;
                if let Some(live) = &self.live {
                    live.coalesce_alert(*id);
                }
            }
        }
        inner.persist(closed);
        outcome
    }

    /// Closes all open alerts and flushes the output.
    pub fn finish(&self) -> Result<()> {
        let mut inner = self.inner.lock();
        let closed = inner.engine.finish();
        inner.persist(closed);
        if let Some(out) = inner.out.as_mut() {
            out.flush().map_err(|e| Error::io("flushing alerts", e))?;
        }
        Ok(())
    }

    pub fn counts(&self) -> AlertCounts {
        self.inner.lock().counts
    }

    /// Closed alerts kept by an in-memory hub, in close order.
    pub fn closed_alerts(&self) -> Vec<Alert> {
        self.inner.lock().written.clone()
    }
}

impl HubInner {
    fn persist(&mut self, closed: Vec<Alert>) {
        for alert in closed {
            if let Some(out) = self.out.as_mut() {
                let ok = serde_json::to_vec(&alert)
                    .map_err(std::io::Error::other)
                    .and_then(|mut line| {
                        line.push(b'\n');
                        out.write_all(&line)
                    });
                if let Err(e) = ok {
                    self.counts.write_errors += 1;
                    log::warn!("alert write failed: {e}");
                }
            }
            if self.keep {
                self.written.push(alert);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const S: u64 = 1_000_000_000;

    fn vib(cam: &str, t: u64) -> AnomalyEvent {
        AnomalyEvent::new(AnomalyKind::Vibration, cam, 0, t, 20.0, "").unwrap()
    }

    #[test]
    fn coalesces_within_window() {
        let mut e = AlertEngine::new(DebounceRule::default());
        let (first, _) = e.raise(vib("cam1", 0), false, 0);
        let RaiseOutcome::NewAlert(a) = first else { panic!() };
        assert_eq!(e.raise(vib("cam1", 4 * S), false, 0).0, RaiseOutcome::Coalesced(a.alert_id));
        let all = e.finish();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].coalesced_count, 2);
    }

    #[test]
    fn window_expiry_makes_new_alert() {
        let mut e = AlertEngine::new(DebounceRule::default());
        e.raise(vib("cam1", 0), false, 0);
        let (second, closed) = e.raise(vib("cam1", 15 * S), false, 0);
        assert!(matches!(second, RaiseOutcome::NewAlert(_)));
        assert_eq!(closed.len(), 1);
        assert_eq!(e.finish().len(), 1);
    }

    #[test]
    fn key_includes_camera() {
        let mut e = AlertEngine::new(DebounceRule::default());
        assert!(matches!(e.raise(vib("cam1", 0), false, 0).0, RaiseOutcome::NewAlert(_)));
        assert!(matches!(e.raise(vib("cam2", 0), false, 0).0, RaiseOutcome::NewAlert(_)));
        assert_eq!(e.finish().len(), 2);
    }

    #[test]
    fn suppressed_does_not_swallow_surfaced() {
        let mut e = AlertEngine::new(DebounceRule::default());
        e.raise(vib("cam1", 0), true, 0);
        assert!(matches!(e.raise(vib("cam1", S), false, 0).0, RaiseOutcome::NewAlert(_)));
    }

    #[test]
    fn hub_writes_ndjson() {
        let hub = AlertHub::new(DebounceRule::default(), Some(Box::new(Vec::new())));
        hub.raise(vib("cam1", 0), false, 0);
        hub.raise(vib("cam1", 30 * S), true, 0);
        hub.finish().unwrap();
        let c = hub.counts();
        assert_eq!((c.new_alerts, c.surfaced, c.suppressed), (2, 1, 1));
    }

    #[test]
    fn rejects_bad_window() {
        assert!(DebounceRule::new(0.0).is_err());
        assert!(DebounceRule::new(-3.0).is_err());
    }

    proptest! {
        #[test]
        fn debounce_bound(mut ts in prop::collection::vec(0u64..120_000, 1..200), window_s in 1.0f64..30.0) {
            ts.sort_unstable();
            let ms = 1_000_000u64;
            let mut e = AlertEngine::new(DebounceRule { window_s });
            let mut surfaced = 0u64;
            for &t in &ts {
                if let (RaiseOutcome::NewAlert(_), _) = e.raise(vib("c", t * ms), false, 0) {
                    surfaced += 1;
                }
            }
            let span_s = (ts.last().unwrap() - ts[0]) as f64 / 1000.0;
            // alert starts are more than window_s apart
            let bound = (span_s / window_s).floor() as u64 + 1;
            prop_assert!(surfaced <= bound, "{} alerts over {} s with window {}", surfaced, span_s, window_s);
        }
    }
}
