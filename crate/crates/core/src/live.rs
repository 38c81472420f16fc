//! State shared between running pipelines and the operator surface.
//!
//! Writers never wait on readers: the per-camera frame slot is swapped under
//! a short lock and readers clone an `Arc`, so a slow viewer only ever sees
//! fewer frames.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::fusion::GateState;
use crate::types::{Alert, AnomalyEvent, Detection, Frame};

/// Surfaced alerts kept for the operator endpoint.
pub const ALERT_LOG_CAPACITY: usize = 1000;

/// Everything needed to draw one annotated frame.
#[derive(Debug, Clone)]
pub struct LiveSnapshot {
    pub frame: Frame,
    pub detections: Vec<Detection>,
    /// Events from roughly the last second, for markers.
    pub recent_events: Vec<AnomalyEvent>,
    pub gate: GateState,
}

#[derive(Debug, Default)]
struct CameraSlot {
    latest: Mutex<Option<Arc<LiveSnapshot>>>,
    version: AtomicU64,
    counters: LiveCounters,
}

/// Running per-camera counters.
#[derive(Debug, Default)]
pub struct LiveCounters {
    pub acquired: AtomicU64,
    pub rejected: AtomicU64,
    pub dropped: AtomicU64,
    pub processed: AtomicU64,
    pub events: AtomicU64,
    pub gated: AtomicU64,
    pub suppressed: AtomicU64,
    pub latency_us_total: AtomicU64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub camera_id: String,
    pub acquired: u64,
    pub rejected: u64,
    pub dropped: u64,
    pub processed: u64,
    pub events: u64,
    pub gated: u64,
    pub suppressed: u64,
    pub mean_latency_ms: Option<f64>,
    pub paused: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum StageStatus {
    Running,
    Finished,
    Halted(String),
}

#[derive(Debug, Default)]
pub struct LiveState {
    cameras: RwLock<BTreeMap<String, Arc<CameraSlot>>>,
    alerts: Mutex<VecDeque<Alert>>,
    stages: Mutex<BTreeMap<String, StageStatus>>,
}

impl LiveState {
    pub fn new() -> Arc<Self> {
        Arc::new(LiveState::default())
    }

    pub fn register_camera(&self, camera_id: &str) {
        self.cameras
            .write()
            .entry(camera_id.to_string())
            .or_default();
    }

    fn slot(&self, camera_id: &str) -> Option<Arc<CameraSlot>> {
        self.cameras.read().get(camera_id).cloned()
    }

    pub fn camera_ids(&self) -> Vec<String> {
        self.cameras.read().keys().cloned().collect()
    }

    pub fn has_camera(&self, camera_id: &str) -> bool {
        self.cameras.read().contains_key(camera_id)
    }

    pub fn publish_frame(&self, snapshot: LiveSnapshot) {
        let camera_id = snapshot.frame.camera_id().to_string();
        let slot = match self.slot(&camera_id) {
            Some(s) => s,
            None => {
                self.register_camera(&camera_id);
                self.slot(&camera_id).expect("just registered")
            }
        };
        *slot.latest.lock() = Some(Arc::new(snapshot));
        slot.version.fetch_add(1, Ordering::Release);
    }

    /// Latest snapshot and its version; the version changes on every publish.
    pub fn latest_frame(&self, camera_id: &str) -> Option<(u64, Arc<LiveSnapshot>)> {
        let slot = self.slot(camera_id)?;
        let snap = slot.latest.lock().clone()?;
        Some((slot.version.load(Ordering::Acquire), snap))
    }

    pub fn frame_version(&self, camera_id: &str) -> Option<u64> {
        self.slot(camera_id).map(|s| s.version.load(Ordering::Acquire))
    }

    /// Runs `f` on the camera's counters, registering the camera if needed.
    pub fn with_counters(&self, camera_id: &str, f: impl FnOnce(&LiveCounters)) {
        if self.slot(camera_id).is_none() {
            self.register_camera(camera_id);
        }
        if let Some(slot) = self.slot(camera_id) {
            f(&slot.counters);
        }
    }

    pub fn counters(&self) -> Vec<CounterSnapshot> {
        self.cameras
            .read()
            .iter()
            .map(|(id, slot)| {
                let c = &slot.counters;
                let processed = c.processed.load(Ordering::Relaxed);
                let latency = c.latency_us_total.load(Ordering::Relaxed);
                CounterSnapshot {
                    camera_id: id.clone(),
                    acquired: c.acquired.load(Ordering::Relaxed),
                    rejected: c.rejected.load(Ordering::Relaxed),
                    dropped: c.dropped.load(Ordering::Relaxed),
                    processed,
                    events: c.events.load(Ordering::Relaxed),
                    gated: c.gated.load(Ordering::Relaxed),
                    suppressed: c.suppressed.load(Ordering::Relaxed),
                    mean_latency_ms: (processed > 0).then(|| latency as f64 / processed as f64 / 1000.0),
                    paused: slot.latest.lock().as_ref().map(|s| s.gate.is_paused()),
                }
            })
            .collect()
    }

    /// Logs a new alert. Suppressed alerts are never shown to operators.
    pub fn record_alert(&self, alert: Alert) {
        if alert.suppressed {
            return;
        }
        let mut log = self.alerts.lock();
        if log.len() == ALERT_LOG_CAPACITY {
            log.pop_front();
        }
        log.push_back(alert);
    }

    pub fn coalesce_alert(&self, alert_id: u64) {
        if let Some(a) = self
            .alerts
            .lock()
            .iter_mut()
            .rev()
            .find(|a| a.alert_id == alert_id)
        {
            a.coalesced_count += 1;
        }
    }

    /// The newest `limit` surfaced alerts, oldest first.
    pub fn recent_alerts(&self, limit: usize) -> Vec<Alert> {
        let log = self.alerts.lock();
        log.iter().skip(log.len().saturating_sub(limit)).cloned().collect()
    }

    pub fn set_stage(&self, stage: &str, status: StageStatus) {
        self.stages.lock().insert(stage.to_string(), status);
    }

    pub fn halt_stage(&self, stage: &str, reason: &str) {
        self.set_stage(stage, StageStatus::Halted(reason.to_string()));
    }

    pub fn stages(&self) -> BTreeMap<String, StageStatus> {
        self.stages.lock().clone()
    }

    pub fn halted_stages(&self) -> Vec<String> {
        self.stages
            .lock()
            .iter()
            .filter(|(_, s)| matches!(s, StageStatus::Halted(_)))
            .map(|(k, _)| k.clone())
            .collect()
    }
}
