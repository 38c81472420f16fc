//! Process-signal bus and the gating / suppression rules that keep analytics
//! quiet when the plant state explains what the camera sees.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::net::{TcpListener, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{secs_to_ns, AnomalyEvent, MetricPoint, ProcessSignals, TimestampNs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PublishOutcome {
    Accepted,
    /// Older than the current snapshot; dropped and counted.
    Ignored,
}

#[derive(Debug, Clone)]
pub struct SignalRead {
    pub signals: Arc<ProcessSignals>,
    pub stale: bool,
}

/// Last-write-wins snapshot bus. One writer, any number of readers; a read
/// clones an `Arc` under a read lock, so readers never wait on each other.
#[derive(Debug)]
pub struct SignalBus {
    latest: RwLock<Option<Arc<ProcessSignals>>>,
    staleness_limit_ns: u64,
    stale_publishes: AtomicU64,
    published: AtomicU64,
    subscribers: AtomicU64,
}

impl SignalBus {
    pub fn new(staleness_limit_s: f64) -> Arc<Self> {
        Arc::new(SignalBus {
            latest: RwLock::new(None),
            staleness_limit_ns: secs_to_ns(staleness_limit_s),
            stale_publishes: AtomicU64::new(0),
            published: AtomicU64::new(0),
            subscribers: AtomicU64::new(0),
        })
    }

    pub fn publish(&self, signals: ProcessSignals) -> PublishOutcome {
        let mut latest = self.latest.write();
        if let Some(current) = latest.as_ref() {
            if signals.signal_ts < current.signal_ts {
                self.stale_publishes.fetch_add(1, Ordering::Relaxed);
                return PublishOutcome::Ignored;
            }
        }
        *latest = Some(Arc::new(signals));
        self.published.fetch_add(1, Ordering::Relaxed);
        PublishOutcome::Accepted
    }

    /// Latest snapshot, flagged stale when older than the limit at `now`.
    pub fn read(&self, now: TimestampNs) -> Option<SignalRead> {
        let signals = self.latest.read().clone()?;
        let stale = now.saturating_sub(signals.signal_ts) > self.staleness_limit_ns;
        Some(SignalRead { signals, stale })
    }

    pub fn stale_publishes(&self) -> u64 {
        self.stale_publishes.load(Ordering::Relaxed)
    }

    pub fn published(&self) -> u64 {
        self.published.load(Ordering::Relaxed)
    }

    pub fn subscribe(self: &Arc<Self>) -> Subscriber {
        self.subscribers.fetch_add(1, Ordering::Relaxed);
        Subscriber {
            bus: Arc::clone(self),
        }
    }

    pub fn subscriber_count(&self) -> u64 {
        self.subscribers.load(Ordering::Relaxed)
    }
}

/// Read handle held by a stage.
#[derive(Debug)]
pub struct Subscriber {
    bus: Arc<SignalBus>,
}

impl Subscriber {
    pub fn read(&self, now: TimestampNs) -> Option<SignalRead> {
        self.bus.read(now)
    }

    pub fn bus(&self) -> &Arc<SignalBus> {
        &self.bus
    }
}

impl Drop for Subscriber {
    fn drop(&mut self) {
        self.bus.subscribers.fetch_sub(1, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateMode {
    Active,
    Paused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PauseReason {
    MillIdle,
    GhostRolling,
    NoMaterial,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateState {
    pub mode: GateMode,
    pub reason: PauseReason,
    pub since: TimestampNs,
}

impl GateState {
    pub fn is_paused(&self) -> bool {
        self.mode == GateMode::Paused
    }
}

/// Gate decision for a signal read. Priority: ghost rolling, mill idle, no
/// material. Missing or stale signals pause as if the mill were idle.
pub fn evaluate_gate(read: Option<&SignalRead>) -> (GateMode, PauseReason) {
    let reason = match read {
        None => PauseReason::MillIdle,
        Some(r) if r.stale => PauseReason::MillIdle,
        Some(r) => {
            let s = &r.signals;
            if s.ghost_rolling {
                PauseReason::GhostRolling
            } else if !s.mill_running {
                PauseReason::MillIdle
            } else if !s.material_present {
                PauseReason::NoMaterial
            } else {
                PauseReason::None
            }
        }
    };
    let mode = if reason == PauseReason::None {
        GateMode::Active
    } else {
        GateMode::Paused
    };
    (mode, reason)
}

/// Keeps `since` across repeated identical decisions.
#[derive(Debug, Clone)]
pub struct GateTracker {
    state: Option<GateState>,
}

impl GateTracker {
    pub fn new() -> Self {
        GateTracker { state: None }
    }

    pub fn update(&mut self, read: Option<&SignalRead>, now: TimestampNs) -> GateState {
        let (mode, reason) = evaluate_gate(read);
        match self.state {
            Some(s) if s.mode == mode && s.reason == reason => s,
            _ => {
                let s = GateState {
                    mode,
                    reason,
                    since: now,
                };
                self.state = Some(s);
                s
            }
        }
    }
}

impl Default for GateTracker {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Default)]
pub struct GatedOutput {
    pub events: Vec<AnomalyEvent>,
    pub metrics: Vec<MetricPoint>,
    pub gated: usize,
}

/// Drops every event while paused; metrics always pass, tagged `gate=paused`
/// when paused.
pub fn apply_gate(gate: &GateState, events: Vec<AnomalyEvent>, metrics: Vec<MetricPoint>) -> GatedOutput {
    if !gate.is_paused() {
        return GatedOutput {
            events,
            metrics,
            gated: 0,
        };
    }
    GatedOutput {
        gated: events.len(),
        events: Vec::new(),
        metrics: metrics
            .into_iter()
            .map(|m| m.with_tag("gate", "paused").expect("static tag key"))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suppression {
    Pass,
    Suppressed,
}

/// Billet-length events during a dividing cut (plus grace) are expected, not faults.
pub fn suppress_dividing_cut(event: &AnomalyEvent, signals: &ProcessSignals, grace_ns: u64) -> Suppression {
    if event.kind.is_billet_length()
        && signals.dividing_cut_active
        && event.ts <= signals.dividing_cut_until.saturating_add(grace_ns)
    {
        Suppression::Suppressed
    } else {
        Suppression::Pass
    }
}

/// Remembers the latest active dividing-cut snapshot so the grace period
/// still applies after the window has closed on the bus.
#[derive(Debug, Default, Clone)]
pub struct CutMemory {
    last_active: Option<ProcessSignals>,
}

impl CutMemory {
    pub fn observe(&mut self, signals: &ProcessSignals) {
        if signals.dividing_cut_active {
            self.last_active = Some(signals.clone());
        }
    }

    /// Snapshot to judge suppression against: the current one while a cut is
    /// on, else the last cut seen.
    pub fn effective<'a>(&'a self, current: &'a ProcessSignals) -> &'a ProcessSignals {
        if current.dividing_cut_active {
            current
        } else {
            self.last_active.as_ref().unwrap_or(current)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Gate analytics on process signals. Off means always active.
    pub gate_enabled: bool,
    pub suppression_enabled: bool,
    pub grace_s: f64,
    pub staleness_limit_s: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            gate_enabled: true,
            suppression_enabled: true,
            grace_s: 2.0,
            staleness_limit_s: 5.0,
        }
    }
}

/// Where the signal stream for a camera comes from.
#[derive(Debug, Clone)]
pub enum SignalFeed {
    /// Snapshots published as frame time passes them (simulator or file).
    Scripted(Arc<Vec<ProcessSignals>>),
    /// Someone else publishes onto the bus (TCP feed).
    External,
    /// No signals: treat the plant as always running.
    AlwaysRunning,
}

/// Per-camera fusion stage: pumps scripted signals, gates, suppresses.
pub struct FusionStage {
    config: FusionConfig,
    bus: Arc<SignalBus>,
    subscriber: Subscriber,
    feed: SignalFeed,
    next_scripted: usize,
    gate: GateTracker,
    cuts: CutMemory,
    pub gated: u64,
    pub suppressed: u64,
}

#[derive(Debug)]
pub struct FusionVerdict {
    pub gate: GateState,
    /// Events that passed the gate, each with its suppression flag.
    pub events: Vec<(AnomalyEvent, bool)>,
    pub metrics: Vec<MetricPoint>,
}

impl FusionStage {
    pub fn new(config: FusionConfig, bus: Arc<SignalBus>, feed: SignalFeed) -> Self {
        FusionStage {
            subscriber: bus.subscribe(),
            config,
            bus,
            feed,
            next_scripted: 0,
            gate: GateTracker::new(),
            cuts: CutMemory::default(),
            gated: 0,
            suppressed: 0,
        }
    }

    pub fn bus(&self) -> &Arc<SignalBus> {
        &self.bus
    }

    pub fn process(&mut self, ts: TimestampNs, events: Vec<AnomalyEvent>, metrics: Vec<MetricPoint>) -> FusionVerdict {
        if let SignalFeed::Scripted(script) = &self.feed {
            while let Some(s) = script.get(self.next_scripted) {
                if s.signal_ts > ts {
                    break;
                }
                // a cut can open and close between two frames
                self.cuts.observe(s);
                self.bus.publish(s.clone());
                self.next_scripted += 1;
            }
        }
        let read = match self.feed {
            SignalFeed::AlwaysRunning => Some(SignalRead {
                signals: Arc::new(ProcessSignals::running(ts)),
                stale: false,
            }),
            _ => self.subscriber.read(ts),
        };
        if let Some(r) = &read {
            self.cuts.observe(&r.signals);
        }
        let gate = if self.config.gate_enabled {
            self.gate.update(read.as_ref(), ts)
        } else {
            self.gate.update(
                Some(&SignalRead {
                    signals: Arc::new(ProcessSignals::running(ts)),
                    stale: false,
                }),
                ts,
            )
        };
        let gated = apply_gate(&gate, events, metrics);
        self.gated += gated.gated as u64;

        let grace = secs_to_ns(self.config.grace_s);
        let events = gated
            .events
            .into_iter()
            .map(|e| {
                let suppressed = self.config.suppression_enabled
                    && read.as_ref().is_some_and(|r| {
                        suppress_dividing_cut(&e, self.cuts.effective(&r.signals), grace)
                            == Suppression::Suppressed
                    });
                if suppressed {
                    self.suppressed += 1;
                }
                (e, suppressed)
            })
            .collect();
        FusionVerdict {
            gate,
            events,
            metrics: gated.metrics,
        }
    }
}

/// Reads an NDJSON file of `ProcessSignals`, one per line.
pub fn read_signals(path: &Path) -> Result<Vec<ProcessSignals>> {
    let file = File::open(path)
        .map_err(|e| Error::io(format!("opening signals {}", path.display()), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading signals {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: ProcessSignals = serde_json::from_str(&line).map_err(|e| Error::Replay {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(s);
    }
    out.sort_by_key(|s| s.signal_ts);
    Ok(out)
}

/// Accepts TCP connections and publishes each NDJSON line as a snapshot.
/// Malformed lines are logged and skipped.
pub fn spawn_tcp_feed(addr: impl ToSocketAddrs, bus: Arc<SignalBus>) -> Result<(std::net::SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).map_err(|e| Error::io("binding signal feed", e))?;
    let local = listener
        .local_addr()
        .map_err(|e| Error::io("signal feed address", e))?;
    let handle = std::thread::Builder::new()
        .name("signal-feed".into())
        .spawn(move || {
            for conn in listener.incoming() {
                let Ok(conn) = conn else { continue };
                let bus = Arc::clone(&bus);
                std::thread::spawn(move || {
                    for line in BufReader::new(conn).lines() {
                        let Ok(line) = line else { break };
                        match serde_json::from_str::<ProcessSignals>(&line) {
                            Ok(s) => {
                                bus.publish(s);
                            }
                            Err(e) => log::warn!("signal feed: skipping bad line: {e}"),
                        }
                    }
                });
            }
        })
        .map_err(|e| Error::io("spawning signal feed", e))?;
    Ok((local, handle))
}
