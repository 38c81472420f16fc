//! Time sources. Everything downstream asks a [`Clock`] instead of the OS so
//! tests can drive time by hand.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::types::TimestampNs;

pub trait Clock: Send + Sync {
    /// Nanoseconds since the Unix epoch. Never goes backwards within a process.
    fn now(&self) -> TimestampNs;
}

/// Wall clock anchored to the system time at construction and advanced by a
/// monotonic `Instant`, so NTP steps cannot make it run backwards.
#[derive(Debug, Clone)]
pub struct WallClock {
    anchor_ns: u64,
    anchor: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        let anchor_ns = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        WallClock {
            anchor_ns,
            anchor: Instant::now(),
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> TimestampNs {
        self.anchor_ns + self.anchor.elapsed().as_nanos() as u64
    }
}

/// Hand-driven clock for deterministic runs.
#[derive(Debug, Default)]
pub struct SimClock {
    ns: AtomicU64,
}

impl SimClock {
    pub fn new(start: TimestampNs) -> Self {
        SimClock {
            ns: AtomicU64::new(start),
        }
    }

    pub fn advance(&self, delta_ns: u64) {
        self.ns.fetch_add(delta_ns, Ordering::SeqCst);
    }

    /// Moves the clock forward to `ts`; earlier values are ignored.
    pub fn advance_to(&self, ts: TimestampNs) {
        self.ns.fetch_max(ts, Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now(&self) -> TimestampNs {
        self.ns.load(Ordering::SeqCst)
    }
}
