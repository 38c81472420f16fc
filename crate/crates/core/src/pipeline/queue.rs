use std::collections::VecDeque;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_QUEUE_CAPACITY: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueuePolicy {
    /// Producer waits for room; nothing is ever dropped.
    Block,
    /// A full queue evicts its oldest item to admit the new one.
    DropOldest,
}

/// Items that carry a sequence number, reported when evicted.
pub trait Sequenced {
    fn seq(&self) -> u64;
}

impl Sequenced for u64 {
    fn seq(&self) -> u64 {
        *self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    /// Admitted after evicting the item with this sequence number.
    Dropped(u64),
}

/// The queue was closed; the rejected item is handed back.
#[derive(Debug)]
pub struct Closed<T>(pub T);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueCounters {
    pub capacity: usize,
    pub policy: QueuePolicy,
    pub enqueued: u64,
    pub dequeued: u64,
    pub dropped: u64,
    pub occupancy: usize,
    pub peak_occupancy: usize,
}

impl QueueCounters {
    /// `enqueued = dequeued + dropped + occupancy`.
    pub fn conserved(&self) -> bool {
        self.enqueued == self.dequeued + self.dropped + self.occupancy as u64
    }
}

struct State<T> {
    items: VecDeque<T>,
    closed: bool,
    enqueued: u64,
    dequeued: u64,
    dropped: u64,
    peak: usize,
}

/// Bounded FIFO between two pipeline stages.
pub struct BoundedQueue<T> {
    capacity: usize,
    policy: QueuePolicy,
    state: Mutex<State<T>>,
    not_empty: Condvar,
    not_full: Condvar,
}

impl<T: Sequenced> BoundedQueue<T> {
    pub fn new(capacity: usize, policy: QueuePolicy) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Invalid("queue capacity must be > 0".into()));
        }
        Ok(BoundedQueue {
            capacity,
            policy,
            state: Mutex::new(State {
                items: VecDeque::with_capacity(capacity.min(4096)),
                closed: false,
                enqueued: 0,
                dequeued: 0,
                dropped: 0,
                peak: 0,
            }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
        })
    }

    pub fn push(&self, item: T) -> std::result::Result<EnqueueOutcome, Closed<T>> {
        let mut st = self.state.lock();
        let mut outcome = EnqueueOutcome::Accepted;
        loop {
            if st.closed {
                return Err(Closed(item));
            }
            if st.items.len() < self.capacity {
                break;
            }
            match self.policy {
                QueuePolicy::Block => self.not_full.wait(&mut st),
                QueuePolicy::DropOldest => {
                    let old = st.items.pop_front().expect("full queue has a head");
                    st.dropped += 1;
                    outcome = EnqueueOutcome::Dropped(old.seq());
                }
            }
        }
        st.items.push_back(item);
        st.enqueued += 1;
        st.peak = st.peak.max(st.items.len());
        drop(st);
        self.not_empty.notify_one();
        Ok(outcome)
    }

    /// Blocks until an item is available; `None` once closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut st = self.state.lock();
        loop {
            if let Some(item) = st.items.pop_front() {
                st.dequeued += 1;
                drop(st);
                self.not_full.notify_one();
                return Some(item);
            }
            if st.closed {
                return None;
            }
            self.not_empty.wait(&mut st);
        }
    }

    pub fn try_pop(&self) -> Option<T> {
        let mut st = self.state.lock();
        let item = st.items.pop_front()?;
        st.dequeued += 1;
        drop(st);
        self.not_full.notify_one();
        Some(item)
    }

    /// Rejects further pushes. Queued items can still be popped.
    pub fn close(&self) {
        self.state.lock().closed = true;
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.state.lock().closed
    }

    pub fn len(&self) -> usize {
        self.state.lock().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counters(&self) -> QueueCounters {
        let st = self.state.lock();
        QueueCounters {
            capacity: self.capacity,
            policy: self.policy,
            enqueued: st.enqueued,
            dequeued: st.dequeued,
            dropped: st.dropped,
            occupancy: st.items.len(),
            peak_occupancy: st.peak,
        }
    }
}
