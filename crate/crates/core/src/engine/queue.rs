use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use thiserror::Error;

use super::SimTime;

/// Handle returned by [`EventQueue::schedule`]; used to cancel a pending event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn seq(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("event scheduled in the past: fire_at {fire_at} < clock {now}")]
    InPast { fire_at: SimTime, now: SimTime },
}

struct Entry<E> {
    fire_at: SimTime,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.fire_at, self.seq) == (other.fire_at, other.seq)
    }
}
impl<E> Eq for Entry<E> {}
impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.fire_at, self.seq).cmp(&(other.fire_at, other.seq))
    }
}

/// Priority queue ordered by `(fire_at, seq)`. The clock advances to the
/// timestamp of each dispatched event and never goes backwards.
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<Entry<E>>>,
    cancelled: HashSet<u64>,
    next_seq: u64,
    now: SimTime,
    last_dispatched: Option<(SimTime, u64)>,
    dispatched: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            next_seq: 0,
            now: SimTime::ZERO,
            last_dispatched: None,
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Sequence number of the most recently dispatched event.
    pub fn current_seq(&self) -> Option<u64> {
        self.last_dispatched.map(|(_, s)| s)
    }

    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn try_schedule(&mut self, fire_at: SimTime, payload: E) -> Result<EventHandle, ScheduleError> {
        if fire_at < self.now {
            return Err(ScheduleError::InPast { fire_at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { fire_at, seq, payload }));
        Ok(EventHandle(seq))
    }

    /// Schedules `payload` at `fire_at`.
    ///
    /// Panics when `fire_at` lies before the current clock: that is always a
    /// logic error in the caller.
    pub fn schedule(&mut self, fire_at: SimTime, payload: E) -> EventHandle {
        match self.try_schedule(fire_at, payload) {
            Ok(h) => h,
            Err(e) => panic!("{e}"),
        }
    }

    pub fn schedule_in(&mut self, delay: SimTime, payload: E) -> EventHandle {
        let at = self.now + delay;
        self.schedule(at, payload)
    }

    /// Cancels a pending event. Cancelling an event that already fired is a
    /// caller bug and is ignored in release builds.
    pub fn cancel(&mut self, handle: EventHandle) {
        debug_assert!(handle.0 < self.next_seq);
        self.cancelled.insert(handle.0);
    }

    /// Pops the next live event with `fire_at < horizon`, advancing the clock.
    pub fn pop_before(&mut self, horizon: SimTime) -> Option<(SimTime, E)> {
        loop {
            let head = self.heap.peek()?;
            if head.0.fire_at >= horizon {
                return None;
            }
            let Reverse(entry) = self.heap.pop().expect("peeked");
            if self.cancelled.remove(&entry.seq) {
                continue;
            }
            let key = (entry.fire_at, entry.seq);
            if let Some(last) = self.last_dispatched {
                assert!(key > last, "dispatch order violated: {key:?} after {last:?}");
            }
            self.last_dispatched = Some(key);
            self.now = entry.fire_at;
            self.dispatched += 1;
            return Some((entry.fire_at, entry.payload));
        }
    }

    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        self.pop_before(SimTime::MAX)
    }

    /// Moves the clock forward without dispatching (used at the end of a run).
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }
}
