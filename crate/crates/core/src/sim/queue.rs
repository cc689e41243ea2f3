use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::time::Duration;

use super::{SimError, SimTime};

/// Cancellation token returned by [`EventQueue::schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Entry<E> {
    at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; invert so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Virtual clock plus pending events. Events with equal timestamps dispatch in
/// the order they were scheduled.
pub struct EventQueue<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<E>>,
    cancelled: HashSet<u64>,
    dispatched: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue { now: SimTime::ZERO, next_seq: 0, heap: BinaryHeap::new(), cancelled: HashSet::new(), dispatched: 0 }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events popped so far.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn schedule(&mut self, event: E, at: SimTime) -> Result<EventHandle, SimError> {
        if at < self.now {
            return Err(SimError::PastTimestamp { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { at, seq, event });
        Ok(EventHandle(seq))
    }

    pub fn schedule_in(&mut self, event: E, delay: Duration) -> EventHandle {
        let at = self.now + delay;
        self.schedule(event, at).expect("now + delay is never in the past")
    }

    /// Returns false if the event already fired or was cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_seq || !self.heap.iter().any(|e| e.seq == handle.0) {
            return false;
        }
        self.cancelled.insert(handle.0)
    }

    /// Pops the next event if it is due at or before `limit`, advancing the clock
    /// to its timestamp.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<(SimTime, E)> {
        loop {
            let head = self.heap.peek()?;
            if head.at > limit {
                return None;
            }
            let entry = self.heap.pop().expect("peeked");
            if !self.cancelled.is_empty() && self.cancelled.remove(&entry.seq) {
                continue;
            }
            self.now = entry.at;
            self.dispatched += 1;
            return Some((entry.at, entry.event));
        }
    }

    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        self.pop_until(SimTime::MAX)
    }

    /// Moves the clock forward without dispatching. No-op if `t` is not ahead.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Dispatches every event due at or before `t`, then sets the clock to `t`.
    /// The handler may schedule further events.
    pub fn run_until(&mut self, t: SimTime, mut handler: impl FnMut(&mut Self, E)) {
        while let Some((_, event)) = self.pop_until(t) {
            handler(self, event);
        }
        self.advance_to(t);
    }

    /// Dispatches events until `stop` holds after a dispatch, or until the next
    /// event lies beyond `limit`. Returns true if the predicate fired; the clock
    /// then rests at the instant it became true.
    pub fn run_until_predicate(
        &mut self,
        limit: SimTime,
        mut handler: impl FnMut(&mut Self, E),
        mut stop: impl FnMut(&Self) -> bool,
    ) -> bool {
        if stop(self) {
            return true;
        }
        while let Some((_, event)) = self.pop_until(limit) {
            handler(self, event);
            if stop(self) {
                return true;
            }
        }
        self.advance_to(limit);
        false
    }
}
