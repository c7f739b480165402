//! Discrete-event engine with `(time, seq)` ordering.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("cannot schedule an event at {time} s, the clock is already at {clock} s")]
    InThePast { time: f64, clock: f64 },
    #[error("event time must be finite, got {0}")]
    NotFinite(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<A> {
    pub time: f64,
    pub seq: u64,
    pub action: A,
}

struct Queued<A>(Event<A>);

impl<A> PartialEq for Queued<A> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<A> Eq for Queued<A> {}

impl<A> PartialOrd for Queued<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for Queued<A> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .time
            .total_cmp(&self.0.time)
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

/// Single-threaded event queue. The clock only moves forward.
pub struct Engine<A> {
    clock: f64,
    next_seq: u64,
    queue: BinaryHeap<Queued<A>>,
}

impl<A> Engine<A> {
    pub fn new(start: f64) -> Self {
        Self {
            clock: start,
            next_seq: 0,
            queue: BinaryHeap::new(),
        }
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Queues `action` at `time` and returns its sequence number.
    pub fn schedule(&mut self, time: f64, action: A) -> Result<u64, EngineError> {
        if !time.is_finite() {
            return Err(EngineError::NotFinite(time));
        }
        if time < self.clock {
            return Err(EngineError::InThePast { time, clock: self.clock });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event { time, seq, action }));
        Ok(seq)
    }

    /// Removes the earliest event and moves the clock to it.
    pub fn pop(&mut self) -> Option<Event<A>> {
        let Queued(ev) = self.queue.pop()?;
        self.clock = ev.time;
        Some(ev)
    }

    fn next_time(&self) -> Option<f64> {
        self.queue.peek().map(|q| q.0.time)
    }

    /// Dispatches every event with `time <= until`, including events the
    /// handler schedules along the way, then sets the clock to `until`.
    /// Returns the number of dispatched events.
    pub fn run_until<E, F>(&mut self, until: f64, mut handler: F) -> Result<usize, E>
    where
        F: FnMut(&mut Self, Event<A>) -> Result<(), E>,
        E: From<EngineError>,
    {
        if until < self.clock {
            return Err(EngineError::InThePast {
                time: until,
                clock: self.clock,
            }
            .into());
        }
        let mut n = 0;
        while self.next_time().is_some_and(|t| t <= until) {
            let ev = self.pop().expect("peeked");
            handler(self, ev)?;
            n += 1;
        }
        if until.is_finite() {
            self.clock = until;
        }
        Ok(n)
    }

    /// Dispatches events until the queue is empty.
    pub fn run<E, F>(&mut self, handler: F) -> Result<usize, E>
    where
        F: FnMut(&mut Self, Event<A>) -> Result<(), E>,
        E: From<EngineError>,
    {
        self.run_until(f64::INFINITY, handler)
    }
}
