//! Discrete-event core: a microsecond clock, a `(fire_at, seq)`-ordered
//! event queue with cancellation, and named seeded random streams.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Simulated time in whole microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Rounds to the nearest microsecond; negative and NaN inputs map to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if s.is_nan() || s <= 0.0 {
            SimTime::ZERO
        } else {
            SimTime((s * 1e6).round() as u64)
        }
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    pub fn checked_sub(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_sub(rhs.0).map(SimTime)
    }

    /// `self * factor`, saturating.
    pub fn scaled(self, factor: u64) -> SimTime {
        SimTime(self.0.saturating_mul(factor))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        self.saturating_sub(rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// Token returned by [`EventQueue::schedule`], used to cancel the event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn seq(self) -> u64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CancelResult {
    /// The event was pending and will now never fire.
    Cancelled,
    AlreadyCancelled,
    AlreadyFired,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("cannot schedule at {at}: clock is already at {now}")]
    InPast { at: SimTime, now: SimTime },
    #[error("cannot run until {end}: clock is already at {now}")]
    EndInPast { end: SimTime, now: SimTime },
}

/// An event popped from the queue.
#[derive(Debug, Clone, PartialEq)]
pub struct Scheduled<E> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub payload: E,
}

struct Entry<E> {
    key: Reverse<(SimTime, u64)>,
    payload: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
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
        self.key.cmp(&other.key)
    }
}

/// Pending events ordered by `(fire_at, seq)`, where `seq` is the insertion
/// counter. The clock only moves forward.
pub struct EventQueue<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<E>>,
    pending: HashSet<u64>,
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
        EventQueue {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            pending: HashSet::new(),
            cancelled: HashSet::new(),
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of live (not cancelled, not fired) events.
    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Total events dispatched so far.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn schedule(&mut self, fire_at: SimTime, payload: E) -> Result<EventHandle, EngineError> {
        if fire_at < self.now {
            return Err(EngineError::InPast {
                at: fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry {
            key: Reverse((fire_at, seq)),
            payload,
        });
        self.pending.insert(seq);
        Ok(EventHandle(seq))
    }

    /// Schedules relative to the current clock; never fails.
    pub fn schedule_in(&mut self, delay: SimTime, payload: E) -> EventHandle {
        let at = self.now + delay;
        self.schedule(at, payload)
            .expect("now + delay is never in the past")
    }

    pub fn cancel(&mut self, handle: EventHandle) -> CancelResult {
        if self.pending.remove(&handle.0) {
            self.cancelled.insert(handle.0);
            CancelResult::Cancelled
        } else if self.cancelled.contains(&handle.0) {
            CancelResult::AlreadyCancelled
        } else {
            CancelResult::AlreadyFired
        }
    }

    /// Pops the next live event with `fire_at <= end`, advancing the clock
    /// to its time.
    pub fn pop_until(&mut self, end: SimTime) -> Option<Scheduled<E>> {
        loop {
            let Reverse((at, seq)) = self.heap.peek()?.key;
            if at > end {
                return None;
            }
            let entry = self.heap.pop().expect("peeked");
            if !self.pending.remove(&seq) {
                // cancelled
                continue;
            }
            debug_assert!(at >= self.now);
            self.now = at;
            self.dispatched += 1;
            return Some(Scheduled {
                fire_at: at,
                seq,
                payload: entry.payload,
            });
        }
    }

    /// Moves the clock to `end` without dispatching anything.
    pub fn advance_to(&mut self, end: SimTime) -> Result<(), EngineError> {
        if end < self.now {
            return Err(EngineError::EndInPast { end, now: self.now });
        }
        self.now = end;
        Ok(())
    }

    /// Dispatches every event with `fire_at <= end` in `(fire_at, seq)`
    /// order. The handler may schedule further events, including ones at the
    /// current instant, which are dispatched in the same call.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> Result<u64, EngineError>
    where
        F: FnMut(&mut Self, Scheduled<E>),
    {
        if end < self.now {
            return Err(EngineError::EndInPast { end, now: self.now });
        }
        let mut count = 0;
        while let Some(ev) = self.pop_until(end) {
            count += 1;
            handler(self, ev);
        }
        self.now = end;
        Ok(count)
    }
}

/// Labels for the independent random streams of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamId {
    Mobility,
    Traffic,
    Adversary,
    Jitter,
}

impl StreamId {
    fn word(self) -> u64 {
        match self {
            StreamId::Mobility => 1,
            StreamId::Traffic => 2,
            StreamId::Adversary => 3,
            StreamId::Jitter => 4,
        }
    }
}

pub type RngStream = ChaCha8Rng;

/// Builds the generator for `(seed, stream)`. Streams share the key and
/// differ in the ChaCha stream word, so draws on one never shift another.
pub fn rng_stream(seed: u64, id: StreamId) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id.word());
    rng
}

pub struct RngStreams {
    pub mobility: RngStream,
    pub traffic: RngStream,
    pub adversary: RngStream,
    pub jitter: RngStream,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams {
            mobility: rng_stream(seed, StreamId::Mobility),
            traffic: rng_stream(seed, StreamId::Traffic),
            adversary: rng_stream(seed, StreamId::Adversary),
            jitter: rng_stream(seed, StreamId::Jitter),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn schedule_at_zero_fires_first() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(1), "late").unwrap();
        q.schedule(SimTime::ZERO, "first").unwrap();
        let ev = q.pop_until(SimTime::MAX).unwrap();
        assert_eq!(ev.payload, "first");
        assert_eq!(ev.fire_at, SimTime::ZERO);
    }

    #[test]
    fn same_time_dispatches_in_insertion_order() {
        let mut q = EventQueue::new();
        let t = SimTime::from_secs(5);
        q.schedule(t, 'A').unwrap();
        q.schedule(t, 'B').unwrap();
        let mut log = Vec::new();
        q.run_until(SimTime::from_secs(10), |_, ev| log.push(ev.payload))
            .unwrap();
        assert_eq!(log, vec!['A', 'B']);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut q: EventQueue<()> = EventQueue::new();
        q.advance_to(SimTime::from_secs(4)).unwrap();
        assert_eq!(
            q.schedule(SimTime::from_secs(3), ()),
            Err(EngineError::InPast {
                at: SimTime::from_secs(3),
                now: SimTime::from_secs(4)
            })
        );
    }

    #[test]
    fn empty_run_moves_clock() {
        let mut q: EventQueue<()> = EventQueue::new();
        let n = q.run_until(SimTime::from_secs(10), |_, _| {}).unwrap();
        assert_eq!(n, 0);
        assert_eq!(q.now(), SimTime::from_secs(10));
    }

    #[test]
    fn run_until_stops_at_end_inclusive() {
        let mut q = EventQueue::new();
        for s in 1..=3 {
            q.schedule(SimTime::from_secs(s), s).unwrap();
        }
        let n = q.run_until(SimTime::from_secs(2), |_, _| {}).unwrap();
        assert_eq!(n, 2);
        assert_eq!(q.len(), 1);
        assert_eq!(q.now(), SimTime::from_secs(2));
    }

    #[test]
    fn child_at_same_instant_runs_in_same_call() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(1), 0u32).unwrap();
        let mut log = Vec::new();
        let n = q
            .run_until(SimTime::from_secs(1), |q, ev| {
                log.push((ev.fire_at, ev.payload));
                if ev.payload == 0 {
                    q.schedule(ev.fire_at, 1).unwrap();
                }
            })
            .unwrap();
        assert_eq!(n, 2);
        assert_eq!(
            log,
            vec![(SimTime::from_secs(1), 0), (SimTime::from_secs(1), 1)]
        );
    }

    #[test]
    fn cancel_semantics() {
        let mut q = EventQueue::new();
        let pending = q.schedule(SimTime::from_secs(1), "timer").unwrap();
        let fired = q.schedule(SimTime::ZERO, "now").unwrap();
        assert_eq!(q.cancel(pending), CancelResult::Cancelled);
        assert_eq!(q.cancel(pending), CancelResult::AlreadyCancelled);
        let mut log = Vec::new();
        q.run_until(SimTime::from_secs(5), |_, ev| log.push(ev.payload))
            .unwrap();
        assert_eq!(log, vec!["now"]);
        assert_eq!(q.cancel(fired), CancelResult::AlreadyFired);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |id| {
            let mut r = rng_stream(7, id);
            (0..8).map(|_| r.gen::<u64>()).collect::<Vec<_>>()
        };
        assert_eq!(draw(StreamId::Mobility), draw(StreamId::Mobility));
        assert_ne!(draw(StreamId::Mobility), draw(StreamId::Traffic));
    }

    #[test]
    fn secs_conversion_rounds_to_micros() {
        assert_eq!(SimTime::from_secs_f64(0.5).as_micros(), 500_000);
        assert_eq!(SimTime::from_secs_f64(-1.0), SimTime::ZERO);
        assert_eq!(SimTime::from_millis(1_500).to_string(), "1.500000");
    }

    proptest! {
        #[test]
        fn dispatch_order_matches_offline_sort(times in prop::collection::vec(0u64..50, 0..200)) {
            let mut q = EventQueue::new();
            let mut expected = Vec::new();
            for (i, t) in times.iter().enumerate() {
                let h = q.schedule(SimTime::from_micros(*t), i).unwrap();
                expected.push((*t, h.seq(), i));
            }
            expected.sort();
            let mut got = Vec::new();
            let mut last = SimTime::ZERO;
            q.run_until(SimTime::from_micros(100), |q, ev| {
                assert!(ev.fire_at >= last);
                assert_eq!(q.now(), ev.fire_at);
                last = ev.fire_at;
                got.push((ev.fire_at.as_micros(), ev.seq, ev.payload));
            }).unwrap();
            prop_assert_eq!(got, expected);
        }
    }
}
