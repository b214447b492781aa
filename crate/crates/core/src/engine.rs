//! Deterministic discrete-event engine.
//!
//! The engine owns a time-ordered event queue, the simulation clock and a set
//! of named random streams. Events scheduled for the same instant fire in the
//! order they were scheduled, so a `(scenario, seed)` pair always replays the
//! same way.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Simulated time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    /// Returns `None` for negative or non-finite values.
    pub fn new(seconds: f64) -> Option<SimTime> {
        (seconds.is_finite() && seconds >= 0.0).then_some(SimTime(seconds))
    }

    /// Builds a time from seconds without range checks. Intended for
    /// intermediate values that are validated before being scheduled.
    pub const fn from_secs(seconds: f64) -> SimTime {
        SimTime(seconds)
    }

    pub fn as_secs(self) -> f64 {
        self.0
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Add<f64> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: f64) -> SimTime {
        SimTime(self.0 + rhs)
    }
}

impl Sub for SimTime {
    type Output = f64;

    fn sub(self, rhs: SimTime) -> f64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("cannot schedule event at {at} before current clock {now}")]
    SchedulingInPast { at: SimTime, now: SimTime },
}

/// Opaque handle returned by [`Engine::schedule`], used for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub time: SimTime,
    pub seq_no: u64,
    pub payload: P,
}

struct Entry<P>(Event<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // BinaryHeap is a max-heap; reverse so the earliest (time, seq_no) is on top.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .time
            .total_cmp(&self.0.time)
            .then_with(|| other.0.seq_no.cmp(&self.0.seq_no))
    }
}

/// Independent random streams, one per subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RngStream {
    Arrivals,
    Scheduler,
    HashKey,
    Service,
}

impl RngStream {
    const ALL: [RngStream; 4] = [
        RngStream::Arrivals,
        RngStream::Scheduler,
        RngStream::HashKey,
        RngStream::Service,
    ];

    fn index(self) -> usize {
        match self {
            RngStream::Arrivals => 0,
            RngStream::Scheduler => 1,
            RngStream::HashKey => 2,
            RngStream::Service => 3,
        }
    }
}

/// Seeded random source with one ChaCha stream per [`RngStream`] label.
///
/// Each label gets its own ChaCha stream id under the same seed, so drawing
/// from one label never shifts the sequence observed on another.
#[derive(Debug, Clone)]
pub struct SimRng {
    seed: u64,
    streams: Vec<ChaCha8Rng>,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        let streams = RngStream::ALL
            .iter()
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(s.index() as u64 + 1);
                rng
            })
            .collect();
        SimRng { seed, streams }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[0, 1)`.
    pub fn next_f64(&mut self, stream: RngStream) -> f64 {
        self.streams[stream.index()].random::<f64>()
    }

    /// Uniform integer in `[0, bound)`. `bound` must be nonzero.
    pub fn next_below(&mut self, stream: RngStream, bound: usize) -> usize {
        self.streams[stream.index()].random_range(0..bound)
    }

    pub fn fill_bytes(&mut self, stream: RngStream, buf: &mut [u8]) {
        self.streams[stream.index()].fill(buf);
    }
}

pub struct Engine<P> {
    clock: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Entry<P>>,
    cancelled: HashSet<u64>,
    rng: SimRng,
}

impl<P> Engine<P> {
    pub fn new(seed: u64) -> Self {
        Engine {
            clock: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            cancelled: HashSet::new(),
            rng: SimRng::new(seed),
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    /// Number of live (not cancelled) events still queued.
    pub fn pending(&self) -> usize {
        self.queue.len() - self.cancelled.len()
    }

    pub fn schedule(&mut self, time: SimTime, payload: P) -> Result<EventHandle, EngineError> {
        // NaN compares as unordered and is rejected along with past times.
        if time.as_secs().is_nan() || time < self.clock {
            return Err(EngineError::SchedulingInPast {
                at: time,
                now: self.clock,
            });
        }
        let seq_no = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Entry(Event {
            time,
            seq_no,
            payload,
        }));
        Ok(EventHandle(seq_no))
    }

    /// Schedules `payload` at `now + delay`. `delay` must be nonnegative.
    pub fn schedule_in(&mut self, delay: f64, payload: P) -> Result<EventHandle, EngineError> {
        self.schedule(self.clock + delay, payload)
    }

    /// Cancels a pending event. Returns false if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        let live = self
            .queue
            .iter()
            .any(|e| e.0.seq_no == handle.0 && !self.cancelled.contains(&handle.0));
        if live {
            self.cancelled.insert(handle.0);
        }
        live
    }

    /// Time of the earliest live event, if any.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        while let Some(top) = self.queue.peek() {
            if self.cancelled.remove(&top.0.seq_no) {
                self.queue.pop();
                continue;
            }
            return Some(top.0.time);
        }
        None
    }

    /// Removes and returns the earliest event, advancing the clock to it.
    pub fn step(&mut self) -> Option<Event<P>> {
        self.peek_time()?;
        let Entry(ev) = self.queue.pop()?;
        self.clock = ev.time;
        Some(ev)
    }

    /// Processes every event with `time <= t_end`, handing each to `handler`
    /// after the clock has advanced to it. Events scheduled by the handler
    /// within the horizon are processed in the same call.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, Event<P>),
    {
        let mut processed = 0;
        while let Some(t) = self.peek_time() {
            if t.as_secs() > t_end.as_secs() {
                break;
            }
            let ev = self.step().expect("peeked event present");
            handler(self, ev);
            processed += 1;
        }
        processed
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    pub fn rng_next(&mut self, stream: RngStream) -> f64 {
        self.rng.next_f64(stream)
    }
}
