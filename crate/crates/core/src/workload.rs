//! Open-loop traffic sources: `n` parallel flows, each with its own arrival
//! process and a gapless sequence counter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{RngStream, SimRng, SimTime};
use crate::ids::FlowId;
use crate::nic::{FlowKey, Packet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("flow count must be at least 1")]
    NoFlows,
    #[error("src_port {base} + {n} flows overflows the 16-bit port space")]
    PortOverflow { base: u16, n: usize },
    #[error("rate must be positive and finite, got {0}")]
    Rate(f64),
    #[error("duration must be positive and finite, got {0}")]
    Duration(f64),
    #[error("duplicate flow key {0}")]
    DuplicateKey(FlowKey),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalKind {
    Constant,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalProcess {
    ConstantRate(f64),
    /// Exponential inter-arrivals with the given mean rate.
    Poisson(f64),
}

impl ArrivalProcess {
    pub fn new(kind: ArrivalKind, pps: f64) -> Result<Self, WorkloadError> {
        if !(pps.is_finite() && pps > 0.0) {
            return Err(WorkloadError::Rate(pps));
        }
        Ok(match kind {
            ArrivalKind::Constant => ArrivalProcess::ConstantRate(pps),
            ArrivalKind::Poisson => ArrivalProcess::Poisson(pps),
        })
    }

    pub fn rate(&self) -> f64 {
        match *self {
            ArrivalProcess::ConstantRate(r) | ArrivalProcess::Poisson(r) => r,
        }
    }

    /// Draws the gap to the next arrival.
    pub fn gap(&self, rng: &mut SimRng) -> f64 {
        match *self {
            ArrivalProcess::ConstantRate(r) => 1.0 / r,
            ArrivalProcess::Poisson(r) => {
                let u = rng.next_f64(RngStream::Arrivals);
                -(1.0 - u).ln() / r
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub key: FlowKey,
    pub arrival: ArrivalProcess,
    pub start: SimTime,
    pub duration: f64,
    next_seq: u64,
}

impl FlowSpec {
    pub fn new(key: FlowKey, arrival: ArrivalProcess, start: SimTime, duration: f64) -> Result<Self, WorkloadError> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(WorkloadError::Duration(duration));
        }
        Ok(FlowSpec {
            key,
            arrival,
            start,
            duration,
            next_seq: 0,
        })
    }

    pub fn end(&self) -> SimTime {
        self.start + self.duration
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Whether `t` falls inside the flow's active window.
    pub fn active_at(&self, t: SimTime) -> bool {
        t >= self.start && t < self.end()
    }

    /// Time of the first arrival after the flow starts.
    pub fn first_arrival(&self, rng: &mut SimRng) -> SimTime {
        self.start + self.arrival.gap(rng)
    }

    /// Emits the packet arriving at `now` and returns it with the time of
    /// the following arrival.
    pub fn next_arrival(&mut self, id: FlowId, now: SimTime, rng: &mut SimRng) -> (Packet, SimTime) {
        let pkt = Packet::rx(self.key, id, self.next_seq, now);
        self.next_seq += 1;
        (pkt, now + self.arrival.gap(rng))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub flows: Vec<FlowSpec>,
}

impl WorkloadSpec {
    pub fn new(flows: Vec<FlowSpec>) -> Result<Self, WorkloadError> {
        let mut keys: Vec<FlowKey> = flows.iter().map(|f| f.key).collect();
        keys.sort_unstable();
        if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
            return Err(WorkloadError::DuplicateKey(w[0]));
        }
        Ok(WorkloadSpec { flows })
    }

    pub fn n(&self) -> usize {
        self.flows.len()
    }
}

/// `n` flows cloned from `base`, with source ports `base.src_port + i`.
pub fn make_flows(
    n: usize,
    base: FlowKey,
    arrival: ArrivalProcess,
    duration: f64,
) -> Result<WorkloadSpec, WorkloadError> {
    if n == 0 {
        return Err(WorkloadError::NoFlows);
    }
    if usize::from(base.src_port) + n - 1 > usize::from(u16::MAX) {
        return Err(WorkloadError::PortOverflow {
            base: base.src_port,
            n,
        });
    }
    let flows = (0..n)
        .map(|i| {
            let key = FlowKey {
                src_port: base.src_port + i as u16,
                ..base
            };
            FlowSpec::new(key, arrival, SimTime::ZERO, duration)
        })
        .collect::<Result<_, _>>()?;
    WorkloadSpec::new(flows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> FlowKey {
        FlowKey {
            src_addr: 0xc0a8_0001,
            dst_addr: 0xc0a8_0002,
            protocol: FlowKey::TCP,
            src_port: 40000,
            dst_port: 5001,
        }
    }

    #[test]
    fn single_flow_uses_template() {
        let w = make_flows(1, base(), ArrivalProcess::ConstantRate(10.0), 1.0).unwrap();
        assert_eq!(w.n(), 1);
        assert_eq!(w.flows[0].key, base());
    }

    #[test]
    fn two_hundred_distinct_flows() {
        let w = make_flows(200, base(), ArrivalProcess::ConstantRate(10.0), 1.0).unwrap();
        assert_eq!(w.n(), 200);
        for (i, f) in w.flows.iter().enumerate() {
            assert_eq!(f.key.src_port, 40000 + i as u16);
            assert_eq!(f.key.dst_port, 5001);
        }
    }

    #[test]
    fn port_overflow() {
        let mut b = base();
        b.src_port = 65535;
        assert!(make_flows(1, b, ArrivalProcess::ConstantRate(1.0), 1.0).is_ok());
        assert_eq!(
            make_flows(2, b, ArrivalProcess::ConstantRate(1.0), 1.0).unwrap_err(),
            WorkloadError::PortOverflow { base: 65535, n: 2 }
        );
        assert_eq!(
            make_flows(0, b, ArrivalProcess::ConstantRate(1.0), 1.0).unwrap_err(),
            WorkloadError::NoFlows
        );
    }

    #[test]
    fn duplicate_keys_rejected() {
        let f = FlowSpec::new(base(), ArrivalProcess::ConstantRate(1.0), SimTime::ZERO, 1.0).unwrap();
        assert!(matches!(
            WorkloadSpec::new(vec![f.clone(), f]),
            Err(WorkloadError::DuplicateKey(_))
        ));
    }

    #[test]
    fn bad_rates_rejected() {
        assert!(ArrivalProcess::new(ArrivalKind::Poisson, 0.0).is_err());
        assert!(ArrivalProcess::new(ArrivalKind::Constant, f64::INFINITY).is_err());
    }

    #[test]
    fn constant_rate_schedule() {
        let mut rng = SimRng::new(0);
        let mut f = FlowSpec::new(base(), ArrivalProcess::ConstantRate(1000.0), SimTime::ZERO, 1.0).unwrap();
        let mut t = f.first_arrival(&mut rng);
        for k in 1..=5u64 {
            assert!((t.as_secs() - k as f64 * 0.001).abs() < 1e-15);
            let (pkt, next) = f.next_arrival(FlowId(0), t, &mut rng);
            assert_eq!(pkt.seq, k - 1);
            assert_eq!(pkt.arrival_time, t);
            t = next;
        }
        assert_eq!(f.next_seq(), 5);
    }

    #[test]
    fn poisson_count_within_three_sigma() {
        let mut rng = SimRng::new(11);
        let mut f = FlowSpec::new(base(), ArrivalProcess::Poisson(1000.0), SimTime::ZERO, 100.0).unwrap();
        let mut t = f.first_arrival(&mut rng);
        let mut count = 0u64;
        let mut last = SimTime::ZERO;
        while f.active_at(t) {
            assert!(t > last);
            last = t;
            let (pkt, next) = f.next_arrival(FlowId(0), t, &mut rng);
            assert_eq!(pkt.seq, count);
            count += 1;
            t = next;
        }
        let mean: f64 = 1e5;
        let sigma = mean.sqrt();
        assert!((count as f64 - mean).abs() < 3.0 * sigma, "count {count}");
    }
}
