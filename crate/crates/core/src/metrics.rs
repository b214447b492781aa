//! Receiver-side instrumentation.
//!
//! A delivery is *reordered* when its sequence number is below the highest
//! sequence number already delivered on the same flow (the RFC 4737
//! definition). Alongside that binary metric a cumulative-ACK automaton
//! counts the duplicate ACKs a TCP receiver would emit, and the points at
//! which a sender would fast-retransmit.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::engine::SimTime;
use crate::ids::{CoreId, FlowId};
use crate::nic::FlowKey;

/// Duplicate ACKs that trigger fast retransmit.
pub const DUPACK_THRESHOLD: u32 = 3;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no packets delivered")]
    NoData,
    #[error("need at least 2 samples for a confidence interval, got {0}")]
    InsufficientSamples(usize),
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    InOrder,
    Reordered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckKind {
    NewAck,
    DupAck,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowStats {
    pub max_seq_delivered: Option<u64>,
    pub delivered: u64,
    pub reordered: u64,
    pub dupacks: u64,
    pub would_retransmit: u64,
    pub drops: u64,
    next_expected: u64,
    out_of_order: BTreeSet<u64>,
    consecutive_dupacks: u32,
}

impl FlowStats {
    pub fn ratio(&self) -> Option<f64> {
        (self.delivered > 0).then(|| self.reordered as f64 / self.delivered as f64)
    }

    /// Next in-order sequence number the receiver expects.
    pub fn cumulative_ack(&self) -> u64 {
        self.next_expected
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReorderStats {
    flows: Vec<FlowStats>,
}

impl ReorderStats {
    pub fn new(n_flows: usize) -> Self {
        ReorderStats {
            flows: vec![FlowStats::default(); n_flows],
        }
    }

    fn flow_mut(&mut self, flow: FlowId) -> &mut FlowStats {
        if flow.index() >= self.flows.len() {
            self.flows.resize_with(flow.index() + 1, FlowStats::default);
        }
        &mut self.flows[flow.index()]
    }

    pub fn flow(&self, flow: FlowId) -> Option<&FlowStats> {
        self.flows.get(flow.index())
    }

    pub fn flows(&self) -> &[FlowStats] {
        &self.flows
    }

    /// Classifies one delivery against the flow's running maximum.
    pub fn observe_delivery(&mut self, flow: FlowId, seq: u64) -> Classification {
        let f = self.flow_mut(flow);
        f.delivered += 1;
        let class = match f.max_seq_delivered {
            Some(max) if seq < max => {
                f.reordered += 1;
                Classification::Reordered
            }
            _ => Classification::InOrder,
        };
        f.max_seq_delivered = Some(f.max_seq_delivered.map_or(seq, |m| m.max(seq)));
        class
    }

    /// Runs the cumulative-ACK automaton for one delivered segment.
    pub fn dupack_observe(&mut self, flow: FlowId, seq: u64) -> AckKind {
        let f = self.flow_mut(flow);
        if seq == f.next_expected {
            f.next_expected += 1;
            while f.out_of_order.remove(&f.next_expected) {
                f.next_expected += 1;
            }
            f.consecutive_dupacks = 0;
            return AckKind::NewAck;
        }
        if seq > f.next_expected {
            f.out_of_order.insert(seq);
        }
        f.dupacks += 1;
        f.consecutive_dupacks += 1;
        if f.consecutive_dupacks == DUPACK_THRESHOLD {
            f.would_retransmit += 1;
        }
        AckKind::DupAck
    }

    pub fn record_drop(&mut self, flow: FlowId) {
        self.flow_mut(flow).drops += 1;
    }

    pub fn total_delivered(&self) -> u64 {
        self.flows.iter().map(|f| f.delivered).sum()
    }

    pub fn total_reordered(&self) -> u64 {
        self.flows.iter().map(|f| f.reordered).sum()
    }

    pub fn total_dupacks(&self) -> u64 {
        self.flows.iter().map(|f| f.dupacks).sum()
    }

    pub fn total_would_retransmit(&self) -> u64 {
        self.flows.iter().map(|f| f.would_retransmit).sum()
    }

    pub fn total_drops(&self) -> u64 {
        self.flows.iter().map(|f| f.drops).sum()
    }

    /// Aggregate reordered / delivered over all flows.
    pub fn reorder_ratio(&self) -> Result<f64, MetricsError> {
        let delivered = self.total_delivered();
        if delivered == 0 {
            return Err(MetricsError::NoData);
        }
        Ok(self.total_reordered() as f64 / delivered as f64)
    }

    pub fn flow_ratio(&self, flow: FlowId) -> Result<f64, MetricsError> {
        self.flow(flow)
            .and_then(FlowStats::ratio)
            .ok_or(MetricsError::NoData)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub half_width: f64,
    pub samples: usize,
}

/// Student-t interval for the mean of independent samples.
pub fn confidence_interval(samples: &[f64], level: f64) -> Result<ConfidenceInterval, MetricsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::InvalidLevel(level));
    }
    let n = samples.len();
    if n < 2 {
        return Err(MetricsError::InsufficientSamples(n));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - (1.0 - level) / 2.0);
    Ok(ConfidenceInterval {
        mean,
        half_width: t * var.sqrt() / (n as f64).sqrt(),
        samples: n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryLogEntry {
    pub time: SimTime,
    pub service_start: SimTime,
    pub flow: FlowKey,
    pub flow_id: FlowId,
    pub seq: u64,
    pub core: CoreId,
    pub ring_occupancy_at_enqueue: usize,
    pub classification: Classification,
}

/// One line of the run summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario_id: String,
    pub seed: u64,
    pub policy: String,
    pub n_flows: usize,
    pub ring_size: usize,
    pub service_rate_pps: f64,
    pub total_delivered: u64,
    pub total_reordered: u64,
    pub reorder_ratio: f64,
    pub total_drops: u64,
    pub dupacks: u64,
    pub would_retransmits: u64,
    pub migrations: u64,
}

pub const SUMMARY_COLUMNS: [&str; 13] = [
    "scenario_id",
    "seed",
    "policy",
    "n_flows",
    "ring_size",
    "service_rate_pps",
    "total_delivered",
    "total_reordered",
    "reorder_ratio",
    "total_drops",
    "dupacks",
    "would_retransmits",
    "migrations",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time_s: f64,
    pub flow_id: usize,
    pub seq: u64,
    pub classification: Classification,
}

pub const TRACE_COLUMNS: [&str; 4] = ["time_s", "flow_id", "seq", "classification"];

impl From<&DeliveryLogEntry> for TraceRow {
    fn from(e: &DeliveryLogEntry) -> Self {
        TraceRow {
            time_s: e.time.as_secs(),
            flow_id: e.flow_id.index(),
            seq: e.seq,
            classification: e.classification,
        }
    }
}

fn write_rows<W: Write, T: Serialize>(w: W, header: &[&str], rows: &[T]) -> Result<(), MetricsError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(header)?;
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>, MetricsError> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|r| r.map_err(Into::into)).collect()
}

/// Writes the summary CSV. An empty slice yields a header-only file.
pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<(), MetricsError> {
    write_rows(w, &SUMMARY_COLUMNS, rows)
}

pub fn read_summary<R: Read>(r: R) -> Result<Vec<SummaryRow>, MetricsError> {
    read_rows(r)
}

/// Writes per-delivery time-sequence data, one row per log entry.
pub fn write_trace<W: Write>(w: W, log: &[DeliveryLogEntry]) -> Result<(), MetricsError> {
    let rows: Vec<TraceRow> = log.iter().map(TraceRow::from).collect();
    write_rows(w, &TRACE_COLUMNS, &rows)
}

pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRow>, MetricsError> {
    read_rows(r)
}
