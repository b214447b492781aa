//! Scenario execution: single runs, flow-count sweeps and analytic reports.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{reorder_predicate, t_service_s, t_service_s1, worst_case_margin, AnalyticError, AnalyticParams};
use crate::compare::{run_micro_scenario, CompareError, BACKLOG_GRID};
use crate::engine::{RngStream, SimRng, SimTime};
use crate::ids::CoreId;
use crate::metrics::{confidence_interval, MetricsError, SummaryRow};
use crate::nic::FlowKey;
use crate::scenario::{Scenario, ScenarioError};
use crate::sim::{RunOutput, SimConfig, SimError, Simulation};
use crate::workload::{ArrivalProcess, FlowSpec, WorkloadError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Compare(#[from] CompareError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Marker written in place of a confidence interval computed from one seed.
pub const INSUFFICIENT_SAMPLES: &str = "InsufficientSamples";

/// Receive-direction key of flow `i`: a single client talking to one
/// server port, one source port per connection.
pub fn flow_key(scenario: &Scenario, i: usize) -> FlowKey {
    FlowKey {
        src_addr: u32::from_be_bytes([10, 0, 0, 2]),
        dst_addr: u32::from_be_bytes([10, 0, 0, 1]),
        protocol: FlowKey::TCP,
        src_port: scenario.workload.base_src_port + i as u16,
        dst_port: 5001,
    }
}

pub fn sim_config(scenario: &Scenario, record_trace: bool) -> SimConfig {
    SimConfig {
        cores: scenario.cores,
        ring_size: scenario.ring_slots(),
        service_rate: scenario.service_rate_pps,
        service_time: scenario.service_time,
        fd_enabled: scenario.fd.enabled,
        sample_rate: scenario.fd.sample_rate,
        rss: scenario.rss(),
        policy: scenario.policy(),
        duration: scenario.workload.duration_s,
        record_trace,
        record_events: false,
    }
}

/// Builds the simulation for `(scenario, seed)` without running it.
///
/// One application thread per flow, spread round-robin over the cores (or
/// all on `pin_core`). Flow start times are spread uniformly over one
/// inter-arrival gap so that constant-rate flows do not arrive in lockstep.
pub fn build(scenario: &Scenario, seed: u64, record_trace: bool) -> Result<Simulation, ExperimentError> {
    let mut sim = Simulation::new(sim_config(scenario, record_trace), seed)?;
    let w = &scenario.workload;
    let pps = scenario.per_flow_pps(w.n_flows);
    let arrival = ArrivalProcess::new(w.arrival_kind, pps)?;
    // Start phases come from their own generator so they do not shift the
    // engine's arrival stream.
    let mut phases = SimRng::new(seed ^ 0x5EED_F5E7);
    for i in 0..w.n_flows {
        let core = CoreId(scenario.scheduler.pin_core.unwrap_or(i % scenario.cores));
        let thread = sim.spawn_thread(core, w.tx_per_delivery)?;
        let start = SimTime::from_secs(phases.next_f64(RngStream::Arrivals) / pps);
        let spec = FlowSpec::new(flow_key(scenario, i), arrival, start, w.duration_s)?;
        sim.add_flow(flow_key(scenario, i), thread, Some(spec))?;
    }
    Ok(sim)
}

/// Result of one `(scenario, seed)` run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub output: RunOutput,
    pub summary: SummaryRow,
}

pub fn run(scenario: &Scenario, seed: u64, record_trace: bool) -> Result<RunResult, ExperimentError> {
    let mut sim = build(scenario, seed, record_trace)?;
    sim.run()?;
    let output = sim.into_output();
    let stats = &output.stats;
    let summary = SummaryRow {
        scenario_id: scenario.name.clone(),
        seed,
        policy: scenario.scheduler.policy.to_string(),
        n_flows: scenario.workload.n_flows,
        ring_size: scenario.ring_slots(),
        service_rate_pps: scenario.service_rate_pps,
        total_delivered: stats.total_delivered(),
        total_reordered: stats.total_reordered(),
        reorder_ratio: stats.reorder_ratio().unwrap_or(0.0),
        total_drops: stats.total_drops(),
        dupacks: stats.total_dupacks(),
        would_retransmits: stats.total_would_retransmit(),
        migrations: output.migrations.len() as u64,
    };
    Ok(RunResult { output, summary })
}

/// One row of a sweep: all seeds at one flow count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario_id: String,
    pub policy: String,
    pub n_flows: usize,
    pub seeds: usize,
    pub mean_reorder_ratio: f64,
    /// Half-width of the 95% interval, or [`INSUFFICIENT_SAMPLES`].
    pub ci95_half_width: String,
    pub mean_delivered: f64,
    pub mean_drops: f64,
    pub mean_migrations: f64,
}

impl SweepRow {
    pub fn ci95(&self) -> Option<f64> {
        self.ci95_half_width.parse().ok()
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Per-run summaries ordered by `(n_flows, seed)` as given.
    pub runs: Vec<SummaryRow>,
}

/// Runs every `(n, seed)` pair in parallel and aggregates per flow count.
/// Output order follows `flow_counts` and `seeds`, independent of scheduling.
pub fn sweep(scenario: &Scenario, flow_counts: &[usize], seeds: &[u64]) -> Result<SweepResult, ExperimentError> {
    let variants = flow_counts
        .iter()
        .map(|&n| scenario.with_flows(n))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(v, seed)| run(&variants[v], seed, false).map(|r| r.summary))
        .collect::<Result<Vec<_>, _>>()?;

    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = xs.collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let rows = variants
        .iter()
        .zip(runs.chunks(seeds.len().max(1)))
        .map(|(s, chunk)| {
            let ratios: Vec<f64> = chunk.iter().map(|r| r.reorder_ratio).collect();
            let ci = match confidence_interval(&ratios, 0.95) {
                Ok(ci) => format!("{}", ci.half_width),
                Err(MetricsError::InsufficientSamples(_)) => INSUFFICIENT_SAMPLES.to_string(),
                Err(e) => return Err(e),
            };
            Ok(SweepRow {
                scenario_id: s.name.clone(),
                policy: s.scheduler.policy.to_string(),
                n_flows: s.workload.n_flows,
                seeds: chunk.len(),
                mean_reorder_ratio: mean(&mut ratios.iter().copied()),
                ci95_half_width: ci,
                mean_delivered: mean(&mut chunk.iter().map(|r| r.total_delivered as f64)),
                mean_drops: mean(&mut chunk.iter().map(|r| r.total_drops as f64)),
                mean_migrations: mean(&mut chunk.iter().map(|r| r.migrations as f64)),
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(SweepResult { rows, runs })
}

pub fn write_sweep<W: Write>(w: W, rows: &[SweepRow]) -> Result<(), ExperimentError> {
    write_rows(w, rows)
}

fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<(), ExperimentError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One `(n, m, eps * R)` point of the analytic report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticRow {
    pub ring_size: usize,
    pub service_rate_pps: f64,
    pub eps_r: f64,
    pub n: usize,
    pub m: usize,
    pub t_service_s: f64,
    pub t_service_s1: f64,
    pub predicted_reorder: bool,
    pub worst_case_margin: f64,
    /// Present when the micro-scenario comparison was run.
    pub simulated_reorder: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct AnalyticReport {
    pub rows: Vec<AnalyticRow>,
    /// Rows whose simulation matched the predicate, when compared.
    pub agreements: Option<usize>,
}

impl AnalyticReport {
    pub fn all_agree(&self) -> bool {
        self.agreements.is_none_or(|a| a == self.rows.len())
    }
}

/// Evaluates the predicate over the backlog grid (restricted to `n, m < D`)
/// at migration time `t`, optionally replaying each point in the simulator.
pub fn analytic_report(
    ring_size: usize,
    service_rate: f64,
    t: f64,
    eps_r: &[f64],
    compare: bool,
) -> Result<AnalyticReport, ExperimentError> {
    let backlogs: Vec<usize> = BACKLOG_GRID.iter().copied().filter(|&b| b < ring_size).collect();
    let mut rows = Vec::new();
    let mut agreements = 0;
    for &n in &backlogs {
        for &m in &backlogs {
            for &k in eps_r {
                let eps = k / service_rate;
                let p = AnalyticParams::new(t, eps, n, m, service_rate, ring_size)?;
                let simulated = if compare {
                    let o = run_micro_scenario(&p)?;
                    agreements += usize::from(o.agrees());
                    Some(o.simulated_reorder)
                } else {
                    None
                };
                rows.push(AnalyticRow {
                    ring_size,
                    service_rate_pps: service_rate,
                    eps_r: k,
                    n,
                    m,
                    t_service_s: t_service_s(&p),
                    t_service_s1: t_service_s1(&p),
                    predicted_reorder: reorder_predicate(&p),
                    worst_case_margin: worst_case_margin(ring_size, service_rate, eps)?,
                    simulated_reorder: simulated,
                });
            }
        }
    }
    Ok(AnalyticReport {
        rows,
        agreements: compare.then_some(agreements),
    })
}

pub fn write_analytic<W: Write>(w: W, rows: &[AnalyticRow]) -> Result<(), ExperimentError> {
    write_rows(w, rows)
}
