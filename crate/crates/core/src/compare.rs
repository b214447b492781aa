//! Replays the two-ring straddle scenario in the simulator and checks the
//! observed service order of `S` and `S + 1` against the closed-form
//! predicate.
//!
//! Setup, with two cores and Flow Director sampling every TX packet:
//! * the flow's thread starts on core 0 and its entry points there;
//! * at `T - eps`, `n` filler packets and then `S` land in ring 0;
//! * at `T` the thread migrates to core 1 and transmits, moving the entry;
//! * at `T + eps`, `m` filler packets and then `S + 1` land in ring 1.
//!
//! Each core starts draining at its ring's interrupt and stays busy, so the
//! service start times are exactly `T - eps + n/R` and `T + eps + m/R`.

use crate::analytic::{reorder_predicate, t_service_s, t_service_s1, AnalyticError, AnalyticParams};
use crate::engine::SimTime;
use crate::host::SchedulerPolicy;
use crate::ids::CoreId;
use crate::nic::{FlowKey, NicError, RssIndirection, TxKind, DEFAULT_HASH_KEY};
use crate::sim::{ServiceTime, SimConfig, SimError, Simulation};

/// Backlog values of the default comparison grid.
pub const BACKLOG_GRID: [usize; 8] = [0, 1, 2, 5, 10, 100, 255, 511];

/// `eps * R` values of the default comparison grid.
pub const EPS_R_GRID: [f64; 6] = [0.1, 0.5, 1.0, 2.0, 10.0, 300.0];

/// Service rate used for grid comparisons: 2^20 packets per second, so that
/// `1/R`, `T` and the half-integer `eps * R` cases are exact binary
/// fractions and boundary ties stay ties in floating point.
pub const GRID_SERVICE_RATE: f64 = 1_048_576.0;

/// Migration instant used for grid comparisons (2^-10 s).
pub const GRID_T: f64 = 1.0 / 1024.0;

#[derive(Debug, thiserror::Error)]
pub enum CompareError {
    #[error(transparent)]
    Params(#[from] AnalyticError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nic(#[from] NicError),
    #[error("T - eps must be positive, got T = {t}, eps = {eps}")]
    Window { t: f64, eps: f64 },
    #[error("packet {0} of the probe flow was not delivered")]
    Missing(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicroOutcome {
    pub params: AnalyticParams,
    /// Simulated service start of `S`.
    pub t_service_s: f64,
    /// Simulated service start of `S + 1`.
    pub t_service_s1: f64,
    /// Simulated: `S + 1` started strictly before `S`.
    pub simulated_reorder: bool,
    /// The metrics observer flagged a reordered delivery on the probe flow.
    pub observed_reorder: bool,
    pub predicted_reorder: bool,
}

impl MicroOutcome {
    pub fn agrees(&self) -> bool {
        self.simulated_reorder == self.predicted_reorder
    }

    /// Measured `T_service(S) - T_service(S+1)`.
    pub fn gap(&self) -> f64 {
        self.t_service_s - self.t_service_s1
    }

    pub fn predicted_gap(&self) -> f64 {
        t_service_s(&self.params) - t_service_s1(&self.params)
    }
}

fn key(port: u16) -> FlowKey {
    FlowKey {
        src_addr: u32::from_be_bytes([10, 0, 0, 2]),
        dst_addr: u32::from_be_bytes([10, 0, 0, 1]),
        protocol: FlowKey::TCP,
        src_port: port,
        dst_port: 5001,
    }
}

/// Runs the straddle scenario for `params` and reports the measured and
/// predicted orders.
pub fn run_micro_scenario(params: &AnalyticParams) -> Result<MicroOutcome, CompareError> {
    params.validate()?;
    let (t, eps, r) = (params.t, params.eps, params.service_rate);
    if t - eps <= 0.0 {
        return Err(CompareError::Window { t, eps });
    }
    let horizon = t + eps + (params.n.max(params.m) as f64 + 4.0) / r;
    let cfg = SimConfig {
        cores: 2,
        ring_size: params.ring_size,
        service_rate: r,
        service_time: ServiceTime::Deterministic,
        fd_enabled: true,
        sample_rate: 1,
        rss: RssIndirection::round_robin(DEFAULT_HASH_KEY.to_vec(), 2, 2)?,
        policy: SchedulerPolicy::pinned(),
        duration: horizon,
        record_trace: true,
        record_events: false,
    };
    let mut sim = Simulation::new(cfg, 0)?;
    let probe_thread = sim.spawn_thread(CoreId(0), 0)?;
    let fill0_thread = sim.spawn_thread(CoreId(0), 0)?;
    let fill1_thread = sim.spawn_thread(CoreId(1), 0)?;
    let probe = sim.add_flow(key(40000), probe_thread, None)?;
    let fill0 = sim.add_flow(key(40001), fill0_thread, None)?;
    let fill1 = sim.add_flow(key(40002), fill1_thread, None)?;

    let zero = SimTime::ZERO;
    sim.inject_tx(probe_thread, probe, TxKind::Syn, zero)?;
    sim.inject_tx(fill0_thread, fill0, TxKind::Syn, zero)?;
    sim.inject_tx(fill1_thread, fill1, TxKind::Syn, zero)?;

    let before = SimTime::from_secs(t - eps);
    for seq in 0..params.n as u64 {
        sim.inject_arrival(fill0, seq, before)?;
    }
    sim.inject_arrival(probe, 0, before)?;

    let at = SimTime::from_secs(t);
    sim.inject_migration(probe_thread, CoreId(1), at)?;
    sim.inject_tx(probe_thread, probe, TxKind::Data, at)?;

    let after = SimTime::from_secs(t + eps);
    for seq in 0..params.m as u64 {
        sim.inject_arrival(fill1, seq, after)?;
    }
    sim.inject_arrival(probe, 1, after)?;

    sim.run()?;
    let out = sim.into_output();
    let start_of = |seq: u64| {
        out.log
            .iter()
            .find(|e| e.flow_id == probe && e.seq == seq)
            .map(|e| e.service_start.as_secs())
            .ok_or(CompareError::Missing(seq))
    };
    let ts = start_of(0)?;
    let ts1 = start_of(1)?;
    let observed = out.stats.flow(probe).map(|f| f.reordered > 0).unwrap_or(false);
    Ok(MicroOutcome {
        params: *params,
        t_service_s: ts,
        t_service_s1: ts1,
        simulated_reorder: ts > ts1,
        observed_reorder: observed,
        predicted_reorder: reorder_predicate(params),
    })
}

/// Runs every `(n, m, eps * R)` combination with `n, m < ring_size`.
pub fn compare_grid(
    ring_size: usize,
    service_rate: f64,
    t: f64,
    backlogs: &[usize],
    eps_r: &[f64],
) -> Result<Vec<MicroOutcome>, CompareError> {
    let mut out = Vec::new();
    for &n in backlogs.iter().filter(|&&n| n < ring_size) {
        for &m in backlogs.iter().filter(|&&m| m < ring_size) {
            for &k in eps_r {
                let params = AnalyticParams::new(t, k / service_rate, n, m, service_rate, ring_size)?;
                out.push(run_micro_scenario(&params)?);
            }
        }
    }
    Ok(out)
}

/// The default grid: every backlog in [`BACKLOG_GRID`] against every value
/// in [`EPS_R_GRID`], with 512-slot rings.
pub fn default_grid() -> Result<Vec<MicroOutcome>, CompareError> {
    compare_grid(512, GRID_SERVICE_RATE, GRID_T, &BACKLOG_GRID, &EPS_R_GRID)
}
