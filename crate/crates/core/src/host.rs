//! Cores, application threads and the OS scheduler's migration policies.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{RngStream, SimRng, SimTime};
use crate::ids::{CoreId, FlowId, ThreadId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HostError {
    #[error("core {core} does not exist (have {cores})")]
    InvalidCore { core: CoreId, cores: usize },
    #[error("thread {0} does not exist")]
    InvalidThread(ThreadId),
    #[error("thread {thread} already runs on core {core}")]
    AlreadyOnCore { thread: ThreadId, core: CoreId },
    #[error("service rate must be positive and finite, got {0}")]
    ServiceRate(f64),
    #[error("need at least one core")]
    NoCores,
    #[error("migration interval must be positive and finite, got {0}")]
    Interval(f64),
    #[error("migration probability must lie in [0, 1], got {0}")]
    Probability(f64),
}

#[derive(Debug, Clone)]
pub struct Core {
    pub id: CoreId,
    /// Packets per second.
    pub service_rate: f64,
    /// Set from the interrupt until the ring is found empty.
    pub busy: bool,
    pub resident_threads: BTreeSet<ThreadId>,
    pub delivered: u64,
}

#[derive(Debug, Clone)]
pub struct AppThread {
    pub id: ThreadId,
    pub flows: Vec<FlowId>,
    pub current_core: CoreId,
    /// TX packets sent per delivered RX packet (ACKs).
    pub tx_per_delivery: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Pinned,
    PeriodicRandom,
    LoadBalance,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Pinned => "pinned",
            PolicyKind::PeriodicRandom => "periodic_random",
            PolicyKind::LoadBalance => "load_balance",
        })
    }
}

/// How and how often the scheduler moves threads.
///
/// * `Pinned` never migrates.
/// * `PeriodicRandom` moves each thread, with probability `migrate_prob`, to
///   a uniformly chosen other core.
/// * `LoadBalance` first displaces each thread with probability
///   `migrate_prob` (wakeups landing on another core), then moves randomly
///   chosen threads from the most to the least populated core until resident
///   counts differ by at most one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerPolicy {
    pub kind: PolicyKind,
    pub interval: f64,
    pub migrate_prob: f64,
}

impl SchedulerPolicy {
    pub fn pinned() -> Self {
        SchedulerPolicy {
            kind: PolicyKind::Pinned,
            interval: f64::INFINITY,
            migrate_prob: 0.0,
        }
    }

    pub fn new(kind: PolicyKind, interval: f64, migrate_prob: f64) -> Result<Self, HostError> {
        let p = SchedulerPolicy {
            kind,
            interval,
            migrate_prob,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), HostError> {
        if self.kind == PolicyKind::Pinned {
            return Ok(());
        }
        if !(self.interval.is_finite() && self.interval > 0.0) {
            return Err(HostError::Interval(self.interval));
        }
        if !(0.0..=1.0).contains(&self.migrate_prob) {
            return Err(HostError::Probability(self.migrate_prob));
        }
        Ok(())
    }

    pub fn ticks(&self) -> bool {
        self.kind != PolicyKind::Pinned
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Migration {
    pub thread: ThreadId,
    pub from: CoreId,
    pub to: CoreId,
    pub time: SimTime,
}

#[derive(Debug, Clone)]
pub struct Host {
    cores: Vec<Core>,
    threads: Vec<AppThread>,
}

impl Host {
    pub fn new(cores: usize, service_rate: f64) -> Result<Self, HostError> {
        if cores == 0 {
            return Err(HostError::NoCores);
        }
        if !(service_rate.is_finite() && service_rate > 0.0) {
            return Err(HostError::ServiceRate(service_rate));
        }
        Ok(Host {
            cores: (0..cores)
                .map(|i| Core {
                    id: CoreId(i),
                    service_rate,
                    busy: false,
                    resident_threads: BTreeSet::new(),
                    delivered: 0,
                })
                .collect(),
            threads: Vec::new(),
        })
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn core(&self, id: CoreId) -> &Core {
        &self.cores[id.index()]
    }

    pub fn core_mut(&mut self, id: CoreId) -> &mut Core {
        &mut self.cores[id.index()]
    }

    pub fn threads(&self) -> &[AppThread] {
        &self.threads
    }

    pub fn thread(&self, id: ThreadId) -> Result<&AppThread, HostError> {
        self.threads.get(id.index()).ok_or(HostError::InvalidThread(id))
    }

    fn check_core(&self, core: CoreId) -> Result<(), HostError> {
        if core.index() >= self.cores.len() {
            return Err(HostError::InvalidCore {
                core,
                cores: self.cores.len(),
            });
        }
        Ok(())
    }

    pub fn spawn_thread(&mut self, core: CoreId, tx_per_delivery: u32) -> Result<ThreadId, HostError> {
        self.check_core(core)?;
        let id = ThreadId(self.threads.len());
        self.threads.push(AppThread {
            id,
            flows: Vec::new(),
            current_core: core,
            tx_per_delivery,
        });
        self.cores[core.index()].resident_threads.insert(id);
        Ok(id)
    }

    pub fn attach_flow(&mut self, thread: ThreadId, flow: FlowId) -> Result<(), HostError> {
        self.threads
            .get_mut(thread.index())
            .ok_or(HostError::InvalidThread(thread))?
            .flows
            .push(flow);
        Ok(())
    }

    /// Moves a thread to another core. The Flow Director table is untouched;
    /// it follows only once the thread transmits from its new core.
    pub fn migrate(&mut self, thread: ThreadId, to: CoreId, now: SimTime) -> Result<Migration, HostError> {
        self.check_core(to)?;
        let t = self
            .threads
            .get_mut(thread.index())
            .ok_or(HostError::InvalidThread(thread))?;
        let from = t.current_core;
        if from == to {
            return Err(HostError::AlreadyOnCore { thread, core: to });
        }
        t.current_core = to;
        self.cores[from.index()].resident_threads.remove(&thread);
        self.cores[to.index()].resident_threads.insert(thread);
        Ok(Migration {
            thread,
            from,
            to,
            time: now,
        })
    }

    /// Plans the moves one scheduler tick makes. Returns each thread whose
    /// core changes together with its destination, in thread order.
    pub fn scheduler_tick(&self, policy: &SchedulerPolicy, rng: &mut SimRng) -> Vec<(ThreadId, CoreId)> {
        let n_cores = self.cores.len();
        if policy.kind == PolicyKind::Pinned || n_cores < 2 {
            return Vec::new();
        }
        let mut placement: Vec<CoreId> = self.threads.iter().map(|t| t.current_core).collect();
        if policy.migrate_prob > 0.0 {
            for core in placement.iter_mut() {
                if rng.next_f64(RngStream::Scheduler) < policy.migrate_prob {
                    *core = random_other_core(*core, n_cores, rng);
                }
            }
        }
        if policy.kind == PolicyKind::LoadBalance {
            balance(&mut placement, n_cores, rng);
        }
        self.threads
            .iter()
            .zip(&placement)
            .filter(|(t, &to)| t.current_core != to)
            .map(|(t, &to)| (t.id, to))
            .collect()
    }
}

fn random_other_core(current: CoreId, n_cores: usize, rng: &mut SimRng) -> CoreId {
    let pick = rng.next_below(RngStream::Scheduler, n_cores - 1);
    CoreId(if pick >= current.index() { pick + 1 } else { pick })
}

fn balance(placement: &mut [CoreId], n_cores: usize, rng: &mut SimRng) {
    let mut counts = vec![0usize; n_cores];
    for c in placement.iter() {
        counts[c.index()] += 1;
    }
    loop {
        // Ties go to the lowest core id.
        let (max_core, &max) = counts
            .iter()
            .enumerate()
            .rev()
            .max_by_key(|(_, &c)| c)
            .expect("at least one core");
        let (min_core, &min) = counts
            .iter()
            .enumerate()
            .min_by_key(|(_, &c)| c)
            .expect("at least one core");
        if max - min <= 1 {
            return;
        }
        let residents: Vec<usize> = placement
            .iter()
            .enumerate()
            .filter(|(_, c)| c.index() == max_core)
            .map(|(i, _)| i)
            .collect();
        let victim = residents[rng.next_below(RngStream::Scheduler, residents.len())];
        placement[victim] = CoreId(min_core);
        counts[max_core] -= 1;
        counts[min_core] += 1;
    }
}
