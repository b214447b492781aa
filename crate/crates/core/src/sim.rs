//! A single simulation instance: engine, NIC, host and instrumentation wired
//! together.
//!
//! Packet path: an arrival is steered to a ring by the NIC; the first packet
//! into an empty ring interrupts the owning core, which then services its
//! ring one packet at a time. Each delivery is classified by the metrics
//! observer and makes the owning thread transmit from whatever core it is on
//! now, which is how the Flow Director table learns about migrations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, EngineError, Event, RngStream, SimTime};
use crate::host::{Host, HostError, Migration, SchedulerPolicy};
use crate::ids::{CoreId, FlowId, ThreadId};
use crate::metrics::{DeliveryLogEntry, ReorderStats};
use crate::nic::{EnqueueOutcome, FdUpdate, FlowKey, Nic, NicError, Packet, RssIndirection, TxKind};
use crate::workload::FlowSpec;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Nic(#[from] NicError),
    #[error(transparent)]
    Host(#[from] HostError),
    #[error("flow {0} does not exist")]
    InvalidFlow(FlowId),
    #[error("thread {thread} does not serve flow {flow}")]
    NotServing { thread: ThreadId, flow: FlowId },
    #[error("duration must be positive and finite, got {0}")]
    Duration(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceTime {
    /// Every packet takes exactly `1 / service_rate`.
    #[default]
    Deterministic,
    /// Exponentially distributed with mean `1 / service_rate`.
    Exponential,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub cores: usize,
    pub ring_size: usize,
    pub service_rate: f64,
    pub service_time: ServiceTime,
    pub fd_enabled: bool,
    pub sample_rate: u32,
    pub rss: RssIndirection,
    pub policy: SchedulerPolicy,
    pub duration: f64,
    /// Keep a per-delivery log.
    pub record_trace: bool,
    /// Keep a log of every processed event (time, sequence number, kind).
    pub record_events: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    PacketArrival,
    Interrupt,
    ServiceComplete,
    MigrationTick,
    Migrate,
    TxEmit,
    EndOfRun,
}

#[derive(Debug, Clone)]
pub enum SimEvent {
    /// Next packet from a flow's traffic source.
    PacketArrival { flow: FlowId },
    /// A specific packet placed on the wire by the caller.
    InjectedArrival { flow: FlowId, seq: u64 },
    Interrupt { core: CoreId },
    ServiceComplete { core: CoreId },
    MigrationTick,
    Migrate { thread: ThreadId, to: CoreId },
    TxEmit { thread: ThreadId, flow: FlowId, kind: TxKind },
    EndOfRun,
}

impl SimEvent {
    pub fn kind(&self) -> EventKind {
        match self {
            SimEvent::PacketArrival { .. } | SimEvent::InjectedArrival { .. } => EventKind::PacketArrival,
            SimEvent::Interrupt { .. } => EventKind::Interrupt,
            SimEvent::ServiceComplete { .. } => EventKind::ServiceComplete,
            SimEvent::MigrationTick => EventKind::MigrationTick,
            SimEvent::Migrate { .. } => EventKind::Migrate,
            SimEvent::TxEmit { .. } => EventKind::TxEmit,
            SimEvent::EndOfRun => EventKind::EndOfRun,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub time: SimTime,
    pub seq_no: u64,
    pub kind: EventKind,
}

#[derive(Debug, Clone)]
struct FlowEntry {
    key: FlowKey,
    thread: ThreadId,
    source: Option<FlowSpec>,
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub stats: ReorderStats,
    pub log: Vec<DeliveryLogEntry>,
    pub migrations: Vec<Migration>,
    pub events: Vec<EventRecord>,
    pub events_processed: u64,
    pub drops: u64,
    pub interrupts: u64,
    pub fd_updates: u64,
    /// FD writes that moved an existing entry to a different core.
    pub steering_changes: u64,
    pub tx_packets: u64,
    pub max_ring_occupancy: usize,
}

pub struct Simulation {
    cfg: SimConfig,
    engine: Engine<SimEvent>,
    nic: Nic,
    host: Host,
    in_service: Vec<Option<Packet>>,
    flows: Vec<FlowEntry>,
    stats: ReorderStats,
    log: Vec<DeliveryLogEntry>,
    migrations: Vec<Migration>,
    events: Vec<EventRecord>,
    events_processed: u64,
    steering_changes: u64,
    tx_packets: u64,
    ended: bool,
}

impl Simulation {
    pub fn new(cfg: SimConfig, seed: u64) -> Result<Self, SimError> {
        if !(cfg.duration.is_finite() && cfg.duration > 0.0) {
            return Err(SimError::Duration(cfg.duration));
        }
        cfg.policy.validate()?;
        let nic = Nic::new(
            cfg.cores,
            cfg.ring_size,
            cfg.rss.clone(),
            cfg.fd_enabled,
            cfg.sample_rate,
        )?;
        let host = Host::new(cfg.cores, cfg.service_rate)?;
        let mut engine = Engine::new(seed);
        engine.schedule(SimTime::from_secs(cfg.duration), SimEvent::EndOfRun)?;
        if cfg.policy.ticks() && cfg.policy.interval < cfg.duration {
            engine.schedule(SimTime::from_secs(cfg.policy.interval), SimEvent::MigrationTick)?;
        }
        Ok(Simulation {
            in_service: vec![None; cfg.cores],
            cfg,
            engine,
            nic,
            host,
            flows: Vec::new(),
            stats: ReorderStats::default(),
            log: Vec::new(),
            migrations: Vec::new(),
            events: Vec::new(),
            events_processed: 0,
            steering_changes: 0,
            tx_packets: 0,
            ended: false,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn nic(&self) -> &Nic {
        &self.nic
    }

    pub fn host(&self) -> &Host {
        &self.host
    }

    pub fn stats(&self) -> &ReorderStats {
        &self.stats
    }

    pub fn now(&self) -> SimTime {
        self.engine.now()
    }

    pub fn spawn_thread(&mut self, core: CoreId, tx_per_delivery: u32) -> Result<ThreadId, SimError> {
        Ok(self.host.spawn_thread(core, tx_per_delivery)?)
    }

    /// Registers a flow served by `thread`. With a traffic source, the
    /// thread's connection-setup segment is sent at the source's start time
    /// and arrivals follow.
    pub fn add_flow(&mut self, key: FlowKey, thread: ThreadId, source: Option<FlowSpec>) -> Result<FlowId, SimError> {
        self.host.thread(thread)?;
        let id = FlowId(self.flows.len());
        self.host.attach_flow(thread, id)?;
        if let Some(src) = &source {
            self.engine.schedule(
                src.start,
                SimEvent::TxEmit {
                    thread,
                    flow: id,
                    kind: TxKind::Syn,
                },
            )?;
            let first = src.first_arrival(self.engine.rng());
            if src.active_at(first) && first.as_secs() <= self.cfg.duration {
                self.engine.schedule(first, SimEvent::PacketArrival { flow: id })?;
            }
        }
        self.flows.push(FlowEntry { key, thread, source });
        Ok(id)
    }

    fn check_flow(&self, flow: FlowId) -> Result<&FlowEntry, SimError> {
        self.flows.get(flow.index()).ok_or(SimError::InvalidFlow(flow))
    }

    pub fn inject_arrival(&mut self, flow: FlowId, seq: u64, at: SimTime) -> Result<(), SimError> {
        self.check_flow(flow)?;
        self.engine.schedule(at, SimEvent::InjectedArrival { flow, seq })?;
        Ok(())
    }

    pub fn inject_migration(&mut self, thread: ThreadId, to: CoreId, at: SimTime) -> Result<(), SimError> {
        self.host.thread(thread)?;
        self.engine.schedule(at, SimEvent::Migrate { thread, to })?;
        Ok(())
    }

    pub fn inject_tx(&mut self, thread: ThreadId, flow: FlowId, kind: TxKind, at: SimTime) -> Result<(), SimError> {
        let entry = self.check_flow(flow)?;
        if entry.thread != thread {
            return Err(SimError::NotServing { thread, flow });
        }
        self.engine.schedule(at, SimEvent::TxEmit { thread, flow, kind })?;
        Ok(())
    }

    /// Runs to the configured duration.
    pub fn run(&mut self) -> Result<u64, SimError> {
        let end = SimTime::from_secs(self.cfg.duration);
        let before = self.events_processed;
        while let Some(t) = self.engine.peek_time() {
            if t > end || self.ended {
                break;
            }
            let ev = self.engine.step().expect("event present");
            self.handle(ev)?;
        }
        Ok(self.events_processed - before)
    }

    pub fn into_output(self) -> RunOutput {
        let max_ring_occupancy = self.nic.rings().iter().map(|r| r.high_water()).max().unwrap_or(0);
        RunOutput {
            drops: self.nic.total_drops(),
            interrupts: self.nic.interrupts(),
            fd_updates: self.nic.fd_table().updates(),
            steering_changes: self.steering_changes,
            tx_packets: self.tx_packets,
            stats: self.stats,
            log: self.log,
            migrations: self.migrations,
            events: self.events,
            events_processed: self.events_processed,
            max_ring_occupancy,
        }
    }

    fn handle(&mut self, ev: Event<SimEvent>) -> Result<(), SimError> {
        let now = ev.time;
        self.events_processed += 1;
        if self.cfg.record_events {
            self.events.push(EventRecord {
                time: now,
                seq_no: ev.seq_no,
                kind: ev.payload.kind(),
            });
        }
        match ev.payload {
            SimEvent::PacketArrival { flow } => self.on_source_arrival(flow, now),
            SimEvent::InjectedArrival { flow, seq } => {
                let key = self.flows[flow.index()].key;
                self.receive(Packet::rx(key, flow, seq, now), now)
            }
            SimEvent::Interrupt { core } => {
                // The core may already be draining; the interrupt only wakes an idle one.
                if self.in_service[core.index()].is_none() {
                    self.service_next(core, now)?;
                }
                Ok(())
            }
            SimEvent::ServiceComplete { core } => {
                let mut pkt = self.in_service[core.index()]
                    .take()
                    .expect("service completion without a packet in service");
                pkt.delivery_time = Some(now);
                self.deliver(core, pkt, now)?;
                self.service_next(core, now)?;
                Ok(())
            }
            SimEvent::MigrationTick => {
                let moves = self.host.scheduler_tick(&self.cfg.policy, self.engine.rng());
                for (thread, to) in moves {
                    self.migrations.push(self.host.migrate(thread, to, now)?);
                }
                let next = now + self.cfg.policy.interval;
                if next.as_secs() < self.cfg.duration {
                    self.engine.schedule(next, SimEvent::MigrationTick)?;
                }
                Ok(())
            }
            SimEvent::Migrate { thread, to } => {
                self.migrations.push(self.host.migrate(thread, to, now)?);
                Ok(())
            }
            SimEvent::TxEmit { thread, flow, kind } => self.tx_emit(thread, flow, kind),
            SimEvent::EndOfRun => {
                self.ended = true;
                Ok(())
            }
        }
    }

    fn on_source_arrival(&mut self, flow: FlowId, now: SimTime) -> Result<(), SimError> {
        let entry = &mut self.flows[flow.index()];
        let src = entry.source.as_mut().expect("source arrival for a flow without a source");
        if !src.active_at(now) {
            return Ok(());
        }
        let (pkt, next) = src.next_arrival(flow, now, self.engine.rng());
        if src.active_at(next) && next.as_secs() <= self.cfg.duration {
            self.engine.schedule(next, SimEvent::PacketArrival { flow })?;
        }
        self.receive(pkt, now)
    }

    fn receive(&mut self, pkt: Packet, now: SimTime) -> Result<(), SimError> {
        let flow = pkt.flow_id;
        match self.nic.enqueue_rx(pkt, now) {
            EnqueueOutcome::Enqueued {
                interrupt: Some(irq),
                ..
            } => {
                let core = irq.core;
                if !self.host.core(core).busy {
                    self.host.core_mut(core).busy = true;
                    self.engine.schedule(now, SimEvent::Interrupt { core })?;
                }
            }
            EnqueueOutcome::Enqueued { interrupt: None, .. } => {}
            EnqueueOutcome::Dropped { .. } => self.stats.record_drop(flow),
        }
        Ok(())
    }

    /// Takes the head of the core's ring into service, or idles the core
    /// when the ring is empty.
    pub fn service_next(&mut self, core: CoreId, now: SimTime) -> Result<Option<SimTime>, SimError> {
        let Some(mut pkt) = self.nic.ring_mut(core.into()).pop() else {
            self.host.core_mut(core).busy = false;
            return Ok(None);
        };
        self.host.core_mut(core).busy = true;
        let rate = self.host.core(core).service_rate;
        let service = match self.cfg.service_time {
            ServiceTime::Deterministic => 1.0 / rate,
            ServiceTime::Exponential => {
                let u = self.engine.rng().next_f64(RngStream::Service);
                -(1.0 - u).ln() / rate
            }
        };
        pkt.service_start = Some(now);
        self.in_service[core.index()] = Some(pkt);
        let done = now + service;
        self.engine.schedule(done, SimEvent::ServiceComplete { core })?;
        Ok(Some(done))
    }

    fn deliver(&mut self, core: CoreId, pkt: Packet, now: SimTime) -> Result<(), SimError> {
        let flow = pkt.flow_id;
        let classification = self.stats.observe_delivery(flow, pkt.seq);
        self.stats.dupack_observe(flow, pkt.seq);
        self.host.core_mut(core).delivered += 1;
        if self.cfg.record_trace {
            self.log.push(DeliveryLogEntry {
                time: now,
                service_start: pkt.service_start.unwrap_or(now),
                flow: pkt.flow,
                flow_id: flow,
                seq: pkt.seq,
                core,
                ring_occupancy_at_enqueue: pkt.ring_occupancy_at_enqueue,
                classification,
            });
        }
        let thread = self.flows[flow.index()].thread;
        let acks = self.host.thread(thread)?.tx_per_delivery;
        for _ in 0..acks {
            self.tx_emit(thread, flow, TxKind::Data)?;
        }
        Ok(())
    }

    /// Sends one segment of `flow` from the thread's current core. The
    /// header is the reverse of the flow's receive-direction key.
    fn tx_emit(&mut self, thread: ThreadId, flow: FlowId, kind: TxKind) -> Result<(), SimError> {
        let core = self.host.thread(thread)?.current_core;
        let tx_header = self.flows[flow.index()].key.reverse();
        self.tx_packets += 1;
        if let FdUpdate::Updated {
            previous: Some(prev),
            core: new,
            ..
        } = self.nic.observe_tx(&tx_header, kind, core)?
        {
            if prev != new {
                self.steering_changes += 1;
            }
        }
        Ok(())
    }
}
