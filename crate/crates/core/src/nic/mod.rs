//! NIC receive path: hashing, RSS fallback, the Flow Director table,
//! per-queue ring buffers and interrupt signaling.

mod fdir;
mod hash;
mod ring;

use std::fmt;

use thiserror::Error;

use crate::engine::SimTime;
use crate::ids::{CoreId, FlowId, QueueId};

pub use fdir::{FdTable, FdUpdate, TxKind, DEFAULT_SAMPLE_RATE};
pub use hash::{
    hash_5tuple, rss_select_queue, toeplitz, RssIndirection, DEFAULT_HASH_KEY, MIN_KEY_LEN,
    TUPLE_LEN,
};
pub use ring::RingBuffer;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NicError {
    #[error("hash key is {len} bytes, need at least {needed}")]
    KeyTooShort { len: usize, needed: usize },
    #[error("indirection table length {0} is not a nonzero power of two")]
    IndirectionLength(usize),
    #[error("NIC needs at least one queue")]
    NoQueues,
    #[error("ring capacity must be positive")]
    ZeroCapacity,
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("core {core} does not exist (have {cores})")]
    InvalidCore { core: CoreId, cores: usize },
    #[error("indirection table refers to queue {queue} but only {queues} exist")]
    InvalidQueue { queue: QueueId, queues: usize },
}

/// IPv4 5-tuple identifying a flow in one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FlowKey {
    pub src_addr: u32,
    pub dst_addr: u32,
    pub protocol: u8,
    pub src_port: u16,
    pub dst_port: u16,
}

impl FlowKey {
    pub const TCP: u8 = 6;

    /// Number of bits in the tuple (addresses, ports and protocol).
    pub const BITS: usize = TUPLE_LEN * 8 + 8;

    /// Header of the same connection seen in the opposite direction.
    pub fn reverse(&self) -> FlowKey {
        FlowKey {
            src_addr: self.dst_addr,
            dst_addr: self.src_addr,
            protocol: self.protocol,
            src_port: self.dst_port,
            dst_port: self.src_port,
        }
    }

    /// Addresses then ports, big-endian.
    pub fn tuple_bytes(&self) -> [u8; TUPLE_LEN] {
        let mut out = [0u8; TUPLE_LEN];
        out[0..4].copy_from_slice(&self.src_addr.to_be_bytes());
        out[4..8].copy_from_slice(&self.dst_addr.to_be_bytes());
        out[8..10].copy_from_slice(&self.src_port.to_be_bytes());
        out[10..12].copy_from_slice(&self.dst_port.to_be_bytes());
        out
    }

    /// Flips one bit of the tuple. Bits `0..96` index the serialized
    /// address/port bytes MSB first, bits `96..104` the protocol byte.
    pub fn with_bit_flipped(&self, bit: usize) -> FlowKey {
        assert!(bit < Self::BITS);
        if bit >= TUPLE_LEN * 8 {
            let mut k = *self;
            k.protocol ^= 0x80 >> (bit - TUPLE_LEN * 8);
            return k;
        }
        let mut bytes = self.tuple_bytes();
        bytes[bit / 8] ^= 0x80 >> (bit % 8);
        FlowKey {
            src_addr: u32::from_be_bytes(bytes[0..4].try_into().unwrap()),
            dst_addr: u32::from_be_bytes(bytes[4..8].try_into().unwrap()),
            protocol: self.protocol,
            src_port: u16::from_be_bytes([bytes[8], bytes[9]]),
            dst_port: u16::from_be_bytes([bytes[10], bytes[11]]),
        }
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.src_addr.to_be_bytes();
        let b = self.dst_addr.to_be_bytes();
        write!(
            f,
            "{}.{}.{}.{}:{} -> {}.{}.{}.{}:{} proto {}",
            a[0], a[1], a[2], a[3], self.src_port, b[0], b[1], b[2], b[3], self.dst_port,
            self.protocol
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Rx,
    Tx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub flow: FlowKey,
    pub flow_id: FlowId,
    pub seq: u64,
    pub direction: Direction,
    pub arrival_time: SimTime,
    /// Set when the stack starts processing the packet.
    pub service_start: Option<SimTime>,
    /// Set when the stack finishes processing the packet.
    pub delivery_time: Option<SimTime>,
    /// Ring occupancy observed just before this packet was enqueued.
    pub ring_occupancy_at_enqueue: usize,
}

impl Packet {
    pub fn rx(flow: FlowKey, flow_id: FlowId, seq: u64, arrival_time: SimTime) -> Packet {
        Packet {
            flow,
            flow_id,
            seq,
            direction: Direction::Rx,
            arrival_time,
            service_start: None,
            delivery_time: None,
            ring_occupancy_at_enqueue: 0,
        }
    }
}

/// Notification that a queue went from empty to non-empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interrupt {
    pub queue: QueueId,
    pub core: CoreId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Enqueued {
        queue: QueueId,
        interrupt: Option<Interrupt>,
    },
    Dropped {
        queue: QueueId,
    },
}

/// Multi-queue NIC with one ring per core.
#[derive(Debug, Clone)]
pub struct Nic {
    rss: RssIndirection,
    fd: FdTable,
    fd_enabled: bool,
    rings: Vec<RingBuffer>,
    interrupts: u64,
}

impl Nic {
    pub fn new(
        cores: usize,
        ring_capacity: usize,
        rss: RssIndirection,
        fd_enabled: bool,
        sample_rate: u32,
    ) -> Result<Nic, NicError> {
        if cores == 0 {
            return Err(NicError::NoQueues);
        }
        if rss.max_queue().index() >= cores {
            return Err(NicError::InvalidQueue {
                queue: rss.max_queue(),
                queues: cores,
            });
        }
        let rings = (0..cores)
            .map(|_| RingBuffer::new(ring_capacity))
            .collect::<Result<_, _>>()?;
        Ok(Nic {
            rss,
            fd: FdTable::new(cores, sample_rate)?,
            fd_enabled,
            rings,
            interrupts: 0,
        })
    }

    pub fn queues(&self) -> usize {
        self.rings.len()
    }

    pub fn ring(&self, q: QueueId) -> &RingBuffer {
        &self.rings[q.index()]
    }

    pub fn ring_mut(&mut self, q: QueueId) -> &mut RingBuffer {
        &mut self.rings[q.index()]
    }

    pub fn rings(&self) -> &[RingBuffer] {
        &self.rings
    }

    pub fn fd_table(&self) -> &FdTable {
        &self.fd
    }

    pub fn fd_enabled(&self) -> bool {
        self.fd_enabled
    }

    pub fn rss(&self) -> &RssIndirection {
        &self.rss
    }

    pub fn interrupts(&self) -> u64 {
        self.interrupts
    }

    pub fn total_drops(&self) -> u64 {
        self.rings.iter().map(RingBuffer::drop_count).sum()
    }

    /// Owning core of a queue. Queues and cores are in bijection.
    pub fn owner(&self, q: QueueId) -> CoreId {
        q.into()
    }

    /// Receive queue for an incoming flow: the Flow Director entry when one
    /// exists, else RSS.
    pub fn select_queue(&self, flow: &FlowKey) -> QueueId {
        if self.fd_enabled {
            if let Some(core) = self.fd.lookup(flow) {
                return core.into();
            }
        }
        let hash = hash_5tuple(flow, self.rss.hash_key()).expect("key length checked at construction");
        rss_select_queue(hash, &self.rss)
    }

    /// Steers an RX packet to its ring. Raises an interrupt when the ring
    /// goes from empty to non-empty.
    pub fn enqueue_rx(&mut self, mut pkt: Packet, now: SimTime) -> EnqueueOutcome {
        debug_assert_eq!(pkt.direction, Direction::Rx);
        let queue = self.select_queue(&pkt.flow);
        pkt.arrival_time = now;
        let ring = &mut self.rings[queue.index()];
        let was_empty = ring.is_empty();
        pkt.ring_occupancy_at_enqueue = ring.len();
        if ring.push(pkt).is_err() {
            return EnqueueOutcome::Dropped { queue };
        }
        let interrupt = was_empty.then(|| self.raise_interrupt(queue));
        EnqueueOutcome::Enqueued { queue, interrupt }
    }

    /// Signals the core owning `queue`. The ring must be non-empty.
    pub fn raise_interrupt(&mut self, queue: QueueId) -> Interrupt {
        debug_assert!(!self.rings[queue.index()].is_empty());
        self.interrupts += 1;
        Interrupt {
            queue,
            core: self.owner(queue),
        }
    }

    /// Feeds an outgoing header into the Flow Director table. A no-op when
    /// Flow Director is disabled.
    pub fn observe_tx(
        &mut self,
        tx_header: &FlowKey,
        kind: TxKind,
        core: CoreId,
    ) -> Result<FdUpdate, NicError> {
        if !self.fd_enabled {
            return Ok(FdUpdate::Skipped);
        }
        self.fd.update_from_tx(tx_header, kind, core)
    }
}
