//! The Flow Director "traffic flow to core" table.
//!
//! Entries are keyed by the receive-direction 5-tuple and written only from
//! outgoing traffic: a TX header is reversed to find the entry it refreshes.
//! Data segments update the table on every `sample_rate`-th packet of their
//! flow; connection-setup segments always update it, as the ixgbe ATR logic
//! does for SYNs.

use std::collections::HashMap;

use super::{FlowKey, NicError};
use crate::ids::CoreId;

/// ixgbe's default `AtrSampleRate`.
pub const DEFAULT_SAMPLE_RATE: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxKind {
    /// Connection setup segment. Always sampled, does not advance the
    /// per-flow sampling counter.
    Syn,
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdUpdate {
    Updated {
        rx_key: FlowKey,
        previous: Option<CoreId>,
        core: CoreId,
    },
    Skipped,
}

#[derive(Debug, Clone)]
pub struct FdTable {
    entries: HashMap<FlowKey, CoreId>,
    sample_rate: u32,
    tx_counts: HashMap<FlowKey, u64>,
    cores: usize,
    updates: u64,
}

impl FdTable {
    pub fn new(cores: usize, sample_rate: u32) -> Result<Self, NicError> {
        if sample_rate == 0 {
            return Err(NicError::ZeroSampleRate);
        }
        if cores == 0 {
            return Err(NicError::NoQueues);
        }
        Ok(FdTable {
            entries: HashMap::new(),
            sample_rate,
            tx_counts: HashMap::new(),
            cores,
            updates: 0,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of table writes performed so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Core currently assigned to a receive-direction flow.
    pub fn lookup(&self, flow: &FlowKey) -> Option<CoreId> {
        self.entries.get(flow).copied()
    }

    /// Accounts one outgoing packet sent from `core`, writing the entry for
    /// the reversed key when the packet is sampled.
    pub fn update_from_tx(
        &mut self,
        tx_header: &FlowKey,
        kind: TxKind,
        core: CoreId,
    ) -> Result<FdUpdate, NicError> {
        if core.index() >= self.cores {
            return Err(NicError::InvalidCore {
                core,
                cores: self.cores,
            });
        }
        let rx_key = tx_header.reverse();
        let sampled = match kind {
            TxKind::Syn => true,
            TxKind::Data => {
                let count = self.tx_counts.entry(rx_key).or_insert(0);
                *count += 1;
                count.is_multiple_of(u64::from(self.sample_rate))
            }
        };
        if !sampled {
            return Ok(FdUpdate::Skipped);
        }
        let previous = self.entries.insert(rx_key, core);
        self.updates += 1;
        Ok(FdUpdate::Updated {
            rx_key,
            previous,
            core,
        })
    }
}
