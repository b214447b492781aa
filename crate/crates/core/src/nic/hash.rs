//! Toeplitz receive-side hash and the RSS indirection table.

use super::{FlowKey, NicError};
use crate::ids::QueueId;

/// Serialized length of the hashed tuple: two IPv4 addresses and two ports.
pub const TUPLE_LEN: usize = 12;

/// Minimum key length for hashing a [`TUPLE_LEN`]-byte input.
pub const MIN_KEY_LEN: usize = TUPLE_LEN + 4;

/// The 40-byte RSS verification key published with the Microsoft RSS
/// specification. Used as the default hash key.
#[rustfmt::skip]
pub const DEFAULT_HASH_KEY: [u8; 40] = [
    0x6d, 0x5a, 0x56, 0xda, 0x25, 0x5b, 0x0e, 0xc2,
    0x41, 0x67, 0x25, 0x3d, 0x43, 0xa3, 0x8f, 0xb0,
    0xd0, 0xca, 0x2b, 0xcb, 0xae, 0x7b, 0x30, 0xb4,
    0x77, 0xcb, 0x2d, 0xa3, 0x80, 0x30, 0xf2, 0x0c,
    0x6a, 0x42, 0xb7, 0x3b, 0xbe, 0xac, 0x01, 0xfa,
];

/// Toeplitz hash of `data` under `key`.
///
/// For every set bit at position `k` of the input, the 32-bit key window
/// starting at bit `k` is XORed into the result. `key` must hold at least
/// `data.len() + 4` bytes.
pub fn toeplitz(key: &[u8], data: &[u8]) -> u32 {
    debug_assert!(key.len() >= data.len() + 4);
    let mut hash = 0u32;
    for (i, &byte) in data.iter().enumerate() {
        if byte == 0 {
            continue;
        }
        // 40 key bits starting at byte i cover the windows for all 8 input bits.
        let mut wide = 0u64;
        for j in 0..5 {
            wide = (wide << 8) | u64::from(key.get(i + j).copied().unwrap_or(0));
        }
        for bit in 0..8 {
            if byte & (0x80 >> bit) != 0 {
                hash ^= (wide >> (8 - bit)) as u32;
            }
        }
    }
    hash
}

/// Hash of a flow's 5-tuple.
///
/// The address and port fields are Toeplitz-hashed in network order. The
/// protocol byte is folded in by XORing its own Toeplitz contribution taken
/// from the head of the key, so it affects the result without lengthening
/// the hashed input.
pub fn hash_5tuple(key: &FlowKey, hash_key: &[u8]) -> Result<u32, NicError> {
    if hash_key.len() < MIN_KEY_LEN {
        return Err(NicError::KeyTooShort {
            len: hash_key.len(),
            needed: MIN_KEY_LEN,
        });
    }
    let tuple = key.tuple_bytes();
    Ok(toeplitz(hash_key, &tuple) ^ toeplitz(hash_key, &[key.protocol]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RssIndirection {
    hash_key: Vec<u8>,
    table: Vec<QueueId>,
}

impl RssIndirection {
    pub fn new(hash_key: Vec<u8>, table: Vec<QueueId>) -> Result<Self, NicError> {
        if hash_key.len() < MIN_KEY_LEN {
            return Err(NicError::KeyTooShort {
                len: hash_key.len(),
                needed: MIN_KEY_LEN,
            });
        }
        if table.is_empty() || !table.len().is_power_of_two() {
            return Err(NicError::IndirectionLength(table.len()));
        }
        Ok(RssIndirection { hash_key, table })
    }

    /// Table of length `len` that spreads slots round-robin over `queues`.
    pub fn round_robin(hash_key: Vec<u8>, len: usize, queues: usize) -> Result<Self, NicError> {
        if queues == 0 {
            return Err(NicError::NoQueues);
        }
        let table = (0..len).map(|i| QueueId(i % queues)).collect();
        Self::new(hash_key, table)
    }

    pub fn hash_key(&self) -> &[u8] {
        &self.hash_key
    }

    pub fn table(&self) -> &[QueueId] {
        &self.table
    }

    pub fn max_queue(&self) -> QueueId {
        self.table.iter().copied().max().unwrap_or_default()
    }
}

pub fn rss_select_queue(hash: u32, ind: &RssIndirection) -> QueueId {
    let mask = ind.table.len() - 1;
    ind.table[hash as usize & mask]
}
