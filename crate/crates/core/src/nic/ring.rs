use std::collections::VecDeque;

use super::{NicError, Packet};

/// Bounded FIFO of received packets between a NIC queue and its core.
#[derive(Debug, Clone)]
pub struct RingBuffer {
    capacity: usize,
    contents: VecDeque<Packet>,
    drop_count: u64,
    high_water: usize,
}

impl RingBuffer {
    pub fn new(capacity: usize) -> Result<Self, NicError> {
        if capacity == 0 {
            return Err(NicError::ZeroCapacity);
        }
        Ok(RingBuffer {
            capacity,
            contents: VecDeque::with_capacity(capacity.min(4096)),
            drop_count: 0,
            high_water: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.contents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contents.is_empty()
    }

    pub fn drop_count(&self) -> u64 {
        self.drop_count
    }

    /// Highest occupancy seen so far.
    pub fn high_water(&self) -> usize {
        self.high_water
    }

    /// Appends at the tail. A full ring counts a drop and hands the packet back.
    pub fn push(&mut self, pkt: Packet) -> Result<(), Packet> {
        if self.contents.len() >= self.capacity {
            self.drop_count += 1;
            return Err(pkt);
        }
        self.contents.push_back(pkt);
        self.high_water = self.high_water.max(self.contents.len());
        Ok(())
    }

    pub fn pop(&mut self) -> Option<Packet> {
        self.contents.pop_front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.contents.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::SimTime;
    use crate::ids::FlowId;
    use crate::nic::FlowKey;

    fn pkt(seq: u64) -> Packet {
        Packet::rx(FlowKey::default(), FlowId(0), seq, SimTime::ZERO)
    }

    #[test]
    fn zero_capacity_rejected() {
        assert_eq!(RingBuffer::new(0).unwrap_err(), NicError::ZeroCapacity);
    }

    #[test]
    fn fifo_and_capacity() {
        let mut r = RingBuffer::new(3).unwrap();
        for s in 0..5 {
            let _ = r.push(pkt(s));
        }
        assert_eq!(r.len(), 3);
        assert_eq!(r.drop_count(), 2);
        let order: Vec<u64> = std::iter::from_fn(|| r.pop()).map(|p| p.seq).collect();
        assert_eq!(order, vec![0, 1, 2]);
        assert!(r.is_empty());
        assert_eq!(r.high_water(), 3);
    }

    proptest::proptest! {
        #[test]
        fn occupancy_never_exceeds_capacity(cap in 1usize..16, ops in proptest::collection::vec(proptest::bool::ANY, 0..200)) {
            let mut r = RingBuffer::new(cap).unwrap();
            let mut next = 0u64;
            let mut expected_head = 0u64;
            let mut accepted = std::collections::VecDeque::new();
            let mut drops = 0u64;
            for push in ops {
                if push {
                    match r.push(pkt(next)) {
                        Ok(()) => accepted.push_back(next),
                        Err(_) => drops += 1,
                    }
                    next += 1;
                } else if let Some(p) = r.pop() {
                    let want = accepted.pop_front().unwrap();
                    proptest::prop_assert_eq!(p.seq, want);
                    proptest::prop_assert!(p.seq >= expected_head);
                    expected_head = p.seq;
                }
                proptest::prop_assert!(r.len() <= cap);
                proptest::prop_assert_eq!(r.drop_count(), drops);
            }
        }
    }
}
