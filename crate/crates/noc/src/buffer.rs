//! Input buffer with per-slot fault flags and random slot access.
//!
//! Writes scan a circular pointer over the slot array, skipping flagged and
//! occupied slots, so the physical slot a flit lands in is a deterministic
//! function of the write history and not of which slots happen to be free.
//! Logical FIFO order is kept separately and survives slot marking.

use crate::flit::{Flit, Pid};
use std::collections::VecDeque;

struct Slot {
    flit: Option<Flit>,
    faulty: bool,
}

pub struct InputBuffer {
    slots: Vec<Slot>,
    /// Occupied slot indices in arrival order.
    order: VecDeque<usize>,
    /// Next slot the write scan starts from.
    wp: usize,
}

impl InputBuffer {
    pub fn new(depth: usize) -> InputBuffer {
        assert!(depth >= 1);
        InputBuffer {
            slots: (0..depth).map(|_| Slot { flit: None, faulty: false }).collect(),
            order: VecDeque::new(),
            wp: 0,
        }
    }

    pub fn depth(&self) -> usize {
        self.slots.len()
    }

    /// Store a flit in the first usable slot at or after the write pointer.
    /// Returns the slot index, or None when no healthy slot is free.
    pub fn write(&mut self, flit: Flit) -> Option<usize> {
        let n = self.slots.len();
        for k in 0..n {
            let i = (self.wp + k) % n;
            let s = &mut self.slots[i];
            if !s.faulty && s.flit.is_none() {
                s.flit = Some(flit);
                self.order.push_back(i);
                self.wp = (i + 1) % n;
                return Some(i);
            }
        }
        None
    }

    /// Remove and return the flit in `slot`.
    pub fn take(&mut self, slot: usize) -> Flit {
        let f = self.slots[slot].flit.take().expect("take from occupied slot");
        let pos = self.order.iter().position(|&i| i == slot).expect("slot tracked");
        self.order.remove(pos);
        f
    }

    pub fn peek(&self, slot: usize) -> Option<&Flit> {
        self.slots[slot].flit.as_ref()
    }

    /// Replace the stored word of an occupied slot. Models damage the slot
    /// hardware itself inflicts on the bits it holds.
    pub fn overwrite_word(&mut self, slot: usize, word: u64) {
        self.slots[slot].flit.as_mut().expect("overwrite occupied slot").word = word;
    }

    /// Flag a slot so future writes skip it. Any resident flit stays readable;
    /// it was already corrupted at write time and drains normally.
    pub fn mark_faulty(&mut self, slot: usize) {
        self.slots[slot].faulty = true;
    }

    pub fn is_faulty(&self, slot: usize) -> bool {
        self.slots[slot].faulty
    }

    pub fn occupied(&self) -> usize {
        self.order.len()
    }

    pub fn healthy_capacity(&self) -> usize {
        self.slots.iter().filter(|s| !s.faulty).count()
    }

    pub fn free_healthy(&self) -> usize {
        self.slots.iter().filter(|s| !s.faulty && s.flit.is_none()).count()
    }

    /// Occupied slots in arrival order.
    pub fn iter_fifo(&self) -> impl Iterator<Item = (usize, &Flit)> {
        self.order.iter().map(move |&i| (i, self.slots[i].flit.as_ref().unwrap()))
    }

    /// Oldest buffered flit of the given packet.
    pub fn first_of(&self, pid: Pid) -> Option<(usize, &Flit)> {
        self.iter_fifo().find(|(_, f)| f.pid == pid)
    }

    /// Remove every flit of `pid`; returns the freed (slot, flit) pairs.
    pub fn remove_packet(&mut self, pid: Pid) -> Vec<(usize, Flit)> {
        let doomed: Vec<usize> = self
            .order
            .iter()
            .copied()
            .filter(|&i| self.slots[i].flit.as_ref().unwrap().pid == pid)
            .collect();
        let mut out = Vec::new();
        for i in doomed {
            out.push((i, self.take(i)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f(pid: Pid, seq: u16) -> Flit {
        Flit::new(0, pid, seq)
    }

    #[test]
    fn empty_buffer_writes_to_slot_zero() {
        let mut b = InputBuffer::new(4);
        assert_eq!(b.write(f(1, 0)), Some(0));
    }

    #[test]
    fn flagged_slot_zero_is_skipped() {
        let mut b = InputBuffer::new(4);
        b.mark_faulty(0);
        assert_eq!(b.write(f(1, 0)), Some(1));
        assert_eq!(b.healthy_capacity(), 3);
    }

    #[test]
    fn full_over_healthy_slots_rejects() {
        let mut b = InputBuffer::new(4);
        b.mark_faulty(2);
        for s in 0..3 {
            assert!(b.write(f(1, s)).is_some());
        }
        assert_eq!(b.write(f(1, 3)), None);
    }

    #[test]
    fn pointer_keeps_rotating_past_freed_slots() {
        let mut b = InputBuffer::new(4);
        for s in 0..4 {
            b.write(f(1, s));
        }
        b.take(0);
        b.take(1);
        // Pointer sits at slot 0 after four writes, so refills start there
        // regardless of which slot freed first.
        assert_eq!(b.write(f(2, 0)), Some(0));
        assert_eq!(b.write(f(2, 1)), Some(1));
        assert_eq!(b.write(f(2, 2)), None);
    }

    #[test]
    fn fifo_order_is_arrival_order_not_slot_order() {
        let mut b = InputBuffer::new(4);
        b.write(f(1, 0));
        b.write(f(1, 1));
        b.take(0);
        b.write(f(2, 0)); // lands in slot 2, younger than slot 1's flit
        let order: Vec<Pid> = b.iter_fifo().map(|(_, fl)| fl.pid).collect();
        assert_eq!(order, vec![1, 2]);
    }

    #[test]
    fn faulty_slot_between_reads_is_skipped() {
        let mut b = InputBuffer::new(4);
        b.mark_faulty(1);
        let a = b.write(f(1, 0)).unwrap();
        let c = b.write(f(1, 1)).unwrap();
        assert_eq!((a, c), (0, 2));
        assert_eq!(b.take(0).seq, 0);
        assert_eq!(b.take(2).seq, 1);
    }

    proptest! {
        /// With k flagged slots the buffer is a correct FIFO of depth 4-k.
        #[test]
        fn behaves_as_reference_queue(
            faulty in proptest::collection::vec(any::<bool>(), 4),
            ops in proptest::collection::vec(any::<bool>(), 0..64),
        ) {
            prop_assume!(faulty.iter().filter(|&&x| x).count() < 4);
            let mut b = InputBuffer::new(4);
            for (i, &bad) in faulty.iter().enumerate() {
                if bad {
                    b.mark_faulty(i);
                }
            }
            let depth = b.healthy_capacity();
            let mut reference: VecDeque<u16> = VecDeque::new();
            let mut next = 0u16;
            for write in ops {
                if write {
                    let got = b.write(f(0, next));
                    if reference.len() < depth {
                        prop_assert!(got.is_some());
                        prop_assert!(!b.is_faulty(got.unwrap()));
                        reference.push_back(next);
                    } else {
                        prop_assert!(got.is_none());
                    }
                    next += 1;
                } else if let Some(want) = reference.pop_front() {
                    let (slot, _) = b.iter_fifo().next().map(|(s, fl)| (s, fl.seq)).unwrap();
                    prop_assert_eq!(b.take(slot).seq, want);
                }
            }
            prop_assert_eq!(b.occupied(), reference.len());
        }
    }
}
