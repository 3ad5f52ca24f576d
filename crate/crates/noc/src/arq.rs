//! Per-output retransmission stage.
//!
//! Every flit that crosses the crossbar lands here before going on the wire,
//! so the stored copy carries any damage picked up in the buffer or crossbar
//! but none added by the channel itself. The receiver answers a detected
//! uncorrectable word with a one-cycle backward nack; silence for two cycles
//! after a transmission is the implicit ack that retires the entry.
//!
//! A nack is positional: it always refers to the oldest in-flight entry.
//! Rewinding also requeues everything sent after it, because the receiver
//! discards that spillover while its nack window is open.

use crate::flit::{Flit, Pid};
use std::collections::VecDeque;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SendState {
    Queued,
    Sent { at: u64 },
}

#[derive(Clone, Debug)]
pub struct OutboxEntry {
    pub flit: Flit,
    /// Which input port and buffer slot the flit was read from.
    pub input: usize,
    pub slot: usize,
    pub via_spare: bool,
    pub ct_cycle: u64,
    pub state: SendState,
    /// Consecutive retransmission requests for this flit.
    pub nacks: u8,
}

/// Snapshot handed to diagnosis and event logging after a nack.
#[derive(Clone, Copy, Debug)]
pub struct NackInfo {
    pub pid: Pid,
    pub seq: u16,
    pub input: usize,
    pub slot: usize,
    pub via_spare: bool,
    pub nacks: u8,
}

pub struct Outbox {
    entries: VecDeque<OutboxEntry>,
    cap: usize,
    /// With ARQ off the entry retires the moment it is transmitted.
    hold_for_ack: bool,
}

impl Outbox {
    pub fn new(cap: usize, hold_for_ack: bool) -> Outbox {
        Outbox { entries: VecDeque::new(), cap, hold_for_ack }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_space(&self) -> bool {
        self.entries.len() < self.cap
    }

    pub fn push(&mut self, entry: OutboxEntry) {
        assert!(self.has_space(), "outbox overflow");
        self.entries.push_back(entry);
    }

    /// Choose this cycle's transmission: the oldest queued entry that was
    /// pushed on an earlier cycle. At most one per cycle.
    pub fn pick_transmit(&mut self, now: u64) -> Option<Flit> {
        let idx = self.entries.iter().position(|e| e.state == SendState::Queued && e.ct_cycle < now)?;
        if self.hold_for_ack {
            self.entries[idx].state = SendState::Sent { at: now };
            Some(self.entries[idx].flit.clone())
        } else {
            Some(self.entries.remove(idx).unwrap().flit)
        }
    }

    /// Apply a backward retransmission request: the oldest in-flight entry
    /// failed. It and every later in-flight entry go back to the queue.
    pub fn process_nack(&mut self) -> Option<NackInfo> {
        let first = self.entries.iter().position(|e| matches!(e.state, SendState::Sent { .. }))?;
        self.entries[first].nacks += 1;
        for e in self.entries.iter_mut().skip(first) {
            if matches!(e.state, SendState::Sent { .. }) {
                e.state = SendState::Queued;
            }
        }
        let e = &self.entries[first];
        Some(NackInfo {
            pid: e.flit.pid,
            seq: e.flit.seq,
            input: e.input,
            slot: e.slot,
            via_spare: e.via_spare,
            nacks: e.nacks,
        })
    }

    /// Retire entries whose transmission has been silent for two cycles.
    /// Returns them oldest-first for diagnosis bookkeeping.
    pub fn pop_acked(&mut self, now: u64) -> Vec<OutboxEntry> {
        let mut out = Vec::new();
        while let Some(front) = self.entries.front() {
            match front.state {
                SendState::Sent { at } if at + 2 <= now => {
                    out.push(self.entries.pop_front().unwrap());
                }
                _ => break,
            }
        }
        out
    }

    pub fn remove_packet(&mut self, pid: Pid) -> Vec<OutboxEntry> {
        let mut kept = VecDeque::new();
        let mut removed = Vec::new();
        for e in self.entries.drain(..) {
            if e.flit.pid == pid {
                removed.push(e);
            } else {
                kept.push_back(e);
            }
        }
        self.entries = kept;
        removed
    }

    pub fn iter(&self) -> impl Iterator<Item = &OutboxEntry> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(pid: Pid, seq: u16, ct: u64) -> OutboxEntry {
        OutboxEntry {
            flit: Flit::new(0, pid, seq),
            input: 6,
            slot: seq as usize % 4,
            via_spare: false,
            ct_cycle: ct,
            state: SendState::Queued,
            nacks: 0,
        }
    }

    #[test]
    fn transmits_cycle_after_crossbar() {
        let mut ob = Outbox::new(4, true);
        ob.push(entry(1, 0, 3));
        assert!(ob.pick_transmit(3).is_none(), "same-cycle transmit forbidden");
        assert!(ob.pick_transmit(4).is_some());
        assert!(ob.pick_transmit(4).is_none(), "one transmission per cycle");
    }

    #[test]
    fn implicit_ack_after_two_silent_cycles() {
        let mut ob = Outbox::new(4, true);
        ob.push(entry(1, 0, 3));
        ob.pick_transmit(4);
        assert!(ob.pop_acked(5).is_empty());
        let acked = ob.pop_acked(6);
        assert_eq!(acked.len(), 1);
        assert!(ob.is_empty());
    }

    #[test]
    fn nack_rewinds_failed_flit_and_spillover() {
        let mut ob = Outbox::new(4, true);
        ob.push(entry(1, 0, 3));
        ob.push(entry(1, 1, 4));
        assert_eq!(ob.pick_transmit(4).unwrap().seq, 0);
        assert_eq!(ob.pick_transmit(5).unwrap().seq, 1);
        // Receiver saw seq 0 at cycle 5 and nacked; sender reads it at 6.
        let info = ob.process_nack().unwrap();
        assert_eq!((info.seq, info.nacks), (0, 1));
        // Both entries retransmit in order: +2 cycles per retry for seq 0.
        assert_eq!(ob.pick_transmit(6).unwrap().seq, 0);
        assert_eq!(ob.pick_transmit(7).unwrap().seq, 1);
        assert!(ob.pop_acked(8).len() == 1, "seq 0 retired after silence");
    }

    #[test]
    fn second_consecutive_nack_reaches_counter_two() {
        let mut ob = Outbox::new(4, true);
        ob.push(entry(9, 0, 0));
        ob.pick_transmit(1);
        assert_eq!(ob.process_nack().unwrap().nacks, 1);
        ob.pick_transmit(3);
        assert_eq!(ob.process_nack().unwrap().nacks, 2);
    }

    #[test]
    fn without_arq_entries_leave_at_transmit() {
        let mut ob = Outbox::new(4, false);
        ob.push(entry(1, 0, 0));
        assert!(ob.pick_transmit(1).is_some());
        assert!(ob.is_empty());
    }

    #[test]
    fn remove_packet_keeps_other_entries() {
        let mut ob = Outbox::new(4, true);
        ob.push(entry(1, 0, 0));
        ob.push(entry(2, 0, 0));
        ob.push(entry(1, 1, 0));
        let removed = ob.remove_packet(1);
        assert_eq!(removed.len(), 2);
        assert_eq!(ob.len(), 1);
        assert_eq!(ob.iter().next().unwrap().flit.pid, 2);
    }
}
