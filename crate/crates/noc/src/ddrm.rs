//! Per-output fault manager: turns repeated retransmissions into a diagnosis.
//!
//! Entry condition is a flit whose retransmission counter reached 2, which
//! rules out transients (a transient never corrupts two consecutive tries of
//! the same content). The suspect set is then narrowed in two steps:
//!
//! * BufferChecking: watch later failures from the same input. A repeat at
//!   the same buffer slot convicts the slot. A different slot clears the
//!   buffer and moves suspicion to the crossbar link.
//! * CrossbarChecking: bind a spare over the suspect link and watch the
//!   first flit that crosses it afterwards. If it gets through, the base
//!   link was the culprit and the spare stays as the repair. If it also
//!   fails twice, nothing inside the router explains the errors: the
//!   channel itself is convicted and the spare goes back to the pool.
//!
//! If no spare can be bound the crossbar step is skipped and the channel is
//! convicted directly.

use crate::arq::NackInfo;
use crate::crossbar::Crossbar;
use crate::flit::Pid;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DiagPhase {
    Idle,
    BufferChecking { input: usize, slot: usize },
    CrossbarChecking { input: usize, probe: Option<(Pid, u16)> },
}

/// Conclusions and side effects the router must act on.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Verdict {
    SlotFault { input: usize, slot: usize },
    BypassBound { input: usize },
    /// Base link confirmed faulty; the bound spare remains as the repair.
    LinkFault { input: usize },
    BypassReleased { input: usize },
    ChannelFault,
}

pub struct Diag {
    pub phase: DiagPhase,
    /// The output port this manager watches (its crossbar column).
    output: usize,
}

impl Diag {
    pub fn new(output: usize) -> Diag {
        Diag { phase: DiagPhase::Idle, output }
    }

    pub fn on_nack(&mut self, info: &NackInfo, xbar: &mut Crossbar) -> Vec<Verdict> {
        match self.phase {
            DiagPhase::Idle => {
                if info.nacks >= 2 {
                    // Permanent fault confirmed; start watching this input.
                    self.phase = DiagPhase::BufferChecking { input: info.input, slot: info.slot };
                }
                vec![]
            }
            DiagPhase::BufferChecking { input, slot } => {
                if info.input != input {
                    return vec![];
                }
                if info.slot == slot {
                    self.phase = DiagPhase::Idle;
                    vec![Verdict::SlotFault { input, slot }]
                } else if xbar.bind(input, self.output) {
                    self.phase = DiagPhase::CrossbarChecking { input, probe: None };
                    vec![Verdict::BypassBound { input }]
                } else {
                    // Pool exhausted: cannot isolate the link, convict the
                    // channel without the crossbar step.
                    self.phase = DiagPhase::Idle;
                    vec![Verdict::ChannelFault]
                }
            }
            DiagPhase::CrossbarChecking { input, probe } => {
                if probe != Some((info.pid, info.seq)) {
                    return vec![];
                }
                if info.nacks >= 2 {
                    xbar.release(input, self.output);
                    self.phase = DiagPhase::Idle;
                    vec![Verdict::BypassReleased { input }, Verdict::ChannelFault]
                } else {
                    vec![]
                }
            }
        }
    }

    /// A retired (implicitly acked) entry. Only the crossbar probe matters.
    pub fn on_ack(&mut self, pid: Pid, seq: u16, xbar: &mut Crossbar) -> Vec<Verdict> {
        if let DiagPhase::CrossbarChecking { input, probe } = self.phase {
            if probe == Some((pid, seq)) {
                xbar.mark(input, self.output);
                self.phase = DiagPhase::Idle;
                return vec![Verdict::LinkFault { input }];
            }
        }
        vec![]
    }

    /// Record the first flit crossing the suspect link after the bind.
    pub fn note_ct(&mut self, input: usize, pid: Pid, seq: u16) {
        if let DiagPhase::CrossbarChecking { input: i0, probe: probe @ None } = &mut self.phase {
            if *i0 == input {
                *probe = Some((pid, seq));
            }
        }
    }

    /// The probe's packet was aborted elsewhere; re-arm on the next flit.
    pub fn on_abort(&mut self, pid: Pid) {
        if let DiagPhase::CrossbarChecking { probe, .. } = &mut self.phase {
            if probe.map(|(p, _)| p) == Some(pid) {
                *probe = None;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nack(pid: Pid, seq: u16, input: usize, slot: usize, nacks: u8) -> NackInfo {
        NackInfo { pid, seq, input, slot, via_spare: false, nacks }
    }

    #[test]
    fn slot_fault_convicted_on_repeat_position() {
        let mut x = Crossbar::new(2);
        let mut d = Diag::new(4);
        assert!(d.on_nack(&nack(1, 0, 6, 1, 2), &mut x).is_empty());
        assert_eq!(d.phase, DiagPhase::BufferChecking { input: 6, slot: 1 });
        // Failure from a different input is out of scope.
        assert!(d.on_nack(&nack(7, 0, 2, 1, 1), &mut x).is_empty());
        let v = d.on_nack(&nack(3, 0, 6, 1, 1), &mut x);
        assert_eq!(v, vec![Verdict::SlotFault { input: 6, slot: 1 }]);
        assert_eq!(d.phase, DiagPhase::Idle);
    }

    #[test]
    fn varying_position_binds_bypass_then_ack_convicts_link() {
        let mut x = Crossbar::new(2);
        let mut d = Diag::new(0);
        d.on_nack(&nack(1, 0, 6, 0, 2), &mut x);
        let v = d.on_nack(&nack(2, 0, 6, 2, 1), &mut x);
        assert_eq!(v, vec![Verdict::BypassBound { input: 6 }]);
        assert!(x.bound_to(6, 0));
        // Next flit through the pair becomes the probe and gets through.
        d.note_ct(6, 3, 0);
        let v = d.on_ack(3, 0, &mut x);
        assert_eq!(v, vec![Verdict::LinkFault { input: 6 }]);
        assert!(x.is_marked(6, 0), "base link recorded faulty");
        assert!(x.bound_to(6, 0), "repair stays bound");
    }

    #[test]
    fn probe_double_nack_convicts_channel_and_frees_spare() {
        let mut x = Crossbar::new(1);
        let mut d = Diag::new(5);
        d.on_nack(&nack(1, 0, 0, 0, 2), &mut x);
        d.on_nack(&nack(2, 0, 0, 1, 1), &mut x);
        d.note_ct(0, 3, 0);
        assert!(d.on_nack(&nack(3, 0, 0, 2, 1), &mut x).is_empty());
        let v = d.on_nack(&nack(3, 0, 0, 2, 2), &mut x);
        assert_eq!(v, vec![Verdict::BypassReleased { input: 0 }, Verdict::ChannelFault]);
        assert!(!x.bound_to(0, 5));
        assert_eq!(d.phase, DiagPhase::Idle);
    }

    #[test]
    fn exhausted_pool_skips_to_channel_verdict() {
        let mut x = Crossbar::new(1);
        assert!(x.bind(3, 3)); // someone else owns the only spare
        let mut d = Diag::new(2);
        d.on_nack(&nack(1, 0, 6, 0, 2), &mut x);
        let v = d.on_nack(&nack(2, 0, 6, 1, 1), &mut x);
        assert_eq!(v, vec![Verdict::ChannelFault]);
    }

    #[test]
    fn aborted_probe_rearms() {
        let mut x = Crossbar::new(2);
        let mut d = Diag::new(0);
        d.on_nack(&nack(1, 0, 6, 0, 2), &mut x);
        d.on_nack(&nack(2, 0, 6, 1, 1), &mut x);
        d.note_ct(6, 9, 4);
        d.on_abort(9);
        d.note_ct(6, 10, 0);
        let v = d.on_ack(10, 0, &mut x);
        assert_eq!(v, vec![Verdict::LinkFault { input: 6 }]);
    }
}
