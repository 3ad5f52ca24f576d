//! Structured event records, one JSON line each.
//!
//! The core classes are `arq`, `vote_mismatch`, `slot_marked`, `bypass_bound`,
//! `channel_marked` and `drop`. A few extra classes document repair and
//! delivery milestones; consumers that only know the core set can ignore them.

use crate::coord::Coord3;
use crate::flit::Pid;
use serde::Serialize;

#[derive(Clone, Debug, Serialize, PartialEq)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum EventKind {
    /// A retransmission request reached the sender.
    Arq { output: u8, pid: Pid, seq: u16, retry: u8 },
    /// Duplicated pipeline results disagreed; one recompute round follows.
    VoteMismatch { input: u8, pid: Pid, seq: u16, round: u8 },
    /// All three vote rounds disagreed; the flit re-executes from the buffer.
    VoteRetry { input: u8, pid: Pid, seq: u16 },
    /// A buffer slot was flagged and is skipped from now on.
    SlotMarked { input: u8, slot: u8 },
    /// A spare crossbar link was bound to a suspect (input, output) pair.
    BypassBound { input: u8, output: u8 },
    /// The sticky spare was released again (diagnosis moved past the crossbar).
    BypassReleased { input: u8, output: u8 },
    /// A base crossbar link was confirmed faulty; its spare stays bound.
    LinkMarked { input: u8, output: u8 },
    /// A router-to-router channel was flagged unusable for routing.
    ChannelMarked { output: u8, reason: MarkReason },
    /// A packet (or stray flit) left the network undelivered.
    Drop { pid: Pid, reason: DropReason, flits: u16 },
    /// Blocked-head escape: a younger packet was serviced past the head.
    RabEscape { input: u8, front_pid: Pid, pid: Pid },
    /// A header was re-routed locally: its committed output died, or it
    /// starved long enough on a locked output to take a detour.
    Reroute { input: u8, pid: Pid, new_output: u8 },
    /// A wedged packet was pulled out of the network here and re-queued for
    /// injection; last-resort recovery when no detour exists.
    Absorbed { pid: Pid, flits: u16 },
    /// Tail flit ejected; packet complete at this node.
    Delivered { pid: Pid, hops: u16 },
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MarkReason {
    Planted,
    Diagnosed,
    Starvation,
    DeadBuffer,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// No usable direction toward the destination.
    Unroutable,
    /// Retransmission limit reached on a permanent fault.
    ArqLimit,
    /// The packet's committed channel was marked mid-stream.
    ChannelCut,
    /// Body flit arrived with no matching reservation.
    Orphan,
    /// Flit left through a port with no channel behind it.
    InvalidPort,
    /// Uncorrectable word arrived with retransmission disabled.
    Corrupt,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Event {
    pub cycle: u64,
    pub node: Coord3,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Render the log exactly as the CLI writes it, for byte-identity checks.
pub fn to_log_lines(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

/// Count events per serialized class name.
pub fn class_counts(events: &[Event]) -> std::collections::BTreeMap<&'static str, u64> {
    let mut map = std::collections::BTreeMap::new();
    for e in events {
        *map.entry(class_name(&e.kind)).or_insert(0) += 1;
    }
    map
}

pub fn class_name(kind: &EventKind) -> &'static str {
    match kind {
        EventKind::Arq { .. } => "arq",
        EventKind::VoteMismatch { .. } => "vote_mismatch",
        EventKind::VoteRetry { .. } => "vote_retry",
        EventKind::SlotMarked { .. } => "slot_marked",
        EventKind::BypassBound { .. } => "bypass_bound",
        EventKind::BypassReleased { .. } => "bypass_released",
        EventKind::LinkMarked { .. } => "link_marked",
        EventKind::ChannelMarked { .. } => "channel_marked",
        EventKind::Drop { .. } => "drop",
        EventKind::RabEscape { .. } => "rab_escape",
        EventKind::Reroute { .. } => "reroute",
        EventKind::Absorbed { .. } => "absorbed",
        EventKind::Delivered { .. } => "delivered",
    }
}
