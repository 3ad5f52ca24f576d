//! One router: seven input buffers with a slot-granular service list, a
//! duplicated route/arbitration pipeline with majority voting, a crossbar
//! with spare links, per-output retransmission outboxes and fault managers.
//!
//! Per cycle the router runs a fixed sequence of passes over its own state
//! plus read-only shared inputs (fault map, congestion snapshot, channel
//! latches), and emits actions for the network to apply in the commit phase.
//! Nothing shared is written during a pass, so routers may be evaluated in
//! any order.
//!
//! Pipeline timing, with buffer write at cycle t:
//!
//! ```text
//!             t     t+1          t+2            t+3
//! plain:      write route+arb    crossbar       (wire)
//! voted:      write round 1      round 2 + ct   (wire)      speculative
//! voted:      write round 1      round 2        crossbar    conservative
//! ```
//!
//! A vote mismatch inserts one recompute round (+1 cycle); a failed majority
//! flushes the flit back to its buffer slot and it re-executes (+3 cycles).

use crate::arq::{Outbox, OutboxEntry, SendState};
use crate::buffer::InputBuffer;
use crate::codec::{self, DecodeOutcome, EccMode, FlitType};
use crate::coord::{Coord3, Dims, Port, PORT_COUNT};
use crate::crossbar::{Crossbar, XbarPath};
use crate::ddrm::{Diag, Verdict};
use crate::event::{DropReason, Event, EventKind, MarkReason};
use crate::fault::Stuck2;
use crate::flit::{Flit, Pid};
use crate::routing::{possible_directions, route, CongestionView, FaultMap, RouteDecision};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::collections::VecDeque;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CtMode {
    /// Crossbar traversal overlaps the verify round; a mismatch squashes it.
    Speculative,
    /// Crossbar traversal waits for the verify outcome (+1 cycle per hop).
    Conservative,
}

#[derive(Clone, Debug)]
pub struct RouterConfig {
    pub dims: Dims,
    pub ecc: EccMode,
    pub voting: bool,
    pub arq: bool,
    /// Spare-link pool, starvation escalation, reroute on marked channels.
    pub hard_ft: bool,
    /// Run the per-output fault managers (otherwise nacks only drive ARQ).
    pub online_diag: bool,
    pub ct_mode: CtMode,
    pub buffer_depth: usize,
    pub bypass_count: usize,
    pub outbox_cap: usize,
    /// Cycles a blocked service-list head tolerates before younger packets
    /// may be served around it.
    pub t_dl: u64,
    /// Consecutive blocked crossbar attempts before a header gives up on its
    /// output and escalates.
    pub starve_threshold: u32,
    pub soft_rate: f64,
}

impl Default for RouterConfig {
    fn default() -> RouterConfig {
        RouterConfig {
            dims: Dims::new(1, 1, 1),
            ecc: EccMode::Off,
            voting: false,
            arq: false,
            hard_ft: false,
            online_diag: false,
            ct_mode: CtMode::Speculative,
            buffer_depth: 4,
            bypass_count: 2,
            outbox_cap: 4,
            t_dl: 16,
            starve_threshold: 48,
            soft_rate: 0.0,
        }
    }
}

/// A packet waiting at the local injection queue, already encoded.
#[derive(Clone, Debug)]
pub struct SourcePacket {
    pub pid: Pid,
    pub dest: Coord3,
    pub release: u64,
    pub words: Vec<u64>,
    pub next_flit: usize,
}

#[derive(Clone, Copy, Debug)]
struct ServiceEntry {
    pid: Pid,
    granted: Option<usize>,
    /// Output this packet starved out on earlier. Re-planning detours around
    /// it while any other path exists.
    avoid: Option<u8>,
    /// Granted the local output for evacuation: eject every flit toward the
    /// source queue instead of delivering them.
    absorb: bool,
}

/// Which holding slot a traversal candidate was read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CtSrc {
    Parked,
    Ready,
    Verify,
}

/// A flit in the route/verify pipeline. The flit itself stays in its buffer
/// slot until crossbar traversal; the entry carries the decisions.
#[derive(Clone, Copy, Debug)]
struct StageEntry {
    pid: Pid,
    seq: u16,
    slot: usize,
    ftype: FlitType,
    /// Output this flit was admitted toward (the arbiter's true grant).
    out: usize,
    /// True lookahead port value for the next router.
    fwd_true: u8,
    rounds: u8,
    /// Bit r set: round r's next-port computation ran clean.
    npc_mask: u8,
    sa_mask: u8,
    /// Committed values; equal to the true ones whenever voting is on.
    res_fwd: u8,
    res_sa: u8,
    resolved: bool,
    ct_ready: u64,
    blocked: u32,
}

pub struct InputPort {
    pub exists: bool,
    pub buf: InputBuffer,
    service: VecDeque<ServiceEntry>,
    route_slot: Option<StageEntry>,
    verify_slot: Option<StageEntry>,
    ready_slot: Option<StageEntry>,
    /// A resolved flit that lost link-level flow control waits here so the
    /// execution stages stay free for other streams.
    parked_slot: Option<StageEntry>,
    front_stall: u64,
    /// Arrivals before this cycle are dropped without comment (resync after
    /// a nack).
    discard_until: u64,
    /// Admission stays closed before this cycle; set while a channel mark
    /// requested by this input is still in flight to the shared map.
    admit_hold: u64,
    last_escape: Option<Pid>,
}

pub struct OutputPort {
    pub exists: bool,
    pub lock: Option<Pid>,
    rr: usize,
    pub credits: i32,
    pub outbox: Outbox,
    pub diag: Diag,
}

/// Deterministic transient-upset injection for tests: the matching pipeline
/// execution round reads corrupted values regardless of the RNG.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForcedUpset {
    pub cycle: u64,
    pub input: usize,
    /// 1-based voting round (always 1 with voting off).
    pub round: u8,
    pub npc: bool,
    pub sa: bool,
}

/// Side effects for the network to apply after every router has computed.
#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Transmit { out: usize, flit: Flit },
    Nack { input: usize },
    CreditReturn { input: usize },
    CreditAdjust { input: usize, delta: i8 },
    MarkChannel { out: usize, reason: MarkReason },
    /// Tear the packet out of the whole network and log one drop.
    Abort { pid: Pid, reason: DropReason },
    HopInc { pid: Pid },
    DeliverFlit { pid: Pid, seq: u16, is_tail: bool },
    /// Flit ejected for re-injection, not delivery; the network stages the
    /// words and re-queues the packet at this node once the tail lands.
    AbsorbFlit { pid: Pid, seq: u16, word: u64, is_tail: bool },
    PacketInjected { pid: Pid },
}

/// Read-only per-cycle inputs, assembled by the network.
pub struct ComputeIn<'a> {
    pub now: u64,
    pub faults: &'a FaultMap,
    pub congestion: &'a dyn CongestionView,
    /// Arrived flit per direction input (index 0..6, Local unused).
    pub wire: [Option<Flit>; PORT_COUNT],
    /// Backward retransmission request per direction output.
    pub nack: [bool; PORT_COUNT],
    /// Returned credits per direction output.
    pub credit: [u8; PORT_COUNT],
    /// Signed capacity corrections per direction output.
    pub credit_adjust: [i8; PORT_COUNT],
}

pub struct ComputeOut {
    pub actions: Vec<Action>,
    pub events: Vec<Event>,
}

pub struct Router {
    pub idx: usize,
    pub node: Coord3,
    pub cfg: RouterConfig,
    pub inputs: Vec<InputPort>,
    pub outputs: Vec<OutputPort>,
    pub xbar: Crossbar,
    /// Stuck bits of planted (not necessarily known) buffer slot faults.
    pub slot_stuck: Vec<Vec<Option<Stuck2>>>,
    /// Stuck bits of planted crossbar link faults, [input][output].
    pub link_stuck: Vec<Vec<Option<Stuck2>>>,
    pub source: VecDeque<SourcePacket>,
    pub forced_upsets: Vec<ForcedUpset>,
    /// Local ejection refuses service before this cycle (test hook).
    pub sink_stall_until: u64,
    rng: ChaCha12Rng,
}

struct Candidate {
    pid: Pid,
    slot: usize,
    seq: u16,
    ftype: FlitType,
    target: usize,
    fwd: u8,
    /// Needs to win the per-output arbitration this cycle.
    needs_arb: bool,
    /// The committed port field disagreed with the lookahead decision.
    rerouted: bool,
    /// Claims the local output for evacuation rather than delivery.
    absorb: bool,
    /// Stale grant to release when this candidate takes a new output.
    ungrant: Option<usize>,
}

impl Router {
    pub fn new(idx: usize, node: Coord3, cfg: RouterConfig, rng: ChaCha12Rng) -> Router {
        let dims = cfg.dims;
        let inputs = (0..PORT_COUNT)
            .map(|p| {
                let port = Port::from_index(p as u8).unwrap();
                let exists = port == Port::Local || port.step(node, &dims).is_some();
                InputPort {
                    exists,
                    buf: InputBuffer::new(cfg.buffer_depth),
                    service: VecDeque::new(),
                    route_slot: None,
                    verify_slot: None,
                    ready_slot: None,
                    parked_slot: None,
                    front_stall: 0,
                    discard_until: 0,
                    admit_hold: 0,
                    last_escape: None,
                }
            })
            .collect();
        let outputs = (0..PORT_COUNT)
            .map(|p| {
                let port = Port::from_index(p as u8).unwrap();
                let exists = port == Port::Local || port.step(node, &dims).is_some();
                OutputPort {
                    exists,
                    lock: None,
                    rr: 0,
                    credits: 0,
                    outbox: Outbox::new(cfg.outbox_cap, cfg.arq),
                    diag: Diag::new(p),
                }
            })
            .collect();
        let spares = if cfg.hard_ft { cfg.bypass_count } else { 0 };
        Router {
            idx,
            node,
            cfg,
            inputs,
            outputs,
            xbar: Crossbar::new(spares),
            slot_stuck: vec![vec![None; 8]; PORT_COUNT],
            link_stuck: vec![vec![None; PORT_COUNT]; PORT_COUNT],
            source: VecDeque::new(),
            forced_upsets: Vec::new(),
            sink_stall_until: 0,
            rng,
        }
    }

    /// Flits of `pid` currently anywhere in this router (buffers, outboxes,
    /// pending injection), as (seq, credit-owing location) pairs. Used by the
    /// network's abort sweep.
    pub fn purge_packet(&mut self, pid: Pid) -> PurgeReport {
        let mut report = PurgeReport::default();
        for i in 0..PORT_COUNT {
            let inp = &mut self.inputs[i];
            for (slot, flit) in inp.buf.remove_packet(pid) {
                let healthy = !inp.buf.is_faulty(slot);
                report.buffered.push((i, flit.seq, healthy));
            }
            for slot in [
                &mut inp.route_slot,
                &mut inp.verify_slot,
                &mut inp.ready_slot,
                &mut inp.parked_slot,
            ] {
                if slot.map_or(false, |e| e.pid == pid) {
                    *slot = None;
                }
            }
            if let Some(pos) = inp.service.iter().position(|e| e.pid == pid) {
                inp.service.remove(pos);
            }
            if inp.last_escape == Some(pid) {
                inp.last_escape = None;
            }
        }
        for o in 0..PORT_COUNT {
            let out = &mut self.outputs[o];
            if out.lock == Some(pid) {
                out.lock = None;
            }
            for e in out.outbox.remove_packet(pid) {
                report.outboxed.push((o, e.flit.seq));
            }
            out.diag.on_abort(pid);
        }
        if let Some(pos) = self.source.iter().position(|p| p.pid == pid) {
            let pkt = self.source.remove(pos).unwrap();
            report.uninjected = (pkt.words.len() - pkt.next_flit) as u16;
        }
        report
    }

    pub fn compute(&mut self, inp: &ComputeIn) -> ComputeOut {
        let mut out = ComputeOut { actions: Vec::new(), events: Vec::new() };
        self.apply_credits(inp);
        self.xbar.begin_cycle();
        self.ack_and_nack(inp, &mut out);
        self.advance_stages(inp.now);
        self.verify_pass(inp, &mut out);
        self.ct_pass(inp, &mut out);
        self.admission_pass(inp, &mut out);
        self.injection_pass(inp, &mut out);
        self.ingest_pass(inp, &mut out);
        self.transmit_pass(inp, &mut out);
        out
    }

    fn event(&self, now: u64, kind: EventKind) -> Event {
        Event { cycle: now, node: self.node, kind }
    }

    // --- pass 0: flow control credits ------------------------------------

    fn apply_credits(&mut self, inp: &ComputeIn) {
        for o in 0..PORT_COUNT {
            self.outputs[o].credits += inp.credit[o] as i32 + inp.credit_adjust[o] as i32;
        }
    }

    // --- pass 2: retransmission bookkeeping and diagnosis ------------------

    fn ack_and_nack(&mut self, inp: &ComputeIn, out: &mut ComputeOut) {
        for o in 0..PORT_COUNT {
            // Nacks first: a nack and the implicit-ack timeout for the same
            // entry land on the same cycle, and the nack must win.
            if inp.nack[o] {
                if let Some(info) = self.outputs[o].outbox.process_nack() {
                    out.events.push(self.event(
                        inp.now,
                        EventKind::Arq { output: o as u8, pid: info.pid, seq: info.seq, retry: info.nacks },
                    ));
                    if self.cfg.online_diag {
                        let (outp, xbar) = (&mut self.outputs[o], &mut self.xbar);
                        let verdicts = outp.diag.on_nack(&info, xbar);
                        self.apply_verdicts(o, &verdicts, inp.now, out);
                    }
                    if info.nacks >= 2 {
                        out.actions.push(Action::Abort { pid: info.pid, reason: DropReason::ArqLimit });
                    }
                }
            }
            let acked = self.outputs[o].outbox.pop_acked(inp.now);
            if self.cfg.online_diag {
                for e in acked {
                    let (outp, xbar) = (&mut self.outputs[o], &mut self.xbar);
                    let verdicts = outp.diag.on_ack(e.flit.pid, e.flit.seq, xbar);
                    self.apply_verdicts(o, &verdicts, inp.now, out);
                }
            }
        }
    }

    fn apply_verdicts(&mut self, o: usize, verdicts: &[Verdict], now: u64, out: &mut ComputeOut) {
        for v in verdicts {
            match *v {
                Verdict::SlotFault { input, slot } => {
                    let buf = &mut self.inputs[input].buf;
                    if !buf.is_faulty(slot) {
                        let was_empty = buf.peek(slot).is_none();
                        buf.mark_faulty(slot);
                        out.events.push(self.event(
                            now,
                            EventKind::SlotMarked { input: input as u8, slot: slot as u8 },
                        ));
                        // An empty slot was part of the upstream credit pool;
                        // an occupied one pays when it drains (no return from
                        // a faulty slot).
                        if was_empty && input != Port::Local.index() {
                            out.actions.push(Action::CreditAdjust { input, delta: -1 });
                        }
                    }
                }
                Verdict::BypassBound { input } => out.events.push(self.event(
                    now,
                    EventKind::BypassBound { input: input as u8, output: o as u8 },
                )),
                Verdict::LinkFault { input } => out.events.push(self.event(
                    now,
                    EventKind::LinkMarked { input: input as u8, output: o as u8 },
                )),
                Verdict::BypassReleased { input } => out.events.push(self.event(
                    now,
                    EventKind::BypassReleased { input: input as u8, output: o as u8 },
                )),
                Verdict::ChannelFault => {
                    out.actions.push(Action::MarkChannel { out: o, reason: MarkReason::Diagnosed });
                    out.events.push(self.event(
                        now,
                        EventKind::ChannelMarked { output: o as u8, reason: MarkReason::Diagnosed },
                    ));
                }
            }
        }
    }

    // --- pass 3: move entries between pipeline slots -----------------------

    fn advance_stages(&mut self, now: u64) {
        for i in 0..PORT_COUNT {
            let inp = &mut self.inputs[i];
            if inp.ready_slot.is_none() {
                if inp.verify_slot.map_or(false, |e| e.resolved && e.ct_ready <= now) {
                    inp.ready_slot = inp.verify_slot.take();
                }
            }
            if inp.verify_slot.is_none() {
                inp.verify_slot = inp.route_slot.take();
            }
        }
    }

    // --- upset draws -------------------------------------------------------

    /// One draw per duplicated quantity per round. Voting only needs to know
    /// whether the round ran clean: distinct rounds never produce the same
    /// wrong value, so two rounds agree exactly when both were clean.
    fn draw_upsets(&mut self, now: u64, input: usize, round: u8, want_npc: bool) -> (bool, bool) {
        if let Some(pos) = self
            .forced_upsets
            .iter()
            .position(|f| f.cycle == now && f.input == input && f.round == round)
        {
            let f = self.forced_upsets.remove(pos);
            return (f.npc && want_npc, f.sa);
        }
        if self.cfg.soft_rate <= 0.0 {
            return (false, false);
        }
        let npc = want_npc && self.rng.gen::<f64>() < self.cfg.soft_rate;
        let sa = self.rng.gen::<f64>() < self.cfg.soft_rate;
        (npc, sa)
    }

    /// Without voting an upset commits a wrong value outright.
    fn corrupt_value(&mut self, truth: u8, range: u8) -> u8 {
        let off = 1 + self.rng.gen_range(0..(range - 1));
        (truth + off) % range
    }

    // --- pass 4: verify rounds ---------------------------------------------

    fn resolve(e: &mut StageEntry, now: u64, ct_mode: CtMode) {
        e.res_fwd = e.fwd_true;
        e.res_sa = e.out as u8;
        e.resolved = true;
        e.ct_ready = match ct_mode {
            CtMode::Speculative => now,
            CtMode::Conservative => now + 1,
        };
    }

    fn verify_pass(&mut self, inp: &ComputeIn, out: &mut ComputeOut) {
        if !self.cfg.voting {
            return;
        }
        for i in 0..PORT_COUNT {
            let Some(mut e) = self.inputs[i].verify_slot else { continue };
            if e.resolved {
                continue;
            }
            let want_npc = e.ftype.is_head();
            let round = e.rounds + 1;
            let (npc_up, sa_up) = self.draw_upsets(inp.now, i, round, want_npc);
            if !npc_up {
                e.npc_mask |= 1 << (round - 1);
            }
            if !sa_up {
                e.sa_mask |= 1 << (round - 1);
            }
            e.rounds = round;
            if round == 2 {
                if e.npc_mask == 0b11 && e.sa_mask == 0b11 {
                    Self::resolve(&mut e, inp.now, self.cfg.ct_mode);
                } else {
                    out.events.push(self.event(
                        inp.now,
                        EventKind::VoteMismatch { input: i as u8, pid: e.pid, seq: e.seq, round: 2 },
                    ));
                }
                self.inputs[i].verify_slot = Some(e);
            } else {
                // Third round: majority over three per quantity.
                let ok = |m: u8| (m as u32).count_ones() >= 2;
                if ok(e.npc_mask) && ok(e.sa_mask) {
                    Self::resolve(&mut e, inp.now, self.cfg.ct_mode);
                    self.inputs[i].verify_slot = Some(e);
                } else {
                    // No majority anywhere: flush the flit (and any younger
                    // flit of the same packet behind it) back to the buffer.
                    out.events.push(self.event(
                        inp.now,
                        EventKind::VoteRetry { input: i as u8, pid: e.pid, seq: e.seq },
                    ));
                    let port = &mut self.inputs[i];
                    port.verify_slot = None;
                    if port.route_slot.map_or(false, |r| r.pid == e.pid) {
                        port.route_slot = None;
                    }
                    // The flush takes the rest of the cycle; re-admission
                    // starts clean next cycle.
                    port.admit_hold = inp.now + 1;
                }
            }
        }
    }

    // --- pass 5: crossbar traversal ----------------------------------------

    /// Entries eligible to traverse this cycle, oldest first. A parked entry
    /// predates whatever sits in the stages, and ready predates verify.
    fn ct_sources(&self, i: usize, now: u64) -> Vec<(CtSrc, StageEntry)> {
        let inp = &self.inputs[i];
        let mut v = Vec::new();
        if let Some(e) = inp.parked_slot {
            if e.ct_ready <= now {
                v.push((CtSrc::Parked, e));
            }
        }
        if let Some(e) = inp.ready_slot {
            if e.ct_ready <= now {
                v.push((CtSrc::Ready, e));
            }
        }
        if let Some(e) = inp.verify_slot {
            if e.resolved && e.ct_ready <= now {
                v.push((CtSrc::Verify, e));
            }
        }
        v
    }

    fn clear_ct_slot(&mut self, i: usize, src: CtSrc) {
        let inp = &mut self.inputs[i];
        match src {
            CtSrc::Parked => inp.parked_slot = None,
            CtSrc::Ready => inp.ready_slot = None,
            CtSrc::Verify => inp.verify_slot = None,
        }
    }

    fn store_ct_entry(&mut self, i: usize, src: CtSrc, e: StageEntry) {
        let inp = &mut self.inputs[i];
        match src {
            CtSrc::Parked => inp.parked_slot = Some(e),
            CtSrc::Ready => inp.ready_slot = Some(e),
            CtSrc::Verify => inp.verify_slot = Some(e),
        }
    }

    fn ct_pass(&mut self, inp: &ComputeIn, out: &mut ComputeOut) {
        for i in 0..PORT_COUNT {
            let mut seen: Vec<Pid> = Vec::new();
            for (src, mut e) in self.ct_sources(i, inp.now) {
                // An older flit of the same packet is still pending; keep the
                // stream in order.
                if seen.contains(&e.pid) {
                    continue;
                }
                seen.push(e.pid);
                let o = e.res_sa as usize;

                // A corrupted switch decision (possible only without voting)
                // that names a dead port or crosses another packet's path
                // loses the flit and with it the packet.
                if o >= PORT_COUNT || !self.outputs[o].exists {
                    out.actions.push(Action::Abort { pid: e.pid, reason: DropReason::InvalidPort });
                    self.clear_ct_slot(i, src);
                    continue;
                }
                if self.outputs[o].lock != Some(e.pid) {
                    if e.ftype.is_head() && self.outputs[o].lock.is_none() {
                        // The header leaves through the wrong door; its stream
                        // follows it there.
                        if self.outputs[e.out].lock == Some(e.pid) {
                            self.outputs[e.out].lock = None;
                        }
                        self.outputs[o].lock = Some(e.pid);
                        if let Some(se) = self.inputs[i].service.iter_mut().find(|s| s.pid == e.pid)
                        {
                            se.granted = Some(o);
                        }
                        e.out = o;
                    } else {
                        out.actions
                            .push(Action::Abort { pid: e.pid, reason: DropReason::InvalidPort });
                        self.clear_ct_slot(i, src);
                        continue;
                    }
                }

                let path = self.xbar.route(i, o);
                let blocked = match path {
                    XbarPath::Blocked => Some(true),
                    _ if o != Port::Local.index()
                        && (!self.outputs[o].outbox.has_space()
                            || self.outputs[o].credits <= 0) =>
                    {
                        Some(false)
                    }
                    _ if o == Port::Local.index() && inp.now < self.sink_stall_until => {
                        Some(false)
                    }
                    _ => None,
                };
                if let Some(on_xbar) = blocked {
                    e.blocked += 1;
                    if e.ftype.is_head() && e.blocked >= self.cfg.starve_threshold {
                        self.escalate_starved_header(i, src, e, on_xbar, inp, out);
                    } else if src != CtSrc::Parked && self.inputs[i].parked_slot.is_none() {
                        // Step aside so the stages stay free for other
                        // streams behind this one.
                        self.clear_ct_slot(i, src);
                        self.inputs[i].parked_slot = Some(e);
                    } else {
                        self.store_ct_entry(i, src, e);
                    }
                    continue;
                }

                // Traverse.
                let flit = self.inputs[i].buf.take(e.slot);
                if i != Port::Local.index() && !self.inputs[i].buf.is_faulty(e.slot) {
                    out.actions.push(Action::CreditReturn { input: i });
                }
                let mut word = flit.word;
                if e.ftype.is_head() {
                    word = codec::rewrite_next_port_bits(word, e.res_fwd, self.cfg.ecc);
                }
                if o == Port::Local.index() {
                    let absorb = self.inputs[i]
                        .service
                        .iter()
                        .find(|s| s.pid == e.pid)
                        .map_or(false, |s| s.absorb);
                    if absorb {
                        out.actions.push(Action::AbsorbFlit {
                            pid: e.pid,
                            seq: e.seq,
                            word,
                            is_tail: e.ftype.is_tail(),
                        });
                    } else {
                        out.actions.push(Action::DeliverFlit {
                            pid: e.pid,
                            seq: e.seq,
                            is_tail: e.ftype.is_tail(),
                        });
                    }
                } else {
                    if path == XbarPath::Base {
                        if let Some(stuck) = self.link_stuck[i][o] {
                            word = stuck.apply(word);
                        }
                    }
                    self.outputs[o].credits -= 1;
                    self.outputs[o].outbox.push(OutboxEntry {
                        flit: Flit::new(word, e.pid, e.seq),
                        input: i,
                        slot: e.slot,
                        via_spare: path == XbarPath::Spare,
                        ct_cycle: inp.now,
                        state: SendState::Queued,
                        nacks: 0,
                    });
                    if self.cfg.online_diag {
                        self.outputs[o].diag.note_ct(i, e.pid, e.seq);
                    }
                }
                if e.ftype.is_tail() {
                    if self.outputs[o].lock == Some(e.pid) {
                        self.outputs[o].lock = None;
                    }
                    if let Some(pos) = self.inputs[i].service.iter().position(|s| s.pid == e.pid)
                    {
                        self.inputs[i].service.remove(pos);
                    }
                    if self.inputs[i].last_escape == Some(e.pid) {
                        self.inputs[i].last_escape = None;
                    }
                }
                self.clear_ct_slot(i, src);
                // One crossbar input port, one traversal per cycle.
                break;
            }
        }
    }

    /// A header has waited out the starvation threshold on its granted
    /// output. If another path exists it is pushed back to the buffer to
    /// re-plan around the starved output, which also breaks adaptive-routing
    /// deadlock cycles. With no detour available, a persistent crossbar
    /// block under the fault-tolerance feature set condemns the channel (the
    /// pair is unusable and nothing else leads out). Past a second, doubled
    /// threshold a header still wedged with no way out is converted to an
    /// evacuation through the sink, since by then it is almost certainly
    /// part of a credit cycle that no amount of waiting will drain.
    fn escalate_starved_header(
        &mut self,
        i: usize,
        src: CtSrc,
        e: StageEntry,
        on_xbar: bool,
        inp: &ComputeIn,
        out: &mut ComputeOut,
    ) {
        let o = e.out;
        let pid = e.pid;
        let dest = self
            .inputs[i]
            .buf
            .peek(e.slot)
            .map(|f| f.fields(self.cfg.ecc).dest);
        let arrival = Port::from_index(i as u8).filter(|p| *p != Port::Local);
        let has_alternative = o != Port::Local.index()
            && dest.map_or(false, |d| {
                let mut m = inp.faults.clone();
                m.mark_channel(self.node, Port::from_index(o as u8).unwrap());
                matches!(
                    route(self.node, arrival, d, &m, inp.congestion),
                    RouteDecision::Forward(_)
                )
            });
        let ungrant = |r: &mut Router| {
            if r.outputs[o].lock == Some(pid) {
                r.outputs[o].lock = None;
            }
            if let Some(se) = r.inputs[i].service.iter_mut().find(|s| s.pid == pid) {
                se.granted = None;
                se.avoid = Some(o as u8);
            }
        };
        if has_alternative {
            ungrant(self);
            self.flush_pid_stages(i, pid);
            return;
        }
        if on_xbar && self.cfg.hard_ft && o != Port::Local.index() {
            out.actions.push(Action::MarkChannel { out: o, reason: MarkReason::Starvation });
            out.events.push(self.event(
                inp.now,
                EventKind::ChannelMarked { output: o as u8, reason: MarkReason::Starvation },
            ));
            ungrant(self);
            self.flush_pid_stages(i, pid);
            // The mark lands at commit; keep admission closed for the rest
            // of this cycle so the header cannot re-grant the dying output.
            self.inputs[i].admit_hold = inp.now + 1;
            return;
        }
        if e.blocked >= 2 * self.cfg.starve_threshold
            && o != Port::Local.index()
            && i != Port::Local.index()
            && self.grantable(Port::Local.index(), pid)
        {
            if self.outputs[o].lock == Some(pid) {
                self.outputs[o].lock = None;
            }
            self.outputs[Port::Local.index()].lock = Some(pid);
            if let Some(se) = self.inputs[i].service.iter_mut().find(|s| s.pid == pid) {
                se.granted = Some(Port::Local.index());
                se.absorb = true;
            }
            self.flush_pid_stages(i, pid);
            return;
        }
        // The count keeps running so the evacuation threshold can fire.
        self.store_ct_entry(i, src, e);
    }

    // --- pass 6: admission -------------------------------------------------

    /// Decide target output and lookahead value for a header read from the
    /// buffer. `granted` pins the output (post-flush re-admission); `avoid`
    /// steers around a starved output, but never at the price of dropping
    /// the packet.
    fn plan_header(
        &self,
        i: usize,
        word: u64,
        granted: Option<usize>,
        avoid: Option<u8>,
        inp: &ComputeIn,
    ) -> Option<(usize, u8, bool)> {
        let avoided = avoid.filter(|&a| (a as usize) < Port::Local.index()).map(|a| {
            let mut m = inp.faults.clone();
            m.mark_channel(self.node, Port::from_index(a).unwrap());
            m
        });
        if let Some(m) = &avoided {
            if let Some(plan) = self.plan_header_with(i, word, granted, m, inp.congestion) {
                return Some(plan);
            }
        }
        self.plan_header_with(i, word, granted, inp.faults, inp.congestion)
    }

    fn plan_header_with(
        &self,
        i: usize,
        word: u64,
        granted: Option<usize>,
        faults: &FaultMap,
        congestion: &dyn CongestionView,
    ) -> Option<(usize, u8, bool)> {
        let fields = codec::decode_flit(word, self.cfg.ecc).0;
        let dims = self.cfg.dims;
        if fields.dest == self.node {
            return Some((Port::Local.index(), Port::Local.index() as u8, false));
        }
        if !dims.contains(fields.dest) {
            // A corrupted destination beyond the mesh cannot be routed.
            return None;
        }
        if granted == Some(Port::Local.index()) {
            // An evacuation grant pins the sink; there is no next hop to
            // compute a lookahead for.
            return Some((Port::Local.index(), Port::Local.index() as u8, false));
        }
        let arrival = Port::from_index(i as u8).filter(|p| *p != Port::Local);
        let committed = granted.or_else(|| {
            Port::from_index(fields.next_port)
                .filter(|p| *p != Port::Local && p.step(self.node, &dims).is_some())
                .map(|p| p.index())
        });
        let committed_ok = committed.map_or(false, |t| {
            let port = Port::from_index(t as u8).unwrap();
            !faults.is_faulty(self.node, port)
        });
        let (target, rerouted) = if committed_ok {
            (committed.unwrap(), false)
        } else {
            match route(self.node, arrival, fields.dest, faults, congestion) {
                RouteDecision::Forward(p) => (p.index(), true),
                _ => return None,
            }
        };
        let tp = Port::from_index(target as u8).unwrap();
        let next = tp.step(self.node, &dims).unwrap();
        let fwd = match route(next, Some(tp.opposite()), fields.dest, faults, congestion) {
            RouteDecision::Deliver => Port::Local.index() as u8,
            RouteDecision::Forward(p) => p.index() as u8,
            RouteDecision::Unroutable => {
                // The committed next hop is a dead end; try a fresh local
                // decision once before giving up on the packet.
                match route(self.node, arrival, fields.dest, faults, congestion) {
                    RouteDecision::Forward(p) if p.index() != target => {
                        let next2 = p.step(self.node, &dims).unwrap();
                        match route(next2, Some(p.opposite()), fields.dest, faults, congestion) {
                            RouteDecision::Deliver => {
                                return Some((p.index(), Port::Local.index() as u8, true))
                            }
                            RouteDecision::Forward(q) => return Some((p.index(), q.index() as u8, true)),
                            RouteDecision::Unroutable => return None,
                        }
                    }
                    _ => return None,
                }
            }
        };
        Some((target, fwd, rerouted || committed != Some(target)))
    }

    /// Starvation detour for a head-of-line header: the first productive
    /// output that is usable, unlocked and has room. Waiting out a busy
    /// output is normally right, but a header that has starved past the
    /// threshold may sit on a cycle of channel locks, and moving it can
    /// break that cycle. Minimal alternatives only: a non-minimal move could
    /// cross the worm's own still-occupied path, and per-packet service
    /// state cannot represent one packet holding a router twice.
    fn plan_detour(
        &self,
        i: usize,
        pid: Pid,
        word: u64,
        skip: usize,
        inp: &ComputeIn,
    ) -> Option<(usize, u8)> {
        let fields = codec::decode_flit(word, self.cfg.ecc).0;
        let dims = self.cfg.dims;
        if fields.dest == self.node || !dims.contains(fields.dest) {
            return None;
        }
        let arrival = Port::from_index(i as u8).filter(|p| *p != Port::Local);
        for p in possible_directions(self.node, fields.dest, &dims) {
            let t = p.index();
            if t == skip || Some(p) == arrival || !inp.faults.is_usable(self.node, p) {
                continue;
            }
            if !self.grantable(t, pid)
                || !self.outputs[t].outbox.has_space()
                || self.outputs[t].credits <= 0
            {
                continue;
            }
            let next = p.step(self.node, &dims).unwrap();
            let fwd = match route(next, Some(p.opposite()), fields.dest, inp.faults, inp.congestion)
            {
                RouteDecision::Deliver => Port::Local.index() as u8,
                RouteDecision::Forward(q) => q.index() as u8,
                RouteDecision::Unroutable => continue,
            };
            return Some((t, fwd));
        }
        None
    }

    /// Buffer slots whose flit is already claimed by a pipeline entry. Such
    /// flits stay buffered until traversal and must not be admitted twice.
    fn staged_slots(&self, i: usize) -> [Option<usize>; 4] {
        let p = &self.inputs[i];
        [
            p.route_slot.map(|e| e.slot),
            p.verify_slot.map(|e| e.slot),
            p.ready_slot.map(|e| e.slot),
            p.parked_slot.map(|e| e.slot),
        ]
    }

    /// Oldest buffered flit of `pid` not yet admitted into the pipeline.
    fn next_unstaged(&self, i: usize, pid: Pid) -> Option<(usize, &Flit)> {
        let staged = self.staged_slots(i);
        self.inputs[i]
            .buf
            .iter_fifo()
            .find(|(s, f)| f.pid == pid && !staged.contains(&Some(*s)))
    }

    fn staged_count(&self, i: usize, pid: Pid) -> usize {
        let p = &self.inputs[i];
        [p.route_slot, p.verify_slot, p.ready_slot, p.parked_slot]
            .iter()
            .filter(|e| e.map_or(false, |e| e.pid == pid))
            .count()
    }

    /// Drop every staged entry of `pid` at input `i`. The flits stay in
    /// their buffer slots and re-enter the pipeline through admission. Used
    /// when a header changes output: entries staged toward the old grant
    /// would otherwise traverse into a lock they no longer hold.
    fn flush_pid_stages(&mut self, i: usize, pid: Pid) {
        let p = &mut self.inputs[i];
        for s in [&mut p.route_slot, &mut p.verify_slot, &mut p.ready_slot, &mut p.parked_slot] {
            if s.map_or(false, |e| e.pid == pid) {
                *s = None;
            }
        }
    }

    fn find_candidate(&self, i: usize, inp: &ComputeIn, out: &mut ComputeOut) -> Option<Candidate> {
        let port = &self.inputs[i];
        port.service.front()?;
        let escape = port.front_stall >= self.cfg.t_dl;
        let scan: Vec<ServiceEntry> = if escape {
            port.service.iter().copied().collect()
        } else {
            vec![*port.service.front().unwrap()]
        };
        for entry in scan {
            let Some((slot, flit)) = self.next_unstaged(i, entry.pid) else { continue };
            // Two flits of a packet may overlap in the pipeline (enough to
            // stream at full rate); a third admission would only pile onto a
            // blocked output.
            if self.staged_count(i, entry.pid) >= 2 {
                if escape {
                    continue;
                }
                break;
            }
            let ftype = FlitType::from_bits((flit.word >> 42) as u8 & 3);
            if let Some(o) = entry.granted {
                if ftype.is_head() {
                    // A flushed or escalated header: recompute if its channel
                    // died, otherwise re-admit straight to the held grant.
                    let op = Port::from_index(o as u8).unwrap();
                    if op != Port::Local && inp.faults.is_faulty(self.node, op) {
                        let plan = self.plan_header(i, flit.word, None, None, inp);
                        match plan {
                            Some((target, fwd, _)) if self.grantable(target, entry.pid) => {
                                return Some(Candidate {
                                    pid: entry.pid,
                                    slot,
                                    seq: flit.seq,
                                    ftype,
                                    target,
                                    fwd,
                                    needs_arb: true,
                                    rerouted: true,
                                    absorb: false,
                                    ungrant: Some(o),
                                });
                            }
                            Some(_) => continue,
                            None => {
                                out.actions.push(Action::Abort {
                                    pid: entry.pid,
                                    reason: DropReason::Unroutable,
                                });
                                continue;
                            }
                        }
                    }
                    let fwd = match self.plan_header(i, flit.word, Some(o), None, inp) {
                        Some((_, fwd, _)) => fwd,
                        None => {
                            out.actions.push(Action::Abort {
                                pid: entry.pid,
                                reason: DropReason::Unroutable,
                            });
                            continue;
                        }
                    };
                    return Some(Candidate {
                        pid: entry.pid,
                        slot,
                        seq: flit.seq,
                        ftype,
                        target: o,
                        fwd,
                        needs_arb: false,
                        rerouted: false,
                        absorb: false,
                        ungrant: None,
                    });
                }
                // Body or tail: the stream's channel must still be alive.
                let op = Port::from_index(o as u8).unwrap();
                if op != Port::Local && inp.faults.is_faulty(self.node, op) {
                    out.actions.push(Action::Abort { pid: entry.pid, reason: DropReason::ChannelCut });
                    continue;
                }
                return Some(Candidate {
                    pid: entry.pid,
                    slot,
                    seq: flit.seq,
                    ftype,
                    target: o,
                    fwd: o as u8,
                    needs_arb: false,
                    rerouted: false,
                    absorb: false,
                    ungrant: None,
                });
            }
            // Ungranted entries always wait at their header.
            if !ftype.is_head() {
                out.actions.push(Action::Abort { pid: entry.pid, reason: DropReason::Orphan });
                continue;
            }
            match self.plan_header(i, flit.word, None, entry.avoid, inp) {
                Some((target, fwd, rerouted)) => {
                    if self.grantable(target, entry.pid) {
                        return Some(Candidate {
                            pid: entry.pid,
                            slot,
                            seq: flit.seq,
                            ftype,
                            target,
                            fwd,
                            needs_arb: true,
                            rerouted,
                            absorb: false,
                            ungrant: None,
                        });
                    }
                    if Some(entry.pid) == port.service.front().map(|s| s.pid)
                        && port.front_stall >= self.cfg.starve_threshold as u64
                    {
                        if let Some((t2, f2)) =
                            self.plan_detour(i, entry.pid, flit.word, target, inp)
                        {
                            return Some(Candidate {
                                pid: entry.pid,
                                slot,
                                seq: flit.seq,
                                ftype,
                                target: t2,
                                fwd: f2,
                                needs_arb: true,
                                rerouted: true,
                                absorb: false,
                                ungrant: None,
                            });
                        }
                        // No other output leads anywhere. Evacuating through
                        // the sink always progresses (ejection never waits on
                        // credits), frees every base slot and lock this worm
                        // holds, and the packet restarts from this node's
                        // source queue. Transit inputs only: evacuating a
                        // locally injected stream would just churn it through
                        // its own queue.
                        if port.front_stall >= 2 * self.cfg.starve_threshold as u64
                            && i != Port::Local.index()
                            && self.grantable(Port::Local.index(), entry.pid)
                        {
                            return Some(Candidate {
                                pid: entry.pid,
                                slot,
                                seq: flit.seq,
                                ftype,
                                target: Port::Local.index(),
                                fwd: Port::Local.index() as u8,
                                needs_arb: true,
                                rerouted: false,
                                absorb: true,
                                ungrant: None,
                            });
                        }
                    }
                    if !escape {
                        break;
                    }
                }
                None => {
                    out.actions.push(Action::Abort { pid: entry.pid, reason: DropReason::Unroutable });
                }
            }
        }
        None
    }

    fn grantable(&self, target: usize, pid: Pid) -> bool {
        let out = &self.outputs[target];
        out.exists && (out.lock.is_none() || out.lock == Some(pid))
    }

    fn admission_pass(&mut self, inp: &ComputeIn, out: &mut ComputeOut) {
        // Phase A: per-input candidates.
        let mut cands: Vec<Option<Candidate>> = Vec::with_capacity(PORT_COUNT);
        for i in 0..PORT_COUNT {
            if self.inputs[i].route_slot.is_some() || inp.now < self.inputs[i].admit_hold {
                cands.push(None);
                continue;
            }
            cands.push(self.find_candidate(i, inp, out));
        }
        // Phase B: one new header per output, round-robin over inputs.
        let mut admit = [false; PORT_COUNT];
        for o in 0..PORT_COUNT {
            let contenders: Vec<usize> = (0..PORT_COUNT)
                .filter(|&i| {
                    cands[i]
                        .as_ref()
                        .map_or(false, |c| c.needs_arb && c.target == o)
                })
                .collect();
            if contenders.is_empty() {
                continue;
            }
            let rr = self.outputs[o].rr;
            let winner = *contenders
                .iter()
                .find(|&&i| i >= rr)
                .unwrap_or(&contenders[0]);
            admit[winner] = true;
            self.outputs[o].rr = (winner + 1) % PORT_COUNT;
        }
        for i in 0..PORT_COUNT {
            if let Some(c) = &cands[i] {
                if !c.needs_arb {
                    admit[i] = true;
                }
            }
        }
        // Phase C: execute admissions in input order; stall bookkeeping. The
        // front counts as waiting while it has any flit here, buffered or
        // stuck in the pipeline; only admitting the front resets the clock.
        for i in 0..PORT_COUNT {
            let front_pid = self.inputs[i].service.front().map(|e| e.pid);
            let front_waiting = front_pid.map_or(false, |p| {
                self.next_unstaged(i, p).is_some() || self.staged_count(i, p) > 0
            });
            if !admit[i] {
                if front_waiting {
                    self.inputs[i].front_stall += 1;
                }
                continue;
            }
            let c = cands[i].take().unwrap();
            if Some(c.pid) == front_pid {
                self.inputs[i].front_stall = 0;
                self.inputs[i].last_escape = None;
            } else {
                if front_waiting {
                    self.inputs[i].front_stall += 1;
                }
                if self.inputs[i].last_escape != Some(c.pid) {
                    out.events.push(self.event(
                        inp.now,
                        EventKind::RabEscape {
                            input: i as u8,
                            front_pid: front_pid.unwrap_or(c.pid),
                            pid: c.pid,
                        },
                    ));
                    self.inputs[i].last_escape = Some(c.pid);
                }
            }
            if c.needs_arb {
                if let Some(old) = c.ungrant {
                    if self.outputs[old].lock == Some(c.pid) {
                        self.outputs[old].lock = None;
                    }
                }
                // A fresh grant invalidates anything staged toward an older
                // one.
                self.flush_pid_stages(i, c.pid);
                self.outputs[c.target].lock = Some(c.pid);
                if let Some(se) = self.inputs[i].service.iter_mut().find(|s| s.pid == c.pid) {
                    se.granted = Some(c.target);
                    se.absorb = c.absorb;
                }
                if c.rerouted {
                    out.events.push(self.event(
                        inp.now,
                        EventKind::Reroute { input: i as u8, pid: c.pid, new_output: c.target as u8 },
                    ));
                }
            }
            self.exec_round_one(i, &c, inp, out);
        }
    }

    fn exec_round_one(&mut self, i: usize, c: &Candidate, inp: &ComputeIn, _out: &mut ComputeOut) {
        let want_npc = c.ftype.is_head();
        let (npc_up, sa_up) = self.draw_upsets(inp.now, i, 1, want_npc);
        let mut e = StageEntry {
            pid: c.pid,
            seq: c.seq,
            slot: c.slot,
            ftype: c.ftype,
            out: c.target,
            fwd_true: c.fwd,
            rounds: 1,
            npc_mask: if npc_up { 0 } else { 1 },
            sa_mask: if sa_up { 0 } else { 1 },
            res_fwd: c.fwd,
            res_sa: c.target as u8,
            resolved: false,
            ct_ready: 0,
            blocked: 0,
        };
        if !self.cfg.voting {
            if npc_up {
                e.res_fwd = self.corrupt_value(c.fwd, 8);
            }
            if sa_up && c.ftype.is_head() {
                e.res_sa = self.corrupt_value(c.target as u8, PORT_COUNT as u8);
            }
            e.resolved = true;
            e.ct_ready = inp.now + 1;
        }
        self.inputs[i].route_slot = Some(e);
    }

    // --- pass 7: injection -------------------------------------------------

    fn injection_pass(&mut self, inp: &ComputeIn, out: &mut ComputeOut) {
        let Some(pkt) = self.source.front_mut() else { return };
        if pkt.release > inp.now {
            return;
        }
        let ecc = self.cfg.ecc;
        if self.inputs[Port::Local.index()].buf.free_healthy() == 0 {
            return;
        }
        if pkt.next_flit == 0 {
            let first = match route(self.node, None, pkt.dest, inp.faults, inp.congestion) {
                RouteDecision::Forward(p) => p,
                _ => {
                    out.actions.push(Action::Abort { pid: pkt.pid, reason: DropReason::Unroutable });
                    return;
                }
            };
            let word = codec::rewrite_next_port(pkt.words[0], first, ecc);
            let pid = pkt.pid;
            pkt.next_flit = 1;
            let done = pkt.next_flit == pkt.words.len();
            self.store_flit(Port::Local.index(), Flit::new(word, pid, 0));
            self.inputs[Port::Local.index()]
                .service
                .push_back(ServiceEntry { pid, granted: None, avoid: None, absorb: false });
            out.actions.push(Action::PacketInjected { pid });
            if done {
                self.source.pop_front();
            }
        } else {
            let seq = pkt.next_flit as u16;
            let flit = Flit::new(pkt.words[pkt.next_flit], pkt.pid, seq);
            pkt.next_flit += 1;
            let done = pkt.next_flit == pkt.words.len();
            self.store_flit(Port::Local.index(), flit);
            if done {
                self.source.pop_front();
            }
        }
    }

    /// Write into a buffer, then let any planted slot fault chew on the bits.
    fn store_flit(&mut self, input: usize, flit: Flit) -> usize {
        let word = flit.word;
        let slot = self.inputs[input]
            .buf
            .write(flit)
            .expect("store with free slot checked");
        if let Some(stuck) = self.slot_stuck[input].get(slot).copied().flatten() {
            self.inputs[input].buf.overwrite_word(slot, stuck.apply(word));
        }
        slot
    }

    // --- pass 8: wire arrivals ---------------------------------------------

    fn ingest_pass(&mut self, inp: &ComputeIn, out: &mut ComputeOut) {
        for i in 0..PORT_COUNT {
            let Some(flit) = inp.wire[i].clone() else { continue };
            if inp.now < self.inputs[i].discard_until {
                continue;
            }
            let (word, outcome) = codec::correct_flit(flit.word, self.cfg.ecc);
            if outcome == DecodeOutcome::Uncorrectable {
                if self.cfg.arq {
                    out.actions.push(Action::Nack { input: i });
                    self.inputs[i].discard_until = inp.now + 2;
                } else {
                    out.actions.push(Action::Abort { pid: flit.pid, reason: DropReason::Corrupt });
                }
                continue;
            }
            let ftype = FlitType::from_bits((word >> 42) as u8 & 3);
            let known = self.inputs[i].service.iter().any(|e| e.pid == flit.pid);
            if ftype.is_head() {
                if known {
                    // A stream restart for a packet still in service would
                    // corrupt bookkeeping; treat it as packet damage.
                    out.actions.push(Action::Abort { pid: flit.pid, reason: DropReason::Orphan });
                    continue;
                }
            } else if !known {
                // No reservation here: the header died. The flit's slot was
                // prepaid by the sender, so hand the credit straight back.
                out.actions.push(Action::CreditReturn { input: i });
                out.events.push(self.event(
                    inp.now,
                    EventKind::Drop { pid: flit.pid, reason: DropReason::Orphan, flits: 1 },
                ));
                continue;
            }
            if self.inputs[i].buf.free_healthy() == 0 {
                // Possible only in the narrow window after a slot was marked
                // under an in-flight flit; retransmission absorbs it.
                if self.cfg.arq {
                    out.actions.push(Action::Nack { input: i });
                    self.inputs[i].discard_until = inp.now + 2;
                } else {
                    out.actions.push(Action::Abort { pid: flit.pid, reason: DropReason::Corrupt });
                }
                continue;
            }
            let seq = flit.seq;
            let pid = flit.pid;
            self.store_flit(i, Flit::new(word, pid, seq));
            if ftype.is_head() {
                self.inputs[i]
                    .service
                    .push_back(ServiceEntry { pid, granted: None, avoid: None, absorb: false });
                out.actions.push(Action::HopInc { pid });
            }
        }
    }

    // --- pass 9: transmissions ---------------------------------------------

    fn transmit_pass(&mut self, inp: &ComputeIn, out: &mut ComputeOut) {
        for o in 0..PORT_COUNT {
            if o == Port::Local.index() || !self.outputs[o].exists {
                continue;
            }
            if let Some(flit) = self.outputs[o].outbox.pick_transmit(inp.now) {
                out.actions.push(Action::Transmit { out: o, flit });
            }
        }
    }

    /// Compact per-input state lines for debugging stalls. Empty inputs are
    /// skipped; outputs appear when locked or out of credits.
    pub fn debug_stalls(&self) -> Vec<String> {
        let mut lines = Vec::new();
        let stage = |s: &Option<StageEntry>, tag: &str| match s {
            Some(e) => format!(
                " {}=p{}#{}>{}{}{}",
                tag,
                e.pid,
                e.seq,
                e.out,
                if e.resolved { "" } else { "?" },
                if e.blocked > 0 { format!("(b{})", e.blocked) } else { String::new() }
            ),
            None => String::new(),
        };
        for (i, p) in self.inputs.iter().enumerate() {
            if !p.exists || (p.buf.occupied() == 0 && p.service.is_empty()) {
                continue;
            }
            let buf: Vec<String> =
                p.buf.iter_fifo().map(|(_, f)| format!("p{}#{}", f.pid, f.seq)).collect();
            let svc: Vec<String> = p
                .service
                .iter()
                .map(|s| {
                    format!(
                        "p{}{}{}",
                        s.pid,
                        s.granted.map_or(String::new(), |g| format!(">{g}")),
                        s.avoid.map_or(String::new(), |a| format!("!{a}"))
                    )
                })
                .collect();
            lines.push(format!(
                "in{i} buf[{}] svc[{}]{}{}{}{} stall={}",
                buf.join(","),
                svc.join(","),
                stage(&p.route_slot, "R"),
                stage(&p.verify_slot, "V"),
                stage(&p.ready_slot, "D"),
                stage(&p.parked_slot, "P"),
                p.front_stall
            ));
        }
        for (o, q) in self.outputs.iter().enumerate() {
            if q.exists && (q.lock.is_some() || q.credits <= 0) {
                lines.push(format!("out{o} credits={} lock={:?}", q.credits, q.lock));
            }
        }
        lines
    }
}

/// What an abort sweep found in one router.
#[derive(Default)]
pub struct PurgeReport {
    /// (input, seq, slot-was-healthy) for flits freed from buffer slots.
    pub buffered: Vec<(usize, u16, bool)>,
    /// (output, seq) for flits dropped from outboxes.
    pub outboxed: Vec<(usize, u16)>,
    /// Flits of the packet that were never injected.
    pub uninjected: u16,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_timing_follows_ct_mode() {
        let mut e = StageEntry {
            pid: 1,
            seq: 0,
            slot: 0,
            ftype: FlitType::Single,
            out: 0,
            fwd_true: 2,
            rounds: 2,
            npc_mask: 3,
            sa_mask: 3,
            res_fwd: 0,
            res_sa: 0,
            resolved: false,
            ct_ready: 0,
            blocked: 0,
        };
        Router::resolve(&mut e, 10, CtMode::Speculative);
        assert!(e.resolved);
        assert_eq!(e.ct_ready, 10);
        assert_eq!(e.res_fwd, 2);
        Router::resolve(&mut e, 10, CtMode::Conservative);
        assert_eq!(e.ct_ready, 11);
    }

    #[test]
    fn forced_upset_overrides_rng_and_is_consumed() {
        let cfg = RouterConfig { soft_rate: 0.0, ..RouterConfig::default() };
        let mut r = Router::new(
            0,
            Coord3::new(0, 0, 0),
            cfg,
            crate::rng::stream(1, crate::rng::tag::STAGE),
        );
        r.forced_upsets.push(ForcedUpset { cycle: 5, input: 2, round: 2, npc: false, sa: true });
        assert_eq!(r.draw_upsets(5, 2, 2, true), (false, true));
        assert_eq!(r.draw_upsets(5, 2, 2, true), (false, false), "consumed");
        assert_eq!(r.draw_upsets(4, 2, 2, true), (false, false));
    }

    #[test]
    fn corrupt_value_never_returns_truth() {
        let cfg = RouterConfig::default();
        let mut r = Router::new(
            0,
            Coord3::new(0, 0, 0),
            cfg,
            crate::rng::stream(2, crate::rng::tag::STAGE),
        );
        for truth in 0..7u8 {
            for _ in 0..50 {
                let v = r.corrupt_value(truth, 7);
                assert_ne!(v, truth);
                assert!(v < 7);
            }
        }
    }
}
