//! The mesh: routers wired by channels, stepped in two phases.
//!
//! Every cycle, each router first computes its actions against a frozen view
//! of the shared state (fault map, congestion snapshot, channel latches);
//! only the commit phase then applies all actions in router-index order.
//! Router evaluation order therefore cannot affect the outcome, which a test
//! exercises by shuffling it.
//!
//! The commit also owns the packet ledger: injections, per-flit deliveries,
//! hop counts, retransmissions, and the abort sweep that tears a doomed
//! packet out of buffers, outboxes, wires and source queues in one cycle
//! while handing every prepaid credit back to its owner.

use crate::coord::{Coord3, Dims, Port, PORT_COUNT};
use crate::event::{DropReason, Event, EventKind, MarkReason};
use crate::fault::{channel_lookup, enumerate_channels, ChannelDef, FaultPlan, Stuck2};
use crate::flit::{Flit, Pid};
use crate::rng::{self, tag};
use crate::routing::{CongestionView, FaultMap};
use crate::router::{Action, ComputeIn, ComputeOut, Router, RouterConfig, SourcePacket};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

pub struct Channel {
    pub def: ChannelDef,
    pub stuck: Option<Stuck2>,
    /// In-flight flit per directed half (0 = a-to-b).
    pub wire: [Option<Flit>; 2],
    /// Retransmission request addressed to the transmitter of each half.
    pub nack: [bool; 2],
    /// Freed-slot pulses flowing back to the transmitter of each half.
    pub credit: [u8; 2],
    /// Signed capacity corrections for the transmitter of each half.
    pub adjust: [i8; 2],
    rng: [ChaCha12Rng; 2],
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Outcome {
    Pending,
    Delivered,
    /// Tail ejected somewhere other than the intended destination, or with
    /// flits missing.
    Misdelivered,
    Dropped { reason: DropReason },
}

#[derive(Clone, Debug, Serialize)]
pub struct PacketRecord {
    pub pid: Pid,
    pub src: Coord3,
    pub dest: Coord3,
    pub len: u16,
    pub inject: Option<u64>,
    pub eject: Option<u64>,
    pub hops: u16,
    pub retrans: u32,
    pub mismatches: u32,
    pub delivered_flits: u16,
    pub outcome: Outcome,
}

impl PacketRecord {
    pub fn latency(&self) -> Option<u64> {
        match (self.inject, self.eject, self.outcome) {
            (Some(i), Some(e), Outcome::Delivered) => Some(e - i),
            _ => None,
        }
    }
}

/// One-shot deterministic wire corruption for tests: flip the given bits of
/// whatever crosses the channel half on that cycle.
#[derive(Clone, Copy, Debug)]
pub struct ForcedWireFlip {
    pub cycle: u64,
    pub chan: usize,
    pub half: usize,
    pub bits: [u8; 2],
}

struct OccView<'a> {
    dims: Dims,
    occ: &'a [[u8; PORT_COUNT]],
}

impl CongestionView for OccView<'_> {
    fn occupancy(&self, node: Coord3, dir: Port) -> u8 {
        match dir.step(node, &self.dims) {
            Some(n) => self.occ[self.dims.index(n)][dir.opposite().index()],
            None => u8::MAX,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NetConfig {
    pub router: RouterConfig,
    /// Mark every planted fault before cycle 0, as if diagnosed offline.
    pub apriori_marks: bool,
    /// Verify flit conservation every cycle (slow; tests only).
    pub census: bool,
    pub max_cycles: u64,
    /// Stop after this many cycles without an injection, transmission,
    /// delivery or drop.
    pub patience: u64,
}

impl Default for NetConfig {
    fn default() -> NetConfig {
        NetConfig {
            router: RouterConfig::default(),
            apriori_marks: false,
            census: false,
            max_cycles: 1_000_000,
            patience: 10_000,
        }
    }
}

pub struct RunResult {
    pub records: Vec<PacketRecord>,
    pub events: Vec<Event>,
    pub cycles: u64,
    pub delivered_flits: u64,
    pub dropped_flits: u64,
}

pub struct Network {
    pub dims: Dims,
    pub cfg: NetConfig,
    pub routers: Vec<Router>,
    pub channels: Vec<Channel>,
    /// Per node and direction: (channel, transmit half).
    pub lookup: Vec<[Option<(usize, usize)>; 6]>,
    pub faults: FaultMap,
    pub records: Vec<PacketRecord>,
    pub events: Vec<Event>,
    pub cycle: u64,
    /// Router evaluation order override for the shuffle-invariance test.
    pub eval_order: Option<Vec<usize>>,
    pub forced_wire_flips: Vec<ForcedWireFlip>,
    occupancy: Vec<[u8; PORT_COUNT]>,
    /// Words of packets mid-evacuation, in flit order; the packet goes back
    /// to a source queue when its tail arrives.
    absorbing: BTreeMap<Pid, Vec<u64>>,
    completed: usize,
    last_progress: u64,
    delivered_flits: u64,
    dropped_flits: u64,
    total_flits: u64,
}

impl Network {
    pub fn build(plan: &FaultPlan, cfg: NetConfig, seed: u64) -> Network {
        let dims = plan.dims;
        let chans = enumerate_channels(&dims);
        let lookup = channel_lookup(&dims, &chans);
        let mut events = Vec::new();
        let mut rcfg = cfg.router.clone();
        rcfg.dims = dims;
        rcfg.buffer_depth = plan.depth;

        let mut routers: Vec<Router> = (0..dims.nodes())
            .map(|idx| {
                let mut r = Router::new(
                    idx,
                    dims.coord(idx),
                    rcfg.clone(),
                    rng::stream(seed, tag::STAGE + idx as u64),
                );
                for p in 0..PORT_COUNT {
                    r.slot_stuck[p] = (0..plan.depth)
                        .map(|s| plan.slot_fault(idx, p, s).copied())
                        .collect();
                    for o in 0..PORT_COUNT {
                        r.link_stuck[p][o] = plan.link_fault(idx, p, o).copied();
                    }
                }
                r
            })
            .collect();

        let mut faults = FaultMap::new(dims);
        if cfg.apriori_marks {
            for idx in 0..dims.nodes() {
                let node = dims.coord(idx);
                for p in 0..PORT_COUNT {
                    if !routers[idx].inputs[p].exists {
                        continue;
                    }
                    for s in 0..plan.depth {
                        if plan.slot_fault(idx, p, s).is_some() {
                            routers[idx].inputs[p].buf.mark_faulty(s);
                            events.push(Event {
                                cycle: 0,
                                node,
                                kind: EventKind::SlotMarked { input: p as u8, slot: s as u8 },
                            });
                        }
                    }
                    for o in 0..PORT_COUNT {
                        if routers[idx].outputs[o].exists && plan.link_fault(idx, p, o).is_some() {
                            routers[idx].xbar.mark(p, o);
                            events.push(Event {
                                cycle: 0,
                                node,
                                kind: EventKind::LinkMarked { input: p as u8, output: o as u8 },
                            });
                        }
                    }
                }
            }
            for (ci, ch) in chans.iter().enumerate() {
                let node = dims.coord(ch.a);
                if plan.channel_fault(ci).is_some() {
                    faults.mark_channel(node, ch.a_dir);
                    events.push(Event {
                        cycle: 0,
                        node,
                        kind: EventKind::ChannelMarked {
                            output: ch.a_dir.index() as u8,
                            reason: MarkReason::Planted,
                        },
                    });
                }
            }
            // A buffer with every slot flagged can accept nothing; its
            // channel is as dead as a cut wire.
            for ch in &chans {
                let node = dims.coord(ch.a);
                if faults.is_faulty(node, ch.a_dir) {
                    continue;
                }
                let rx_b = &routers[ch.b].inputs[ch.a_dir.opposite().index()].buf;
                let rx_a = &routers[ch.a].inputs[ch.a_dir.index()].buf;
                if rx_b.healthy_capacity() == 0 || rx_a.healthy_capacity() == 0 {
                    faults.mark_channel(node, ch.a_dir);
                    events.push(Event {
                        cycle: 0,
                        node,
                        kind: EventKind::ChannelMarked {
                            output: ch.a_dir.index() as u8,
                            reason: MarkReason::DeadBuffer,
                        },
                    });
                }
            }
        }

        // Initial credits reflect the downstream buffer as marked above.
        for ch in &chans {
            let cap_b = routers[ch.b].inputs[ch.a_dir.opposite().index()].buf.healthy_capacity();
            routers[ch.a].outputs[ch.a_dir.index()].credits = cap_b as i32;
            let cap_a = routers[ch.a].inputs[ch.a_dir.index()].buf.healthy_capacity();
            routers[ch.b].outputs[ch.a_dir.opposite().index()].credits = cap_a as i32;
        }

        let channels = chans
            .iter()
            .enumerate()
            .map(|(ci, &def)| Channel {
                def,
                stuck: plan.channel_fault(ci).copied(),
                wire: [None, None],
                nack: [false, false],
                credit: [0, 0],
                adjust: [0, 0],
                rng: [
                    rng::stream(seed, tag::CHANNEL + (ci as u64) * 2),
                    rng::stream(seed, tag::CHANNEL + (ci as u64) * 2 + 1),
                ],
            })
            .collect();

        let nodes = dims.nodes();
        Network {
            dims,
            cfg,
            routers,
            channels,
            lookup,
            faults,
            records: Vec::new(),
            events,
            cycle: 0,
            eval_order: None,
            forced_wire_flips: Vec::new(),
            occupancy: vec![[0; PORT_COUNT]; nodes],
            absorbing: BTreeMap::new(),
            completed: 0,
            last_progress: 0,
            delivered_flits: 0,
            dropped_flits: 0,
            total_flits: 0,
        }
    }

    /// Load the traffic schedule. Pids must be dense from zero and each
    /// packet's record is created here.
    pub fn load_packets(&mut self, packets: Vec<(usize, SourcePacket)>) {
        let mut recs: Vec<Option<PacketRecord>> =
            (0..packets.len()).map(|_| None).collect();
        for (src_idx, pkt) in packets {
            let pid = pkt.pid as usize;
            assert!(recs[pid].is_none(), "duplicate pid {pid}");
            self.total_flits += pkt.words.len() as u64;
            recs[pid] = Some(PacketRecord {
                pid: pkt.pid,
                src: self.dims.coord(src_idx),
                dest: pkt.dest,
                len: pkt.words.len() as u16,
                inject: None,
                eject: None,
                hops: 0,
                retrans: 0,
                mismatches: 0,
                delivered_flits: 0,
                outcome: Outcome::Pending,
            });
            self.routers[src_idx].source.push_back(pkt);
        }
        let base = self.records.len();
        assert_eq!(base, 0, "load_packets called once");
        self.records = recs.into_iter().map(|r| r.expect("dense pids")).collect();
        for r in &mut self.routers {
            r.source.make_contiguous().sort_by_key(|p| (p.release, p.pid));
        }
    }

    pub fn step(&mut self) {
        let now = self.cycle;
        let nodes = self.dims.nodes();

        // Freeze this cycle's channel inputs, then clear the latches.
        let mut wires: Vec<[Option<Flit>; PORT_COUNT]> = vec![Default::default(); nodes];
        let mut nacks = vec![[false; PORT_COUNT]; nodes];
        let mut credits = vec![[0u8; PORT_COUNT]; nodes];
        let mut adjusts = vec![[0i8; PORT_COUNT]; nodes];
        for idx in 0..nodes {
            for d in 0..6 {
                if let Some((ci, half)) = self.lookup[idx][d] {
                    let ch = &mut self.channels[ci];
                    wires[idx][d] = ch.wire[1 - half].take();
                    nacks[idx][d] = std::mem::take(&mut ch.nack[half]);
                    credits[idx][d] = std::mem::take(&mut ch.credit[half]);
                    adjusts[idx][d] = std::mem::take(&mut ch.adjust[half]);
                }
            }
        }

        let order: Vec<usize> = match &self.eval_order {
            Some(o) => o.clone(),
            None => (0..nodes).collect(),
        };
        let mut outs: Vec<Option<ComputeOut>> = (0..nodes).map(|_| None).collect();
        {
            let view = OccView { dims: self.dims, occ: &self.occupancy };
            for &i in &order {
                let cin = ComputeIn {
                    now,
                    faults: &self.faults,
                    congestion: &view,
                    wire: std::mem::take(&mut wires[i]),
                    nack: nacks[i],
                    credit: credits[i],
                    credit_adjust: adjusts[i],
                };
                outs[i] = Some(self.routers[i].compute(&cin));
            }
        }
        self.commit(now, outs);
        self.cycle = now + 1;
    }

    fn commit(&mut self, now: u64, outs: Vec<Option<ComputeOut>>) {
        let mut aborts: Vec<(usize, Pid, DropReason)> = Vec::new();
        let mut progress = false;

        for idx in 0..self.dims.nodes() {
            let out = outs[idx].as_ref().unwrap();
            for ev in &out.events {
                if let EventKind::VoteMismatch { pid, .. } = ev.kind {
                    self.records[pid as usize].mismatches += 1;
                }
                if let EventKind::Arq { pid, .. } = ev.kind {
                    self.records[pid as usize].retrans += 1;
                }
                if let EventKind::Drop { flits, .. } = ev.kind {
                    self.dropped_flits += flits as u64;
                }
            }
            self.events.extend(out.events.iter().cloned());
            for act in &out.actions {
                match *act {
                    Action::Transmit { out: o, flit: ref f } => {
                        let (ci, half) = self.lookup[idx][o].expect("transmit on wired port");
                        let ch = &mut self.channels[ci];
                        let mut word = f.word;
                        if let Some(s) = ch.stuck {
                            word = s.apply(word);
                        }
                        if self.cfg.router.soft_rate > 0.0
                            && ch.rng[half].gen::<f64>() < self.cfg.router.soft_rate
                        {
                            word ^= 1 << ch.rng[half].gen_range(0..44u32);
                        }
                        for flip in &self.forced_wire_flips {
                            if flip.cycle == now && flip.chan == ci && flip.half == half {
                                word ^= (1 << flip.bits[0]) | (1 << flip.bits[1]);
                            }
                        }
                        ch.wire[half] = Some(Flit::new(word, f.pid, f.seq));
                        progress = true;
                    }
                    Action::Nack { input } => {
                        let (ci, half) = self.lookup[idx][input].expect("nack on wired port");
                        self.channels[ci].nack[1 - half] = true;
                    }
                    Action::CreditReturn { input } => {
                        let (ci, half) = self.lookup[idx][input].expect("credit on wired port");
                        self.channels[ci].credit[1 - half] += 1;
                    }
                    Action::CreditAdjust { input, delta } => {
                        let (ci, half) = self.lookup[idx][input].expect("adjust on wired port");
                        self.channels[ci].adjust[1 - half] += delta;
                    }
                    Action::MarkChannel { out: o, reason: _ } => {
                        let node = self.dims.coord(idx);
                        let dir = Port::from_index(o as u8).unwrap();
                        if !self.faults.is_faulty(node, dir) {
                            self.faults.mark_channel(node, dir);
                            // Streams mid-flight over a dead channel cannot
                            // finish; cut them loose on both ends.
                            let far = self.dims.index(dir.step(node, &self.dims).unwrap());
                            for (r, d) in [(idx, o), (far, dir.opposite().index())] {
                                if let Some(pid) = self.routers[r].outputs[d].lock {
                                    aborts.push((r, pid, DropReason::ChannelCut));
                                }
                            }
                        }
                    }
                    Action::Abort { pid, reason } => aborts.push((idx, pid, reason)),
                    Action::HopInc { pid } => self.records[pid as usize].hops += 1,
                    Action::PacketInjected { pid } => {
                        // Latency spans the first injection; re-injection
                        // after an evacuation does not reset the clock.
                        let rec = &mut self.records[pid as usize];
                        if rec.inject.is_none() {
                            rec.inject = Some(now);
                        }
                        progress = true;
                    }
                    Action::AbsorbFlit { pid, seq: _, word, is_tail } => {
                        let staged = self.absorbing.entry(pid).or_default();
                        staged.push(word);
                        progress = true;
                        if is_tail {
                            let words = self.absorbing.remove(&pid).unwrap();
                            let flits = words.len() as u16;
                            self.routers[idx].source.push_back(SourcePacket {
                                pid,
                                dest: self.records[pid as usize].dest,
                                release: now + 1,
                                words,
                                next_flit: 0,
                            });
                            self.events.push(Event {
                                cycle: now,
                                node: self.dims.coord(idx),
                                kind: EventKind::Absorbed { pid, flits },
                            });
                        }
                    }
                    Action::DeliverFlit { pid, seq: _, is_tail } => {
                        let rec = &mut self.records[pid as usize];
                        rec.delivered_flits += 1;
                        self.delivered_flits += 1;
                        progress = true;
                        if is_tail {
                            rec.eject = Some(now);
                            let complete = rec.delivered_flits == rec.len;
                            let here = self.dims.coord(idx);
                            rec.outcome = if complete && here == rec.dest {
                                Outcome::Delivered
                            } else {
                                Outcome::Misdelivered
                            };
                            self.completed += 1;
                            let hops = rec.hops;
                            self.events.push(Event {
                                cycle: now,
                                node: here,
                                kind: EventKind::Delivered { pid, hops },
                            });
                        }
                    }
                }
            }
        }

        for (ridx, pid, reason) in aborts {
            if !matches!(self.records[pid as usize].outcome, Outcome::Pending) {
                continue;
            }
            let flits = self.sweep_abort(pid);
            self.records[pid as usize].outcome = Outcome::Dropped { reason };
            self.completed += 1;
            self.dropped_flits += flits as u64;
            progress = true;
            self.events.push(Event {
                cycle: now,
                node: self.dims.coord(ridx),
                kind: EventKind::Drop { pid, reason, flits },
            });
        }

        for idx in 0..self.dims.nodes() {
            for p in 0..PORT_COUNT {
                self.occupancy[idx][p] = self.routers[idx].inputs[p].buf.occupied() as u8;
            }
        }
        if progress {
            self.last_progress = now;
        }
        if self.cfg.census {
            self.check_census();
        }
    }

    /// Remove every trace of a packet and settle its credit debts: a freed
    /// healthy buffer slot pays the sender back, and an outbox entry whose
    /// flit is nowhere downstream refunds the output it was charged to.
    fn sweep_abort(&mut self, pid: Pid) -> u16 {
        let nodes = self.dims.nodes();
        let reports: Vec<_> = (0..nodes).map(|r| self.routers[r].purge_packet(pid)).collect();
        let mut seqs = BTreeSet::new();
        let mut buffered = BTreeSet::new();
        for (r, rep) in reports.iter().enumerate() {
            for &(input, seq, healthy) in &rep.buffered {
                seqs.insert(seq);
                buffered.insert(seq);
                if healthy && input != Port::Local.index() {
                    if let Some((ci, half)) = self.lookup[r][input] {
                        let ch = &self.channels[ci];
                        let (far, far_dir) = if half == 0 {
                            (ch.def.b, ch.def.a_dir.opposite())
                        } else {
                            (ch.def.a, ch.def.a_dir)
                        };
                        self.routers[far].outputs[far_dir.index()].credits += 1;
                    }
                }
            }
        }
        for (r, rep) in reports.iter().enumerate() {
            for &(o, seq) in &rep.outboxed {
                seqs.insert(seq);
                if !buffered.contains(&seq) {
                    self.routers[r].outputs[o].credits += 1;
                }
            }
        }
        for ch in &mut self.channels {
            for half in 0..2 {
                if ch.wire[half].as_ref().map_or(false, |f| f.pid == pid) {
                    let f = ch.wire[half].take().unwrap();
                    seqs.insert(f.seq);
                }
            }
        }
        if let Some(words) = self.absorbing.remove(&pid) {
            // Evacuated flits hold seqs 0..k; nothing else can still carry
            // those, so the set union stays exact.
            for s in 0..words.len() {
                seqs.insert(s as u16);
            }
        }
        let uninjected: u16 = reports.iter().map(|r| r.uninjected).sum();
        seqs.len() as u16 + uninjected
    }

    /// Every generated flit is delivered, dropped, or still somewhere in the
    /// system, exactly once.
    fn check_census(&self) {
        let mut present: BTreeSet<(Pid, u16)> = BTreeSet::new();
        for r in &self.routers {
            for inp in &r.inputs {
                for (_, f) in inp.buf.iter_fifo() {
                    present.insert(f.id());
                }
            }
            for out in &r.outputs {
                for e in out.outbox.iter() {
                    present.insert(e.flit.id());
                }
            }
            for pkt in &r.source {
                for s in pkt.next_flit..pkt.words.len() {
                    present.insert((pkt.pid, s as u16));
                }
            }
        }
        for ch in &self.channels {
            for half in 0..2 {
                if let Some(f) = &ch.wire[half] {
                    present.insert(f.id());
                }
            }
        }
        for (pid, words) in &self.absorbing {
            // Evacuation consumes a packet's flits in order from seq 0.
            for s in 0..words.len() {
                present.insert((*pid, s as u16));
            }
        }
        let balance = self.delivered_flits + self.dropped_flits + present.len() as u64;
        assert_eq!(
            balance, self.total_flits,
            "flit ledger out of balance at cycle {}: {} delivered + {} dropped + {} present != {} total",
            self.cycle, self.delivered_flits, self.dropped_flits, present.len(), self.total_flits
        );
    }

    pub fn all_complete(&self) -> bool {
        self.completed == self.records.len()
    }

    /// Step until every packet completes, the cycle budget runs out, or the
    /// network goes quiet (wedged streams at heavy damage).
    pub fn run(&mut self) -> RunResult {
        while !self.all_complete()
            && self.cycle < self.cfg.max_cycles
            && self.cycle.saturating_sub(self.last_progress) <= self.cfg.patience
        {
            self.step();
        }
        RunResult {
            records: self.records.clone(),
            events: self.events.clone(),
            cycles: self.cycle,
            delivered_flits: self.delivered_flits,
            dropped_flits: self.dropped_flits,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::EccMode;

    fn line2() -> FaultPlan {
        FaultPlan::empty(Dims::new(1, 1, 2), 4)
    }

    #[test]
    fn empty_network_stays_quiet() {
        let mut net = Network::build(&line2(), NetConfig::default(), 1);
        for _ in 0..5 {
            net.step();
        }
        assert_eq!(net.cycle, 5);
        assert!(net.events.is_empty());
        assert!(net.all_complete());
    }

    #[test]
    fn credits_start_at_buffer_depth() {
        let net = Network::build(&line2(), NetConfig::default(), 1);
        assert_eq!(net.routers[0].outputs[Port::East.index()].credits, 4);
        assert_eq!(net.routers[1].outputs[Port::West.index()].credits, 4);
        assert_eq!(net.routers[0].outputs[Port::West.index()].credits, 0, "boundary port");
    }

    #[test]
    fn apriori_marks_reduce_credits_and_log() {
        let mut plan = line2();
        plan.set_slot_fault(1, Port::West.index(), 0, Stuck2 { bits: [1, 2], vals: [true, true] });
        let cfg = NetConfig { apriori_marks: true, ..NetConfig::default() };
        let net = Network::build(&plan, cfg, 1);
        assert_eq!(net.routers[0].outputs[Port::East.index()].credits, 3);
        assert!(matches!(net.events[0].kind, EventKind::SlotMarked { .. }));
    }

    #[test]
    fn single_flit_packet_crosses_one_hop_in_six_cycles() {
        let mut net = Network::build(&line2(), NetConfig::default(), 1);
        let dest = Coord3::new(1, 0, 0);
        let words = crate::codec::packetize(dest, Port::Local, 1, &[], 0, EccMode::Off);
        net.load_packets(vec![(
            0,
            SourcePacket { pid: 0, dest, release: 0, words, next_flit: 0 },
        )]);
        let res = net.run();
        assert_eq!(res.records[0].outcome, Outcome::Delivered);
        assert_eq!(res.records[0].inject, Some(0));
        assert_eq!(res.records[0].eject, Some(6));
        assert_eq!(res.records[0].hops, 1);
    }
}
