//! Frozen end-to-end timing values for the pipeline, on quiet meshes where
//! every cycle is accountable.
//!
//! Anchors (H = hops, L = flits per packet):
//!   plain and speculative-voted header delivery: 4H + 2
//!   conservative-voted header delivery:          5H + 3
//!   streaming: +1 cycle per extra flit while within the credit window
//!   one vote mismatch: +1; a failed majority (flush): +3
//!   one detected wire hit: +2 (nack turnaround and retransmission)

use noc::codec::{packetize, EccMode};
use noc::coord::{Coord3, Dims, Port};
use noc::fault::FaultPlan;
use noc::network::{ForcedWireFlip, NetConfig, Network, Outcome};
use noc::router::{CtMode, ForcedUpset, RouterConfig, SourcePacket};

fn line(n: u8) -> FaultPlan {
    FaultPlan::empty(Dims::new(1, 1, n), 4)
}

fn net_with(plan: &FaultPlan, router: RouterConfig) -> Network {
    let cfg = NetConfig { router, census: true, ..NetConfig::default() };
    Network::build(plan, cfg, 42)
}

fn one_packet(net: &mut Network, src: usize, dest: Coord3, len: usize, ecc: EccMode) {
    let words = packetize(dest, Port::Local, len, &[], 0, ecc);
    net.load_packets(vec![(
        src,
        SourcePacket { pid: 0, dest, release: 0, words, next_flit: 0 },
    )]);
}

fn soft_router() -> RouterConfig {
    RouterConfig {
        ecc: EccMode::On,
        voting: true,
        arq: true,
        ct_mode: CtMode::Speculative,
        ..RouterConfig::default()
    }
}

#[test]
fn plain_header_latency_is_4h_plus_2() {
    for hops in 1..=3u8 {
        let plan = line(4);
        let mut net = net_with(&plan, RouterConfig::default());
        one_packet(&mut net, 0, Coord3::new(hops, 0, 0), 1, EccMode::Off);
        let res = net.run();
        assert_eq!(res.records[0].outcome, Outcome::Delivered);
        assert_eq!(res.records[0].hops, hops as u16);
        assert_eq!(res.records[0].latency(), Some(4 * hops as u64 + 2), "H={hops}");
    }
}

#[test]
fn speculative_voted_matches_plain_latency() {
    for hops in 1..=3u8 {
        let plan = line(4);
        let mut net = net_with(&plan, soft_router());
        one_packet(&mut net, 0, Coord3::new(hops, 0, 0), 1, EccMode::On);
        let res = net.run();
        assert_eq!(res.records[0].outcome, Outcome::Delivered);
        assert_eq!(res.records[0].latency(), Some(4 * hops as u64 + 2), "H={hops}");
    }
}

#[test]
fn conservative_voted_latency_is_5h_plus_3() {
    for hops in 1..=3u8 {
        let plan = line(4);
        let mut net = net_with(
            &plan,
            RouterConfig { ct_mode: CtMode::Conservative, ..soft_router() },
        );
        one_packet(&mut net, 0, Coord3::new(hops, 0, 0), 1, EccMode::On);
        let res = net.run();
        assert_eq!(res.records[0].outcome, Outcome::Delivered);
        assert_eq!(res.records[0].latency(), Some(5 * hops as u64 + 3), "H={hops}");
    }
}

#[test]
fn stream_within_credit_window_adds_one_cycle_per_flit() {
    for len in 2..=4u64 {
        let plan = line(2);
        let mut net = net_with(&plan, RouterConfig::default());
        one_packet(&mut net, 0, Coord3::new(1, 0, 0), len as usize, EccMode::Off);
        let res = net.run();
        assert_eq!(res.records[0].outcome, Outcome::Delivered);
        assert_eq!(res.records[0].latency(), Some(6 + (len - 1)), "L={len}");
    }
}

#[test]
fn long_stream_pays_one_bubble_per_credit_round() {
    // The freed-slot pulse takes five cycles to come back (crossbar, wire,
    // store, downstream crossbar, latched return) against four buffer slots,
    // so a saturated link streams four flits then skips a cycle. A 12-flit
    // packet over one hop crosses two such bubbles.
    let plan = line(2);
    let mut net = net_with(&plan, RouterConfig::default());
    one_packet(&mut net, 0, Coord3::new(1, 0, 0), 12, EccMode::Off);
    let res = net.run();
    assert_eq!(res.records[0].outcome, Outcome::Delivered);
    assert_eq!(res.records[0].latency(), Some(6 + 11 + 2));
}

#[test]
fn vote_mismatch_costs_one_cycle() {
    let plan = line(2);
    let mut net = net_with(&plan, soft_router());
    one_packet(&mut net, 0, Coord3::new(1, 0, 0), 1, EccMode::On);
    // Injection stores at cycle 0; execution round 1 runs at cycle 1.
    net.routers[0].forced_upsets.push(ForcedUpset {
        cycle: 1,
        input: Port::Local.index(),
        round: 1,
        npc: false,
        sa: true,
    });
    let res = net.run();
    assert_eq!(res.records[0].outcome, Outcome::Delivered);
    assert_eq!(res.records[0].mismatches, 1);
    assert_eq!(res.records[0].latency(), Some(6 + 1));
}

#[test]
fn failed_majority_flushes_for_three_cycles() {
    let plan = line(2);
    let mut net = net_with(&plan, soft_router());
    one_packet(&mut net, 0, Coord3::new(1, 0, 0), 1, EccMode::On);
    for (cycle, round) in [(1, 1), (2, 2)] {
        net.routers[0].forced_upsets.push(ForcedUpset {
            cycle,
            input: Port::Local.index(),
            round,
            npc: false,
            sa: true,
        });
    }
    let res = net.run();
    assert_eq!(res.records[0].outcome, Outcome::Delivered);
    let retries = res
        .events
        .iter()
        .filter(|e| noc::event::class_name(&e.kind) == "vote_retry")
        .count();
    assert_eq!(retries, 1);
    assert_eq!(res.records[0].latency(), Some(6 + 3));
}

#[test]
fn detected_wire_hit_costs_two_cycles() {
    let plan = line(2);
    let mut net = net_with(&plan, soft_router());
    one_packet(&mut net, 0, Coord3::new(1, 0, 0), 1, EccMode::On);
    // The single flit is transmitted at cycle 3; two flipped payload bits
    // defeat the single-error correction and trigger a retransmission.
    net.forced_wire_flips.push(ForcedWireFlip { cycle: 3, chan: 0, half: 0, bits: [20, 21] });
    let res = net.run();
    assert_eq!(res.records[0].outcome, Outcome::Delivered);
    assert_eq!(res.records[0].retrans, 1);
    assert_eq!(res.records[0].latency(), Some(6 + 2));
}

#[test]
fn single_wire_hit_is_absorbed_silently() {
    let plan = line(2);
    let mut net = net_with(&plan, soft_router());
    one_packet(&mut net, 0, Coord3::new(1, 0, 0), 1, EccMode::On);
    net.forced_wire_flips.push(ForcedWireFlip { cycle: 3, chan: 0, half: 0, bits: [20, 20] });
    let res = net.run();
    assert_eq!(res.records[0].outcome, Outcome::Delivered);
    assert_eq!(res.records[0].retrans, 0);
    assert_eq!(res.records[0].latency(), Some(6));
}

#[test]
fn two_wire_hits_on_same_flit_abort_the_packet() {
    let plan = line(2);
    let mut net = net_with(&plan, soft_router());
    one_packet(&mut net, 0, Coord3::new(1, 0, 0), 1, EccMode::On);
    for cycle in [3, 5] {
        net.forced_wire_flips.push(ForcedWireFlip { cycle, chan: 0, half: 0, bits: [20, 21] });
    }
    let res = net.run();
    assert!(matches!(
        res.records[0].outcome,
        Outcome::Dropped { reason: noc::event::DropReason::ArqLimit }
    ));
    assert_eq!(res.records[0].retrans, 2);
    assert_eq!(res.delivered_flits, 0);
    assert_eq!(res.dropped_flits, 1);
}
