//! Per-seed summaries over the packet records, cross-seed aggregation, and
//! the CSV/log renderings the CLI writes out.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use noc::event::class_counts;
use noc::network::{Outcome, PacketRecord, RunResult};
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub cycles: u64,
    pub offered_packets: usize,
    pub delivered_packets: usize,
    pub dropped_packets: usize,
    pub misdelivered_packets: usize,
    pub unfinished_packets: usize,
    pub delivery_ratio: f64,
    /// Mean header-inject to tail-eject time over delivered packets.
    pub avg_latency: Option<f64>,
    pub avg_hops: Option<f64>,
    /// Delivered flits per node per cycle.
    pub throughput: f64,
    pub delivered_flits: u64,
    pub dropped_flits: u64,
    pub retransmissions: u64,
    pub vote_mismatches: u64,
    pub events: BTreeMap<&'static str, u64>,
}

pub fn summarize(seed: u64, result: &RunResult, nodes: usize) -> SeedSummary {
    let rs = &result.records;
    let delivered: Vec<&PacketRecord> =
        rs.iter().filter(|r| r.outcome == Outcome::Delivered).collect();
    let dropped = rs.iter().filter(|r| matches!(r.outcome, Outcome::Dropped { .. })).count();
    let misdelivered = rs.iter().filter(|r| r.outcome == Outcome::Misdelivered).count();
    let lat_sum: u64 = delivered.iter().filter_map(|r| r.latency()).sum();
    let hop_sum: u64 = delivered.iter().map(|r| r.hops as u64).sum();
    let n = delivered.len();
    SeedSummary {
        seed,
        cycles: result.cycles,
        offered_packets: rs.len(),
        delivered_packets: n,
        dropped_packets: dropped,
        misdelivered_packets: misdelivered,
        unfinished_packets: rs.len() - n - dropped - misdelivered,
        delivery_ratio: if rs.is_empty() { 1.0 } else { n as f64 / rs.len() as f64 },
        avg_latency: (n > 0).then(|| lat_sum as f64 / n as f64),
        avg_hops: (n > 0).then(|| hop_sum as f64 / n as f64),
        throughput: if result.cycles == 0 {
            0.0
        } else {
            result.delivered_flits as f64 / (result.cycles as f64 * nodes as f64)
        },
        delivered_flits: result.delivered_flits,
        dropped_flits: result.dropped_flits,
        retransmissions: rs.iter().map(|r| r.retrans as u64).sum(),
        vote_mismatches: rs.iter().map(|r| r.mismatches as u64).sum(),
        events: class_counts(&result.events),
    }
}

impl SeedSummary {
    /// A run is collapsed when it loses most of its traffic or its latency
    /// blows up past ten times the fault-free reference.
    pub fn collapsed(&self, zero_fault_latency: f64) -> bool {
        if self.delivery_ratio < 0.5 {
            return true;
        }
        match self.avg_latency {
            Some(l) => l > 10.0 * zero_fault_latency,
            None => true,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Aggregate {
    pub runs: usize,
    pub mean_delivery: f64,
    pub mean_latency: Option<f64>,
    pub sd_latency: Option<f64>,
    pub mean_hops: Option<f64>,
    pub mean_throughput: f64,
    pub mean_cycles: f64,
}

pub fn aggregate(seeds: &[SeedSummary]) -> Aggregate {
    let lats: Vec<f64> = seeds.iter().filter_map(|s| s.avg_latency).collect();
    let hops: Vec<f64> = seeds.iter().filter_map(|s| s.avg_hops).collect();
    let (mean_latency, sd_latency) = mean_sd(&lats);
    Aggregate {
        runs: seeds.len(),
        mean_delivery: mean(seeds.iter().map(|s| s.delivery_ratio)),
        mean_latency,
        sd_latency,
        mean_hops: mean_sd(&hops).0,
        mean_throughput: mean(seeds.iter().map(|s| s.throughput)),
        mean_cycles: mean(seeds.iter().map(|s| s.cycles as f64)),
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 }
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (Some(m), Some(var.sqrt()))
}

pub fn packets_csv(records: &[PacketRecord]) -> String {
    let mut out = String::from("pid,src,dest,len,inject,eject,latency,hops,retrans,mismatches,outcome\n");
    // Nodes render dot-separated (z.y.x) to keep the comma grid intact.
    let node = |c: noc::coord::Coord3| format!("{}.{}.{}", c.z, c.y, c.x);
    for r in records {
        let opt = |v: Option<u64>| v.map_or(String::new(), |x| x.to_string());
        let outcome = match r.outcome {
            Outcome::Pending => "pending".into(),
            Outcome::Delivered => "delivered".into(),
            Outcome::Misdelivered => "misdelivered".into(),
            Outcome::Dropped { reason } => format!("dropped:{reason:?}").to_lowercase(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.pid,
            node(r.src),
            node(r.dest),
            r.len,
            opt(r.inject),
            opt(r.eject),
            opt(r.latency()),
            r.hops,
            r.retrans,
            r.mismatches,
            outcome
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use noc::coord::Coord3;

    fn rec(pid: u32, inject: u64, eject: u64, hops: u16, outcome: Outcome) -> PacketRecord {
        PacketRecord {
            pid,
            src: Coord3::new(0, 0, 0),
            dest: Coord3::new(1, 0, 0),
            len: 10,
            inject: Some(inject),
            eject: (outcome == Outcome::Delivered).then_some(eject),
            hops,
            retrans: 0,
            mismatches: 0,
            delivered_flits: if outcome == Outcome::Delivered { 10 } else { 0 },
            outcome,
        }
    }

    #[test]
    fn summary_counts_outcomes() {
        let result = RunResult {
            records: vec![
                rec(0, 0, 20, 2, Outcome::Delivered),
                rec(1, 0, 40, 4, Outcome::Delivered),
                rec(2, 0, 0, 0, Outcome::Dropped { reason: noc::event::DropReason::ArqLimit }),
                rec(3, 0, 0, 0, Outcome::Pending),
            ],
            events: vec![],
            cycles: 100,
            delivered_flits: 20,
            dropped_flits: 3,
        };
        let s = summarize(7, &result, 8);
        assert_eq!(s.delivered_packets, 2);
        assert_eq!(s.dropped_packets, 1);
        assert_eq!(s.unfinished_packets, 1);
        assert_eq!(s.delivery_ratio, 0.5);
        assert_eq!(s.avg_latency, Some(30.0));
        assert_eq!(s.avg_hops, Some(3.0));
        assert_eq!(s.throughput, 20.0 / 800.0);
        assert!(!s.collapsed(1e9), "exactly half delivered sits on the boundary");

        let mut worse = result;
        worse.records.push(rec(4, 0, 0, 0, Outcome::Pending));
        assert!(summarize(7, &worse, 8).collapsed(1e9), "2 of 5 is collapse");
    }

    #[test]
    fn collapse_predicate() {
        let result = RunResult {
            records: vec![rec(0, 0, 500, 2, Outcome::Delivered)],
            events: vec![],
            cycles: 600,
            delivered_flits: 10,
            dropped_flits: 0,
        };
        let s = summarize(0, &result, 8);
        assert!(!s.collapsed(60.0), "500 <= 10 * 60");
        assert!(s.collapsed(40.0), "500 > 10 * 40");
    }

    #[test]
    fn aggregate_latency_stats() {
        let mk = |lat: f64| SeedSummary {
            seed: 0,
            cycles: 100,
            offered_packets: 1,
            delivered_packets: 1,
            dropped_packets: 0,
            misdelivered_packets: 0,
            unfinished_packets: 0,
            delivery_ratio: 1.0,
            avg_latency: Some(lat),
            avg_hops: Some(2.0),
            throughput: 0.1,
            delivered_flits: 10,
            dropped_flits: 0,
            retransmissions: 0,
            vote_mismatches: 0,
            events: BTreeMap::new(),
        };
        let a = aggregate(&[mk(10.0), mk(14.0)]);
        assert_eq!(a.mean_latency, Some(12.0));
        assert_eq!(a.sd_latency, Some(2.0));
        assert_eq!(a.mean_delivery, 1.0);
    }

    #[test]
    fn csv_yields_one_line_per_packet() {
        let rows = packets_csv(&[rec(0, 0, 20, 2, Outcome::Delivered)]);
        let mut lines = rows.lines();
        assert!(lines.next().unwrap().starts_with("pid,"));
        let r = lines.next().unwrap();
        assert_eq!(r.split(',').count(), 11);
        assert!(r.ends_with("delivered"), "{r}");
        assert!(lines.next().is_none());
    }
}
