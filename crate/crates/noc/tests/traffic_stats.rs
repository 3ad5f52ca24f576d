//! Statistical and volume checks on the traffic generators and the shipped
//! benchmark files.

use noc::codec::EccMode;
use noc::coord::Dims;
use noc::traffic::{
    generate, hotspot_nodes, load_taskgraph, schedule_taskgraph, Pattern, SynthSpec, PACKET_LEN,
};

const D444: Dims = Dims::new(4, 4, 4);

/// Upper chi-square quantile via the Wilson-Hilferty cube approximation.
fn chi2_crit(df: f64, z: f64) -> f64 {
    let a = 2.0 / (9.0 * df);
    df * (1.0 - a + z * a.sqrt()).powi(3)
}

#[test]
fn uniform_destination_histogram_is_flat() {
    // By symmetry every node receives the same expected load; pool the
    // received counts over 100 seeds and test at the 1% level.
    let nodes = D444.nodes();
    let mut counts = vec![0u64; nodes];
    let spec = SynthSpec::reference(Pattern::Uniform);
    for seed in 0..100 {
        for (_, p) in generate(&spec, D444, seed, EccMode::Off).packets {
            counts[D444.index(p.dest)] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    assert_eq!(total, 100 * 64 * 128);
    let exp = total as f64 / nodes as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - exp).powi(2) / exp).sum();
    let crit = chi2_crit((nodes - 1) as f64, 2.3263);
    assert!(stat < crit, "chi-square {stat:.1} exceeds {crit:.1}");
}

#[test]
fn hotspots_absorb_redirected_load() {
    let h = 0.10;
    let spec = SynthSpec::reference(Pattern::Hotspot { fraction: h });
    let mut counts = vec![0u64; D444.nodes()];
    for (_, p) in generate(&spec, D444, 17, EccMode::Off).packets {
        counts[D444.index(p.dest)] += 1;
    }
    let hot: Vec<usize> = hotspot_nodes(D444).iter().map(|&c| D444.index(c)).collect();
    let cold: Vec<u64> = (0..counts.len())
        .filter(|i| !hot.contains(i))
        .map(|i| counts[i])
        .collect();
    let mean_cold = cold.iter().sum::<u64>() as f64 / cold.len() as f64;
    let bound = (1.0 + h * 63.0 / hot.len() as f64) * mean_cold;
    for &i in &hot {
        assert!(
            counts[i] as f64 >= bound,
            "hotspot {i} got {} < {bound:.0}",
            counts[i]
        );
    }
}

#[test]
fn shipped_benchmarks_total_exactly() {
    let cases = [
        ("h264", Dims::new(3, 3, 3), 8400u64),
        ("vopd", Dims::new(2, 2, 3), 3494),
        ("mwd", Dims::new(3, 2, 2), 1120),
        ("pip", Dims::new(2, 2, 2), 512),
    ];
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/taskgraphs");
    for (name, dims, total) in cases {
        let map = std::fs::read_to_string(format!("{root}/{name}.map")).unwrap();
        let trace = std::fs::read_to_string(format!("{root}/{name}.trace")).unwrap();
        let tg = load_taskgraph(&map, &trace, dims).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(tg.total_packets, total, "{name} trace total");
        let sched = schedule_taskgraph(&tg, dims, PACKET_LEN, 0, EccMode::On);
        assert_eq!(sched.packets.len() as u64, total, "{name} schedule total");
        assert!(sched.packets.iter().all(|(_, p)| p.words.len() == PACKET_LEN));
    }
}
