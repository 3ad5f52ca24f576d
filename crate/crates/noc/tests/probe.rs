use noc::codec::EccMode;
use noc::coord::Dims;
use noc::fault::FaultPlan;
use noc::network::{NetConfig, Network};
use noc::router::RouterConfig;
use noc::traffic::{self, Pattern, SynthSpec};

#[test]
#[ignore]
fn probe_uniform_freeze() {
    let dims = Dims::new(4, 4, 4);
    let cfg = NetConfig {
        router: RouterConfig { dims, ..RouterConfig::default() },
        apriori_marks: false,
        census: false,
        max_cycles: 2000,
        patience: 10_000,
    };
    let spec = SynthSpec::reference(Pattern::Uniform);
    let sched = traffic::generate(&spec, dims, 1000, EccMode::Off);
    let plan = FaultPlan::empty(dims, 4);
    let mut net = Network::build(&plan, cfg, 1000);
    net.load_packets(sched.packets);
    for _ in 0..1500 {
        net.step();
        if net.cycle % 200 == 0 {
            let d = net.records.iter().filter(|r| r.eject.is_some()).count();
            println!("cycle {}: delivered {}", net.cycle, d);
        }
    }
    let mut shown = 0;
    for idx in 0..net.routers.len() {
        let lines = net.routers[idx].debug_stalls();
        if lines.is_empty() {
            continue;
        }
        println!("--- router {} {}", idx, net.routers[idx].node);
        for l in &lines {
            println!("  {l}");
        }
        shown += 1;
        if shown >= 8 {
            break;
        }
    }
    panic!("probe end");
}
