//! From a resolved config to finished runs: schedule, fault plan, network,
//! summary.

use std::fs;

use noc::fault::FaultPlan;
use noc::network::{Network, RunResult};
use noc::traffic::{self, Schedule, SynthSpec};

use crate::config::{SimConfig, Workload};
use crate::metrics::{self, SeedSummary};

pub struct SeedRun {
    pub seed: u64,
    pub plan: FaultPlan,
    pub result: RunResult,
    pub summary: SeedSummary,
}

/// One seed end to end. The same seed value feeds traffic, fault placement
/// and the runtime error streams; the tagged-stream split keeps them
/// independent.
pub fn run_one(
    cfg: &SimConfig,
    seed: u64,
    plan_override: Option<&FaultPlan>,
) -> Result<SeedRun, String> {
    let sched = build_schedule(cfg, seed)?;
    let plan = match plan_override {
        Some(p) => p.clone(),
        None => build_plan(cfg, seed)?,
    };
    let mut net = Network::build(&plan, cfg.net_config(), seed);
    net.load_packets(sched.packets);
    let result = net.run();
    let summary = metrics::summarize(seed, &result, cfg.mesh.nodes());
    Ok(SeedRun { seed, plan, result, summary })
}

pub fn run_all(cfg: &SimConfig) -> Result<Vec<SeedRun>, String> {
    (0..cfg.seeds as u64).map(|i| run_one(cfg, cfg.seed0 + i, None)).collect()
}

pub fn build_schedule(cfg: &SimConfig, seed: u64) -> Result<Schedule, String> {
    let ecc = cfg.ecc();
    match &cfg.workload {
        Workload::Synth(p) => {
            let mut spec = SynthSpec::reference(*p);
            if let Some(n) = cfg.per_node {
                spec.per_node = n;
            }
            spec.packet_len = cfg.packet_len;
            spec.hotspot_len = cfg.packet_len + (cfg.packet_len + 9) / 10;
            Ok(traffic::generate(&spec, cfg.mesh, seed, ecc))
        }
        Workload::TaskGraph { trace, mapping } => {
            let read = |p: &std::path::Path| {
                fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))
            };
            let tg = traffic::load_taskgraph(&read(mapping)?, &read(trace)?, cfg.mesh)?;
            Ok(traffic::schedule_taskgraph(&tg, cfg.mesh, cfg.packet_len, seed, ecc))
        }
    }
}

pub fn build_plan(cfg: &SimConfig, seed: u64) -> Result<FaultPlan, String> {
    if cfg.hard_rate == 0.0 {
        return Ok(FaultPlan::empty(cfg.mesh, cfg.buffer_depth));
    }
    FaultPlan::generate(cfg.mesh, cfg.buffer_depth, cfg.hard_rate, seed, true)
        .map_err(|e| e.to_string())
}
