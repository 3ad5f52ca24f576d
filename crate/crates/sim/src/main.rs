use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use noc::event::to_log_lines;
use noc::fault::FaultPlan;
use noc::router::CtMode;
use serde_json::json;

use sim::config::{Diagnosis, FileConfig, Mode, SimConfig};
use sim::metrics::{aggregate, packets_csv, Aggregate, SeedSummary};
use sim::runner::{run_one, SeedRun};

#[derive(Parser)]
#[command(
    name = "noc-sim",
    about = "Cycle-accurate simulator of a fault-tolerant 3D mesh network-on-chip"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one configuration across its seeds and write per-seed outputs.
    Run(RunArgs),
    /// Run a grid of reference workloads and tabulate deltas against the
    /// fault-free baseline.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML config file; command-line flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reference profile, e.g. ref-transpose-hard-33 or ref-pip-full-10.
    #[arg(long)]
    profile: Option<String>,
    /// transpose | uniform | hotspot | matrix | h264 | vopd | mwd | pip | taskgraph
    #[arg(long)]
    pattern: Option<String>,
    /// Mesh as ZxYxX, e.g. 4x4x4.
    #[arg(long)]
    mesh: Option<String>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Permanent-fault site probability, 0.0 to 1.0.
    #[arg(long)]
    hard_rate: Option<f64>,
    /// Transient bit-flip probability per channel word, 0.0 to 1.0.
    #[arg(long)]
    soft_rate: Option<f64>,
    #[arg(long)]
    seeds: Option<u32>,
    #[arg(long)]
    seed0: Option<u64>,
    #[arg(long)]
    packet_len: Option<usize>,
    #[arg(long)]
    per_node: Option<usize>,
    #[arg(long)]
    hotspot_fraction: Option<f64>,
    /// speculative | conservative
    #[arg(long)]
    ct_mode: Option<String>,
    /// apriori | online
    #[arg(long)]
    diagnosis: Option<Diagnosis>,
    #[arg(long)]
    bypass_count: Option<usize>,
    #[arg(long)]
    buffer_depth: Option<usize>,
    #[arg(long)]
    max_cycles: Option<u64>,
    #[arg(long)]
    patience: Option<u64>,
    /// Verify the flit ledger (injected = delivered + in-flight + dropped)
    /// every cycle.
    #[arg(long)]
    census: bool,
    /// Task-graph trace file (with --pattern taskgraph).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Task placement file (with --pattern taskgraph).
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Re-run against a saved faultplan-<seed>.json instead of drawing one.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value = "transpose,uniform,matrix,hotspot")]
    patterns: String,
    #[arg(long, default_value = "baseline,hard,soft,full")]
    modes: String,
    /// Fault-rate percentages.
    #[arg(long, default_value = "0,10,20,33")]
    rates: String,
    /// Seeds per cell (default: the profile's 10).
    #[arg(long)]
    seeds: Option<u32>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => cmd_run(&a),
        Cmd::Sweep(a) => cmd_sweep(&a),
    };
    if let Err(e) = res {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}

fn read_text(p: &Path) -> Result<String, String> {
    fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn write_text(p: &Path, text: &str) -> Result<(), String> {
    fs::write(p, text).map_err(|e| format!("{}: {e}", p.display()))
}

fn overlay(f: &mut FileConfig, a: &RunArgs) {
    let set_s = |dst: &mut Option<String>, src: &Option<String>| {
        if src.is_some() {
            *dst = src.clone();
        }
    };
    set_s(&mut f.profile, &a.profile);
    set_s(&mut f.pattern, &a.pattern);
    set_s(&mut f.mesh, &a.mesh);
    set_s(&mut f.ct_mode, &a.ct_mode);
    if a.trace.is_some() {
        f.trace = a.trace.clone();
    }
    if a.mapping.is_some() {
        f.mapping = a.mapping.clone();
    }
    f.mode = a.mode.or(f.mode);
    f.hard_rate = a.hard_rate.or(f.hard_rate);
    f.soft_rate = a.soft_rate.or(f.soft_rate);
    f.seeds = a.seeds.or(f.seeds);
    f.seed0 = a.seed0.or(f.seed0);
    f.packet_len = a.packet_len.or(f.packet_len);
    f.per_node = a.per_node.or(f.per_node);
    f.hotspot_fraction = a.hotspot_fraction.or(f.hotspot_fraction);
    f.diagnosis = a.diagnosis.or(f.diagnosis);
    f.bypass_count = a.bypass_count.or(f.bypass_count);
    f.buffer_depth = a.buffer_depth.or(f.buffer_depth);
    f.max_cycles = a.max_cycles.or(f.max_cycles);
    f.patience = a.patience.or(f.patience);
    if a.census {
        f.census = Some(true);
    }
}

fn config_echo(cfg: &SimConfig) -> serde_json::Value {
    let r = cfg.router_config();
    json!({
        "pattern": cfg.name,
        "mesh": format!("{}x{}x{}", cfg.mesh.z, cfg.mesh.y, cfg.mesh.x),
        "mode": cfg.mode.to_string(),
        "hard_rate": cfg.hard_rate,
        "soft_rate": cfg.soft_rate,
        "seeds": cfg.seeds,
        "seed0": cfg.seed0,
        "packet_len": cfg.packet_len,
        "per_node": cfg.per_node,
        "ct_mode": match r.ct_mode { CtMode::Speculative => "speculative", CtMode::Conservative => "conservative" },
        "diagnosis": match cfg.diagnosis { Diagnosis::Apriori => "apriori", Diagnosis::Online => "online" },
        "bypass_count": cfg.bypass_count,
        "buffer_depth": cfg.buffer_depth,
    })
}

fn fmt_lat(l: Option<f64>) -> String {
    l.map_or("-".into(), |v| format!("{v:.2}"))
}

fn cmd_run(a: &RunArgs) -> Result<(), String> {
    let mut file = match &a.config {
        Some(p) => FileConfig::parse(&read_text(p)?)?,
        None => FileConfig::default(),
    };
    overlay(&mut file, a);
    let cfg = SimConfig::resolve(&file)?;
    let replay = match &a.replay {
        Some(p) => {
            Some(FaultPlan::from_json(&read_text(p)?).map_err(|e| format!("{}: {e}", p.display()))?)
        }
        None => None,
    };
    fs::create_dir_all(&a.out_dir).map_err(|e| format!("{}: {e}", a.out_dir.display()))?;

    let mut sums: Vec<SeedSummary> = Vec::new();
    for i in 0..cfg.seeds as u64 {
        let seed = cfg.seed0 + i;
        let run = run_one(&cfg, seed, replay.as_ref())?;
        let s = &run.summary;
        println!(
            "seed {seed}: {}/{} delivered in {} cycles, latency {}, throughput {:.4}",
            s.delivered_packets,
            s.offered_packets,
            s.cycles,
            fmt_lat(s.avg_latency),
            s.throughput
        );
        write_seed_outputs(&a.out_dir, &run)?;
        sums.push(run.summary);
    }
    let agg = aggregate(&sums);
    let summary = json!({
        "config": config_echo(&cfg),
        "seeds": sums,
        "aggregate": agg,
    });
    write_text(
        &a.out_dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    println!(
        "mean over {} seed(s): delivery {:.3}, latency {}, throughput {:.4}",
        agg.runs,
        agg.mean_delivery,
        fmt_lat(agg.mean_latency),
        agg.mean_throughput
    );
    Ok(())
}

fn write_seed_outputs(dir: &Path, run: &SeedRun) -> Result<(), String> {
    let seed = run.seed;
    write_text(&dir.join(format!("packets-{seed}.csv")), &packets_csv(&run.result.records))?;
    write_text(&dir.join(format!("events-{seed}.log")), &to_log_lines(&run.result.events))?;
    write_text(&dir.join(format!("faultplan-{seed}.json")), &run.plan.to_json())
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), String> {
    let patterns = split_list(&a.patterns);
    let modes = split_list(&a.modes);
    let rates: Vec<u32> = split_list(&a.rates)
        .iter()
        .map(|r| r.parse().map_err(|_| format!("rate `{r}` is not a percent")))
        .collect::<Result<_, _>>()?;
    if patterns.is_empty() || modes.is_empty() || rates.is_empty() {
        return Err("sweep needs at least one pattern, mode and rate".into());
    }
    fs::create_dir_all(&a.out_dir).map_err(|e| format!("{}: {e}", a.out_dir.display()))?;

    let t0 = Instant::now();
    let mut csv = String::from(
        "pattern,mode,rate_pct,seeds,delivery,latency,latency_sd,latency_delta_pct,\
         throughput,throughput_delta_pct,avg_hops,mean_cycles,collapsed_seeds\n",
    );
    let mut cache: HashMap<String, (Aggregate, Vec<SeedSummary>)> = HashMap::new();

    for p in &patterns {
        let base_key = format!("ref-{p}-baseline-0");
        let (base, _) = run_cell(&base_key, a.seeds, &mut cache)?.clone();
        let base_lat = base
            .mean_latency
            .ok_or(format!("{base_key}: no delivered packets to reference against"))?;
        eprintln!("[{:7.1?}] {base_key}: latency {base_lat:.2}", t0.elapsed());

        for m in &modes {
            for &r in &rates {
                let key = format!("ref-{p}-{m}-{r}");
                let (agg, sums) = run_cell(&key, a.seeds, &mut cache)?.clone();
                let collapsed = sums.iter().filter(|s| s.collapsed(base_lat)).count();
                let dlat = agg.mean_latency.map(|l| 100.0 * (l - base_lat) / base_lat);
                let dthr = 100.0 * (agg.mean_throughput - base.mean_throughput)
                    / base.mean_throughput;
                let _ = writeln!(
                    csv,
                    "{p},{m},{r},{},{:.4},{},{},{},{:.6},{:.2},{},{:.1},{collapsed}",
                    agg.runs,
                    agg.mean_delivery,
                    fmt_lat(agg.mean_latency),
                    fmt_lat(agg.sd_latency),
                    dlat.map_or("-".into(), |d| format!("{d:.2}")),
                    agg.mean_throughput,
                    dthr,
                    fmt_lat(agg.mean_hops),
                    agg.mean_cycles,
                );
                println!(
                    "{p:<10} {m:<8} {r:>3}%  delivery {:.3}  latency {:>8} ({})  throughput {:.4} ({:+.1}%)  collapsed {collapsed}",
                    agg.mean_delivery,
                    fmt_lat(agg.mean_latency),
                    dlat.map_or("-".into(), |d| format!("{d:+.2}%")),
                    agg.mean_throughput,
                    dthr,
                );
                write_text(&a.out_dir.join("series.csv"), &csv)?;
                eprintln!("[{:7.1?}] {key} done", t0.elapsed());
            }
        }
    }
    println!("series written to {}", a.out_dir.join("series.csv").display());
    Ok(())
}

fn run_cell<'c>(
    profile: &str,
    seeds: Option<u32>,
    cache: &'c mut HashMap<String, (Aggregate, Vec<SeedSummary>)>,
) -> Result<&'c (Aggregate, Vec<SeedSummary>), String> {
    if !cache.contains_key(profile) {
        let mut cfg = SimConfig::profile(profile)?;
        if let Some(n) = seeds {
            cfg.seeds = n;
        }
        let mut sums = Vec::new();
        for i in 0..cfg.seeds as u64 {
            sums.push(run_one(&cfg, cfg.seed0 + i, None)?.summary);
        }
        let agg = aggregate(&sums);
        cache.insert(profile.to_string(), (agg, sums));
    }
    Ok(&cache[profile])
}
