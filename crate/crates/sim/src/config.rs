//! Run configuration: a flat TOML file, command-line overrides on top, and
//! named reference profiles (`ref-<pattern>-<mode>-<rate>`) that pin the
//! reference workloads.

use std::fmt;
use std::path::PathBuf;

use noc::codec::EccMode;
use noc::coord::Dims;
use noc::network::NetConfig;
use noc::router::{CtMode, RouterConfig};
use noc::traffic::Pattern;
use serde::{Deserialize, Serialize};

/// Feature sets under test.
///
/// * `baseline`: no protection at all. Faults are present but unknown.
/// * `hard`: hard-fault tolerance. Faulty buffer slots are skipped, faulty
///   crossbar links detour over spares, faulty channels are routed around.
/// * `soft`: transient protection. Flit ECC, duplicated pipeline execution
///   with voting, and link-level retransmission.
/// * `full`: both of the above.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    Hard,
    Soft,
    Full,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Baseline => "baseline",
            Mode::Hard => "hard",
            Mode::Soft => "soft",
            Mode::Full => "full",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Mode, String> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "hard" => Ok(Mode::Hard),
            "soft" => Ok(Mode::Soft),
            "full" => Ok(Mode::Full),
            _ => Err(format!("mode `{s}`: use baseline|hard|soft|full")),
        }
    }
}

impl std::str::FromStr for Diagnosis {
    type Err = String;
    fn from_str(s: &str) -> Result<Diagnosis, String> {
        match s {
            "apriori" => Ok(Diagnosis::Apriori),
            "online" => Ok(Diagnosis::Online),
            _ => Err(format!("diagnosis `{s}`: use apriori|online")),
        }
    }
}

/// How hard faults become known to the routers.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnosis {
    /// Every planted fault is marked before cycle 0.
    Apriori,
    /// Faults are discovered at runtime from retransmission patterns.
    Online,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Workload {
    Synth(Pattern),
    TaskGraph { trace: PathBuf, mapping: PathBuf },
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub name: String,
    pub mesh: Dims,
    pub workload: Workload,
    pub mode: Mode,
    pub hard_rate: f64,
    pub soft_rate: f64,
    pub seeds: u32,
    pub seed0: u64,
    pub packet_len: usize,
    /// Packets per node for the synthetic patterns; None keeps the
    /// reference load (10 deterministic, 128 random).
    pub per_node: Option<usize>,
    pub ct_mode: Option<CtMode>,
    pub diagnosis: Diagnosis,
    pub bypass_count: usize,
    pub buffer_depth: usize,
    pub max_cycles: u64,
    pub patience: u64,
    pub census: bool,
}

/// The flat key-value file; every key optional so a file can say only what
/// it changes.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub profile: Option<String>,
    pub mesh: Option<String>,
    pub pattern: Option<String>,
    pub trace: Option<PathBuf>,
    pub mapping: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub hard_rate: Option<f64>,
    pub soft_rate: Option<f64>,
    pub seeds: Option<u32>,
    pub seed0: Option<u64>,
    pub packet_len: Option<usize>,
    pub per_node: Option<usize>,
    pub hotspot_fraction: Option<f64>,
    pub ct_mode: Option<String>,
    pub diagnosis: Option<Diagnosis>,
    pub bypass_count: Option<usize>,
    pub buffer_depth: Option<usize>,
    pub max_cycles: Option<u64>,
    pub patience: Option<u64>,
    pub census: Option<bool>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<FileConfig, String> {
        toml::from_str(text).map_err(|e| format!("config: {e}"))
    }
}

/// Reference mesh for a named pattern, z*y*x as conventionally quoted.
fn reference_mesh(pattern: &str) -> Option<Dims> {
    Some(match pattern {
        "transpose" | "uniform" | "hotspot" => Dims::new(4, 4, 4),
        "matrix" => Dims::new(3, 6, 6),
        "h264" => Dims::new(3, 3, 3),
        "vopd" => Dims::new(2, 2, 3),
        "mwd" => Dims::new(3, 2, 2),
        "pip" => Dims::new(2, 2, 2),
        _ => return None,
    })
}

const BENCH_DIR: &str = "data/taskgraphs";

fn parse_mesh(s: &str) -> Result<Dims, String> {
    let p: Vec<&str> = s.split('x').collect();
    if p.len() != 3 {
        return Err(format!("mesh `{s}`: expected ZxYxX like 4x4x4"));
    }
    let d = |i: usize| p[i].trim().parse::<u8>().map_err(|_| format!("mesh `{s}`: bad number"));
    let (z, y, x) = (d(0)?, d(1)?, d(2)?);
    if x == 0 || y == 0 || z == 0 {
        return Err(format!("mesh `{s}`: zero dimension"));
    }
    Ok(Dims::new(z, y, x))
}

fn parse_ct(s: &str) -> Result<CtMode, String> {
    match s {
        "speculative" => Ok(CtMode::Speculative),
        "conservative" => Ok(CtMode::Conservative),
        _ => Err(format!("ct_mode `{s}`: use speculative or conservative")),
    }
}

impl SimConfig {
    /// Build from a parsed file. `profile` in the file is expanded first and
    /// explicit keys override it.
    pub fn resolve(f: &FileConfig) -> Result<SimConfig, String> {
        let mut cfg = match &f.profile {
            Some(p) => SimConfig::profile(p)?,
            None => SimConfig::blank(),
        };
        if let Some(p) = &f.pattern {
            cfg.name = p.clone();
            cfg.workload = workload_for(p, f.hotspot_fraction, &f.trace, &f.mapping)?;
            if f.mesh.is_none() {
                cfg.mesh = reference_mesh(p)
                    .ok_or(format!("pattern `{p}` has no reference mesh; set mesh ="))?;
            }
        } else if let Some(frac) = f.hotspot_fraction {
            if let Workload::Synth(Pattern::Hotspot { fraction }) = &mut cfg.workload {
                *fraction = frac;
            }
        }
        if let Some(m) = &f.mesh {
            cfg.mesh = parse_mesh(m)?;
        }
        if let Some(m) = f.mode {
            cfg.mode = m;
        }
        if let Some(r) = f.hard_rate {
            cfg.hard_rate = r;
        }
        if let Some(r) = f.soft_rate {
            cfg.soft_rate = r;
        }
        if let Some(v) = f.seeds {
            cfg.seeds = v;
        }
        if let Some(v) = f.seed0 {
            cfg.seed0 = v;
        }
        if let Some(v) = f.packet_len {
            cfg.packet_len = v;
        }
        cfg.per_node = f.per_node.or(cfg.per_node);
        if let Some(s) = &f.ct_mode {
            cfg.ct_mode = Some(parse_ct(s)?);
        }
        if let Some(d) = f.diagnosis {
            cfg.diagnosis = d;
        }
        if let Some(v) = f.bypass_count {
            cfg.bypass_count = v;
        }
        if let Some(v) = f.buffer_depth {
            cfg.buffer_depth = v;
        }
        if let Some(v) = f.max_cycles {
            cfg.max_cycles = v;
        }
        if let Some(v) = f.patience {
            cfg.patience = v;
        }
        if let Some(v) = f.census {
            cfg.census = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn blank() -> SimConfig {
        SimConfig {
            name: "uniform".into(),
            mesh: Dims::new(4, 4, 4),
            workload: Workload::Synth(Pattern::Uniform),
            mode: Mode::Baseline,
            hard_rate: 0.0,
            soft_rate: 0.0,
            seeds: 1,
            seed0: 1000,
            packet_len: 10,
            per_node: None,
            ct_mode: None,
            diagnosis: Diagnosis::Apriori,
            bypass_count: 2,
            buffer_depth: 4,
            max_cycles: 1_000_000,
            patience: 10_000,
            census: false,
        }
    }

    /// `ref-<pattern>-<mode>-<rate>`: the reference workload for `pattern`
    /// with `mode`'s fault class injected at `rate` percent (hard modes get
    /// hard faults, soft gets transients, full gets both), 10 seeds.
    pub fn profile(name: &str) -> Result<SimConfig, String> {
        let short = name.strip_prefix("ref-").ok_or(format!("unknown profile `{name}`"))?;
        let mut it = short.rsplitn(3, '-');
        let rate: u32 = it
            .next()
            .and_then(|r| r.parse().ok())
            .ok_or(format!("profile `{name}`: trailing rate percent missing"))?;
        let mode = match it.next() {
            Some("baseline") => Mode::Baseline,
            Some("hard") => Mode::Hard,
            Some("soft") => Mode::Soft,
            Some("full") => Mode::Full,
            _ => return Err(format!("profile `{name}`: mode must be baseline|hard|soft|full")),
        };
        let pattern = it.next().ok_or(format!("profile `{name}`: pattern missing"))?;
        if rate > 50 {
            return Err(format!("profile `{name}`: rate {rate}% out of range"));
        }
        let r = rate as f64 / 100.0;
        let mut cfg = SimConfig::blank();
        cfg.name = pattern.to_string();
        cfg.workload = workload_for(pattern, None, &None, &None)?;
        cfg.mesh = reference_mesh(pattern).ok_or(format!("profile `{name}`: unknown pattern"))?;
        cfg.mode = mode;
        cfg.seeds = 10;
        match mode {
            Mode::Baseline | Mode::Hard => cfg.hard_rate = r,
            Mode::Soft => cfg.soft_rate = r,
            Mode::Full => {
                cfg.hard_rate = r;
                cfg.soft_rate = r;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.seeds == 0 {
            return Err("seeds must be at least 1".into());
        }
        if self.packet_len == 0 {
            return Err("packet_len must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.hard_rate) {
            return Err(format!("hard_rate {} outside [0,1)", self.hard_rate));
        }
        if !(0.0..1.0).contains(&self.soft_rate) {
            return Err(format!("soft_rate {} outside [0,1)", self.soft_rate));
        }
        if self.buffer_depth < 2 {
            return Err("buffer_depth must be at least 2".into());
        }
        match &self.workload {
            Workload::Synth(Pattern::Transpose) if self.mesh.x != self.mesh.z => {
                return Err("transpose needs mesh with x = z".into());
            }
            Workload::Synth(Pattern::Matrix) if self.mesh.x != self.mesh.y => {
                return Err("matrix needs square layers (x = y)".into());
            }
            Workload::Synth(Pattern::Hotspot { fraction }) => {
                if !(0.0..=1.0).contains(fraction) {
                    return Err(format!("hotspot_fraction {fraction} outside [0,1]"));
                }
            }
            _ => {}
        }
        if self.diagnosis == Diagnosis::Online && self.mode != Mode::Full {
            return Err("diagnosis = online needs mode = full (it works off \
                        retransmission nacks and drives the spare crossbar links)"
                .into());
        }
        Ok(())
    }

    /// The feature matrix: what each mode switches on.
    pub fn router_config(&self) -> RouterConfig {
        let mut r = RouterConfig {
            dims: self.mesh,
            buffer_depth: self.buffer_depth,
            bypass_count: self.bypass_count,
            soft_rate: self.soft_rate,
            ..RouterConfig::default()
        };
        match self.mode {
            Mode::Baseline => {}
            Mode::Hard => r.hard_ft = true,
            Mode::Soft => {
                r.ecc = EccMode::On;
                r.voting = true;
                r.arq = true;
            }
            Mode::Full => {
                r.hard_ft = true;
                r.ecc = EccMode::On;
                r.voting = true;
                r.arq = true;
            }
        }
        // Voting modes default to the conservative traversal point (commit
        // only after the second clean round); the plain pipeline has nothing
        // to wait for.
        r.ct_mode = self.ct_mode.unwrap_or(match self.mode {
            Mode::Soft | Mode::Full => CtMode::Conservative,
            _ => CtMode::Speculative,
        });
        r.online_diag = self.diagnosis == Diagnosis::Online;
        r
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            router: self.router_config(),
            apriori_marks: matches!(self.mode, Mode::Hard | Mode::Full)
                && self.diagnosis == Diagnosis::Apriori,
            census: self.census,
            max_cycles: self.max_cycles,
            patience: self.patience,
        }
    }

    pub fn ecc(&self) -> EccMode {
        self.router_config().ecc
    }
}

fn workload_for(
    pattern: &str,
    hotspot_fraction: Option<f64>,
    trace: &Option<PathBuf>,
    mapping: &Option<PathBuf>,
) -> Result<Workload, String> {
    Ok(match pattern {
        "transpose" => Workload::Synth(Pattern::Transpose),
        "uniform" => Workload::Synth(Pattern::Uniform),
        "hotspot" => {
            Workload::Synth(Pattern::Hotspot { fraction: hotspot_fraction.unwrap_or(0.10) })
        }
        "matrix" => Workload::Synth(Pattern::Matrix),
        "h264" | "vopd" | "mwd" | "pip" => Workload::TaskGraph {
            trace: format!("{BENCH_DIR}/{pattern}.trace").into(),
            mapping: format!("{BENCH_DIR}/{pattern}.map").into(),
        },
        "taskgraph" => {
            let t = trace.clone().ok_or("pattern taskgraph needs trace = <file>")?;
            let m = mapping.clone().ok_or("pattern taskgraph needs mapping = <file>")?;
            Workload::TaskGraph { trace: t, mapping: m }
        }
        _ => return Err(format!("unknown pattern `{pattern}`")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_expansion() {
        let c = SimConfig::profile("ref-transpose-hard-33").unwrap();
        assert_eq!(c.mesh, Dims::new(4, 4, 4));
        assert_eq!(c.mode, Mode::Hard);
        assert_eq!(c.hard_rate, 0.33);
        assert_eq!(c.soft_rate, 0.0);
        assert_eq!(c.seeds, 10);

        let c = SimConfig::profile("ref-uniform-soft-20").unwrap();
        assert_eq!(c.hard_rate, 0.0);
        assert_eq!(c.soft_rate, 0.20);

        let c = SimConfig::profile("ref-pip-full-10").unwrap();
        assert_eq!(c.mesh, Dims::new(2, 2, 2));
        assert_eq!(c.hard_rate, 0.10);
        assert_eq!(c.soft_rate, 0.10);
        assert!(matches!(c.workload, Workload::TaskGraph { .. }));
    }

    #[test]
    fn bad_profiles_name_the_problem() {
        assert!(SimConfig::profile("ref-transpose-hard").is_err());
        assert!(SimConfig::profile("ref-transpose-warp-10").is_err());
        assert!(SimConfig::profile("ref-nosuch-hard-10").is_err());
        assert!(SimConfig::profile("transpose-hard-10").is_err());
    }

    #[test]
    fn file_overrides_profile() {
        let f = FileConfig::parse(
            "profile = \"ref-uniform-full-33\"\nseeds = 2\nct_mode = \"speculative\"\n",
        )
        .unwrap();
        let c = SimConfig::resolve(&f).unwrap();
        assert_eq!(c.seeds, 2);
        assert_eq!(c.ct_mode, Some(CtMode::Speculative));
        assert_eq!(c.hard_rate, 0.33);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = FileConfig::parse("mesh = \"4x4x4\"\ntypo_key = 3\n").unwrap_err();
        assert!(e.contains("typo_key"), "{e}");
    }

    #[test]
    fn mode_matrix() {
        let mut c = SimConfig::blank();
        c.mode = Mode::Baseline;
        let r = c.router_config();
        assert!(!r.hard_ft && !r.voting && !r.arq);
        assert_eq!(r.ecc, EccMode::Off);
        assert_eq!(r.ct_mode, CtMode::Speculative);

        c.mode = Mode::Full;
        let r = c.router_config();
        assert!(r.hard_ft && r.voting && r.arq);
        assert_eq!(r.ecc, EccMode::On);
        assert_eq!(r.ct_mode, CtMode::Conservative);
        assert!(c.net_config().apriori_marks);
    }

    #[test]
    fn validation_rejects_misfits() {
        let mut c = SimConfig::blank();
        c.workload = Workload::Synth(Pattern::Transpose);
        c.mesh = Dims::new(2, 4, 4);
        assert!(c.validate().is_err(), "transpose x!=z");

        let mut c = SimConfig::blank();
        c.diagnosis = Diagnosis::Online;
        assert!(c.validate().is_err(), "online diag without full mode");

        let mut c = SimConfig::blank();
        c.hard_rate = 1.0;
        assert!(c.validate().is_err(), "rate 1.0");
    }
}
