//! Traffic generation: the synthetic patterns and the task-graph loader.
//!
//! Every schedule is a pure function of (spec, seed). All packets of a node
//! enter an unbounded source queue at cycle 0 and drain whenever the local
//! port accepts, so measured latency is network-limited, not pacing-limited.
//! Destination draws come from the `TRAFFIC` stream and payload bytes from
//! the `PAYLOAD` stream, so changing the packet length never moves anyone's
//! destinations.

use rand::{Rng, RngCore};

use crate::codec::{self, EccMode};
use crate::coord::{Coord3, Dims, Port};
use crate::rng::{stream, tag};
use crate::router::SourcePacket;

/// Default packet length in flits.
pub const PACKET_LEN: usize = 10;
/// Hotspot-bound packets carry one extra flit (10 plus 10 percent, rounded
/// up).
pub const HOTSPOT_LEN: usize = 11;
/// Reference load for the random patterns, packets per node.
pub const UNIFORM_PER_NODE: usize = 128;
/// Reference load for transpose, packets per node.
pub const TRANSPOSE_PER_NODE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pattern {
    /// (x,y,z) sends to (z,y,x); fixed points are skipped.
    Transpose,
    /// Independent uniform random non-self destination per packet.
    Uniform,
    /// Uniform, but each packet is redirected to a random hotspot with this
    /// probability. Hotspot-bound packets are one flit longer.
    Hotspot { fraction: f64 },
    /// Every node sends one packet to each same-row and same-column peer in
    /// its own layer (operand exchange of an n-by-n multiply per layer).
    Matrix,
}

#[derive(Clone, Copy, Debug)]
pub struct SynthSpec {
    pub pattern: Pattern,
    pub per_node: usize,
    pub packet_len: usize,
    pub hotspot_len: usize,
}

impl SynthSpec {
    /// The reference workload for a pattern: 10 packets per node for the
    /// deterministic patterns, 128 for the random ones, 10-flit packets.
    pub fn reference(pattern: Pattern) -> SynthSpec {
        let per_node = match pattern {
            Pattern::Transpose | Pattern::Matrix => TRANSPOSE_PER_NODE,
            Pattern::Uniform | Pattern::Hotspot { .. } => UNIFORM_PER_NODE,
        };
        SynthSpec { pattern, per_node, packet_len: PACKET_LEN, hotspot_len: HOTSPOT_LEN }
    }
}

/// A fully encoded injection schedule. `packets` pairs each source node
/// index with its queued packet; pids are dense in emission order, so a
/// node's queue order equals its pid order.
pub struct Schedule {
    pub packets: Vec<(usize, SourcePacket)>,
    /// Transpose fixed points (and other self-sends) that were skipped.
    pub skipped_self: usize,
    pub total_flits: u64,
}

impl Schedule {
    fn new() -> Schedule {
        Schedule { packets: Vec::new(), skipped_self: 0, total_flits: 0 }
    }

    fn push(&mut self, src: usize, dest: Coord3, len: usize, ecc: EccMode, payload: &mut impl RngCore) {
        let pid = self.packets.len() as u32;
        let bits = len * ecc.payload_bits() as usize;
        let mut bytes = vec![0u8; bits.div_ceil(8)];
        payload.fill_bytes(&mut bytes);
        let words = codec::packetize(dest, Port::Local, len, &bytes, bits, ecc);
        self.total_flits += len as u64;
        self.packets.push((src, SourcePacket { pid, dest, release: 0, words, next_flit: 0 }));
    }
}

/// Hotspot destinations: the centre of each z-layer.
pub fn hotspot_nodes(dims: Dims) -> Vec<Coord3> {
    (0..dims.z).map(|z| Coord3::new(dims.x / 2, dims.y / 2, z)).collect()
}

pub fn generate(spec: &SynthSpec, dims: Dims, seed: u64, ecc: EccMode) -> Schedule {
    let mut sched = Schedule::new();
    let mut traffic = stream(seed, tag::TRAFFIC);
    let mut payload = stream(seed, tag::PAYLOAD);
    let nodes = dims.nodes();
    match spec.pattern {
        Pattern::Transpose => {
            assert_eq!(dims.x, dims.z, "transpose swaps x and z");
            for src in 0..nodes {
                let c = dims.coord(src);
                let dest = Coord3::new(c.z, c.y, c.x);
                if dest == c {
                    sched.skipped_self += spec.per_node;
                    continue;
                }
                for _ in 0..spec.per_node {
                    sched.push(src, dest, spec.packet_len, ecc, &mut payload);
                }
            }
        }
        Pattern::Uniform => {
            if nodes > 1 {
                for src in 0..nodes {
                    for _ in 0..spec.per_node {
                        let dest = dims.coord(other_node(&mut traffic, nodes, src));
                        sched.push(src, dest, spec.packet_len, ecc, &mut payload);
                    }
                }
            }
        }
        Pattern::Hotspot { fraction } => {
            let hot = hotspot_nodes(dims);
            let mut coin = stream(seed, tag::HOTSPOT);
            if nodes > 1 {
                for src in 0..nodes {
                    let here = dims.coord(src);
                    for _ in 0..spec.per_node {
                        let uniform = dims.coord(other_node(&mut traffic, nodes, src));
                        let redirect = coin.gen::<f64>() < fraction;
                        let (dest, len) = if redirect {
                            let h = hot[coin.gen_range(0..hot.len())];
                            if h == here {
                                // A hotspot node never self-sends; the packet
                                // keeps its uniform destination.
                                (uniform, spec.packet_len)
                            } else {
                                (h, spec.hotspot_len)
                            }
                        } else {
                            (uniform, spec.packet_len)
                        };
                        sched.push(src, dest, len, ecc, &mut payload);
                    }
                }
            }
        }
        Pattern::Matrix => {
            assert_eq!(dims.x, dims.y, "matrix layers must be square");
            let n = dims.x;
            for src in 0..nodes {
                let c = dims.coord(src);
                for k in 1..n {
                    let row = Coord3::new((c.x + k) % n, c.y, c.z);
                    sched.push(src, row, spec.packet_len, ecc, &mut payload);
                    let col = Coord3::new(c.x, (c.y + k) % n, c.z);
                    sched.push(src, col, spec.packet_len, ecc, &mut payload);
                }
            }
        }
    }
    sched
}

/// Uniform node index excluding `src`.
fn other_node(rng: &mut impl Rng, nodes: usize, src: usize) -> usize {
    let d = rng.gen_range(0..nodes - 1);
    if d >= src {
        d + 1
    } else {
        d
    }
}

// --- task graphs -----------------------------------------------------------

/// One communication record, already resolved to node indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub src: usize,
    pub dst: usize,
    pub packets: u32,
}

pub struct TaskGraph {
    pub records: Vec<TraceRecord>,
    pub total_packets: u64,
}

/// Parse a task placement (`task_id z y x` per line) and a trace
/// (`src_task dst_task packets` per line). Blank lines and `#` comments are
/// skipped; a `#` also starts a trailing comment.
pub fn load_taskgraph(mapping: &str, trace: &str, dims: Dims) -> Result<TaskGraph, String> {
    let mut node_of = std::collections::BTreeMap::new();
    for (ln, line) in data_lines(mapping) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(format!("mapping line {ln}: expected `task z y x`"));
        }
        let task: u32 = parse(f[0], ln, "task id")?;
        let z: u8 = parse(f[1], ln, "z")?;
        let y: u8 = parse(f[2], ln, "y")?;
        let x: u8 = parse(f[3], ln, "x")?;
        let c = Coord3::new(x, y, z);
        if !dims.contains(c) {
            return Err(format!("mapping line {ln}: task {task} at {c} is off-mesh"));
        }
        if node_of.insert(task, dims.index(c)).is_some() {
            return Err(format!("mapping line {ln}: task {task} placed twice"));
        }
    }
    if node_of.is_empty() {
        return Err("mapping is empty".into());
    }
    let mut records = Vec::new();
    let mut total = 0u64;
    for (ln, line) in data_lines(trace) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(format!("trace line {ln}: expected `src dst packets`"));
        }
        let s: u32 = parse(f[0], ln, "src task")?;
        let d: u32 = parse(f[1], ln, "dst task")?;
        let packets: u32 = parse(f[2], ln, "packet count")?;
        let src = *node_of.get(&s).ok_or(format!("trace line {ln}: unknown task {s}"))?;
        let dst = *node_of.get(&d).ok_or(format!("trace line {ln}: unknown task {d}"))?;
        if packets == 0 {
            return Err(format!("trace line {ln}: zero packet count"));
        }
        if src == dst {
            return Err(format!("trace line {ln}: tasks {s} and {d} share a node"));
        }
        records.push(TraceRecord { src, dst, packets });
        total += packets as u64;
    }
    if records.is_empty() {
        return Err("trace is empty".into());
    }
    Ok(TaskGraph { records, total_packets: total })
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap().trim();
        if l.is_empty() {
            None
        } else {
            Some((i + 1, l))
        }
    })
}

fn parse<T: std::str::FromStr>(s: &str, ln: usize, what: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("trace line {ln}: bad {what} `{s}`"))
}

/// Emit a task graph's packets. Each source node cycles round-robin over its
/// records, one packet per record per round, so no single record hogs the
/// front of a source queue.
pub fn schedule_taskgraph(tg: &TaskGraph, dims: Dims, len: usize, seed: u64, ecc: EccMode) -> Schedule {
    let mut sched = Schedule::new();
    let mut payload = stream(seed, tag::PAYLOAD);
    let mut by_src: Vec<Vec<(usize, u32)>> = vec![Vec::new(); dims.nodes()];
    for r in &tg.records {
        by_src[r.src].push((r.dst, r.packets));
    }
    for (src, mut recs) in by_src.into_iter().enumerate() {
        while !recs.is_empty() {
            recs.retain_mut(|(dst, left)| {
                sched.push(src, dims.coord(*dst), len, ecc, &mut payload);
                *left -= 1;
                *left > 0
            });
        }
    }
    sched
}
