//! Seeded permanent-fault placement over the three hardware site classes:
//! buffer slots, crossbar base links, and inter-router channels.
//!
//! A planted fault forces two distinct wire bits to fixed values. One stuck
//! bit alone would be silently repaired by the per-hop SEC-DED decode and
//! could never surface as a retransmission, so two bits is the minimal
//! model that makes permanent faults observable to the protection stack.
//!
//! Plans serialize with their explicit placements, so a run can be replayed
//! from the file even if the generator evolves.

use crate::coord::{Coord3, Dims, Port, DIRECTIONS, PORT_COUNT};
use crate::rng::{self, tag};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stuck2 {
    pub bits: [u8; 2],
    pub vals: [bool; 2],
}

impl Stuck2 {
    pub fn apply(&self, word: u64) -> u64 {
        let mut w = word;
        for k in 0..2 {
            let mask = 1u64 << self.bits[k];
            if self.vals[k] {
                w |= mask;
            } else {
                w &= !mask;
            }
        }
        w
    }
}

/// One router-to-router channel. `a_dir` points from `a` to `b`; directed
/// halves are numbered 0 = a-to-b, 1 = b-to-a.
#[derive(Clone, Copy, Debug)]
pub struct ChannelDef {
    pub a: usize,
    pub a_dir: Port,
    pub b: usize,
}

/// All channels in a fixed order: node-index major, then East, North, Up.
pub fn enumerate_channels(dims: &Dims) -> Vec<ChannelDef> {
    let mut out = Vec::new();
    for idx in 0..dims.nodes() {
        let c = dims.coord(idx);
        for dir in [Port::East, Port::North, Port::Up] {
            if let Some(n) = dir.step(c, dims) {
                out.push(ChannelDef { a: idx, a_dir: dir, b: dims.index(n) });
            }
        }
    }
    out
}

/// Per-node, per-direction lookup: (channel index, directed half this node
/// transmits on).
pub fn channel_lookup(dims: &Dims, chans: &[ChannelDef]) -> Vec<[Option<(usize, usize)>; 6]> {
    let mut map = vec![[None; 6]; dims.nodes()];
    for (ci, ch) in chans.iter().enumerate() {
        map[ch.a][ch.a_dir.index()] = Some((ci, 0));
        map[ch.b][ch.a_dir.opposite().index()] = Some((ci, 1));
    }
    map
}

/// Ports that physically exist at a node: mesh directions with a neighbor,
/// plus Local.
pub fn usable_ports(dims: &Dims, c: Coord3) -> Vec<Port> {
    let mut v: Vec<Port> = DIRECTIONS.iter().copied().filter(|d| d.step(c, dims).is_some()).collect();
    v.push(Port::Local);
    v
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FaultPlan {
    pub seed: u64,
    pub hard_rate: f64,
    pub dims: Dims,
    pub depth: usize,
    /// Which redraw passed validation (0 when the first draw was accepted).
    pub attempt: u32,
    /// [node][port][slot]
    slots: Vec<Vec<Vec<Option<Stuck2>>>>,
    /// [node][input][output]
    links: Vec<Vec<Vec<Option<Stuck2>>>>,
    /// Indexed like [`enumerate_channels`].
    channels: Vec<Option<Stuck2>>,
}

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("no connected fault placement found in {0} attempts at rate {1}")]
    Disconnected(u32, f64),
}

const MAX_ATTEMPTS: u32 = 1000;

impl FaultPlan {
    pub fn empty(dims: Dims, depth: usize) -> FaultPlan {
        FaultPlan {
            seed: 0,
            hard_rate: 0.0,
            dims,
            depth,
            attempt: 0,
            slots: vec![vec![vec![None; depth]; PORT_COUNT]; dims.nodes()],
            links: vec![vec![vec![None; PORT_COUNT]; PORT_COUNT]; dims.nodes()],
            channels: vec![None; enumerate_channels(&dims).len()],
        }
    }

    /// Draw a placement. In strict mode, redraw (from a derived sub-seed)
    /// until the healthy-channel graph stays connected and every node can
    /// still inject and receive.
    pub fn generate(
        dims: Dims,
        depth: usize,
        hard_rate: f64,
        seed: u64,
        strict: bool,
    ) -> Result<FaultPlan, PlanError> {
        assert!((0.0..1.0).contains(&hard_rate));
        for attempt in 0..MAX_ATTEMPTS {
            let plan = Self::draw(dims, depth, hard_rate, seed, attempt);
            if !strict || plan.is_viable() {
                return Ok(plan);
            }
        }
        Err(PlanError::Disconnected(MAX_ATTEMPTS, hard_rate))
    }

    fn draw(dims: Dims, depth: usize, hard_rate: f64, seed: u64, attempt: u32) -> FaultPlan {
        let mut rng = rng::stream(seed, tag::PLACEMENT + ((attempt as u64) << 32));
        let mut plan = FaultPlan::empty(dims, depth);
        plan.seed = seed;
        plan.hard_rate = hard_rate;
        plan.attempt = attempt;
        let site = |rng: &mut rand_chacha::ChaCha12Rng| -> Option<Stuck2> {
            if rng.gen::<f64>() < hard_rate {
                let b1 = rng.gen_range(0..44u8);
                let mut b2 = rng.gen_range(0..43u8);
                if b2 >= b1 {
                    b2 += 1;
                }
                Some(Stuck2 { bits: [b1, b2], vals: [rng.gen(), rng.gen()] })
            } else {
                None
            }
        };
        for idx in 0..dims.nodes() {
            let c = dims.coord(idx);
            let ports = usable_ports(&dims, c);
            for p in &ports {
                for s in 0..depth {
                    plan.slots[idx][p.index()][s] = site(&mut rng);
                }
            }
            for i in &ports {
                for o in &ports {
                    plan.links[idx][i.index()][o.index()] = site(&mut rng);
                }
            }
        }
        for ch in 0..plan.channels.len() {
            plan.channels[ch] = site(&mut rng);
        }
        plan
    }

    pub fn slot_fault(&self, node: usize, port: usize, slot: usize) -> Option<&Stuck2> {
        self.slots[node][port][slot].as_ref()
    }

    pub fn link_fault(&self, node: usize, input: usize, output: usize) -> Option<&Stuck2> {
        self.links[node][input][output].as_ref()
    }

    pub fn channel_fault(&self, chan: usize) -> Option<&Stuck2> {
        self.channels[chan].as_ref()
    }

    pub fn set_slot_fault(&mut self, node: usize, port: usize, slot: usize, f: Stuck2) {
        self.slots[node][port][slot] = Some(f);
    }

    pub fn set_link_fault(&mut self, node: usize, input: usize, output: usize, f: Stuck2) {
        self.links[node][input][output] = Some(f);
    }

    pub fn set_channel_fault(&mut self, chan: usize, f: Stuck2) {
        self.channels[chan] = Some(f);
    }

    pub fn healthy_slots(&self, node: usize, port: usize) -> usize {
        (0..self.depth).filter(|&s| self.slots[node][port][s].is_none()).count()
    }

    /// Connected over healthy channels, with every endpoint buffer usable
    /// and every node able to inject locally.
    pub fn is_viable(&self) -> bool {
        let dims = self.dims;
        let n = dims.nodes();
        for idx in 0..n {
            if self.healthy_slots(idx, Port::Local.index()) == 0 {
                return false;
            }
        }
        if n == 1 {
            return true;
        }
        let chans = enumerate_channels(&dims);
        let mut adj = vec![Vec::new(); n];
        for (ci, ch) in chans.iter().enumerate() {
            if self.channel_usable(ci, ch) {
                adj[ch.a].push(ch.b);
                adj[ch.b].push(ch.a);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == n
    }

    /// A channel is usable when its wire is healthy and both receiving
    /// buffers retain at least one healthy slot.
    pub fn channel_usable(&self, ci: usize, ch: &ChannelDef) -> bool {
        self.channels[ci].is_none()
            && self.healthy_slots(ch.b, ch.a_dir.opposite().index()) > 0
            && self.healthy_slots(ch.a, ch.a_dir.index()) > 0
    }

    /// (faulty, total) over all sites, for rate calibration checks.
    pub fn site_stats(&self) -> (usize, usize) {
        let dims = self.dims;
        let mut faulty = 0;
        let mut total = 0;
        for idx in 0..dims.nodes() {
            let ports = usable_ports(&dims, dims.coord(idx));
            for p in &ports {
                for s in 0..self.depth {
                    total += 1;
                    faulty += self.slots[idx][p.index()][s].is_some() as usize;
                }
            }
            for i in &ports {
                for o in &ports {
                    total += 1;
                    faulty += self.links[idx][i.index()][o.index()].is_some() as usize;
                }
            }
        }
        for c in &self.channels {
            total += 1;
            faulty += c.is_some() as usize;
        }
        (faulty, total)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<FaultPlan, serde_json::Error> {
        serde_json::from_str(text)
    }
}
