//! Lookahead adaptive routing over the 3D mesh.
//!
//! A router computes the output port its *neighbour* will use, so each flit
//! arrives carrying a precomputed port. Selection prefers minimal directions,
//! breaks ties by downstream path diversity, then by congestion, then by a
//! fixed port order; when every minimal direction is unusable it falls back
//! to a detour.

use crate::coord::{Coord3, Dims, Port, DIRECTIONS, TIE_BREAK};
use serde::{Deserialize, Serialize};

/// Per-node, per-direction channel fault flags. Boundary ports count as
/// unusable without being stored.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FaultMap {
    dims: Dims,
    flags: Vec<[bool; 6]>,
}

impl FaultMap {
    pub fn new(dims: Dims) -> Self {
        FaultMap {
            dims,
            flags: vec![[false; 6]; dims.nodes()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Mark the channel leaving `node` through `dir` faulty, in both
    /// directions.
    pub fn mark_channel(&mut self, node: Coord3, dir: Port) {
        let neighbour = dir
            .step(node, &self.dims)
            .expect("marking a boundary port is meaningless");
        self.flags[self.dims.index(node)][dir.index()] = true;
        self.flags[self.dims.index(neighbour)][dir.opposite().index()] = true;
    }

    pub fn is_faulty(&self, node: Coord3, dir: Port) -> bool {
        self.flags[self.dims.index(node)][dir.index()]
    }

    /// A direction is usable when it stays inside the mesh and is not
    /// flagged.
    pub fn is_usable(&self, node: Coord3, dir: Port) -> bool {
        dir.step(node, &self.dims).is_some() && !self.is_faulty(node, dir)
    }

    pub fn faulty_channel_count(&self) -> usize {
        // Each faulty channel is flagged at both ends.
        self.flags.iter().flatten().filter(|&&f| f).count() / 2
    }

    /// One line per node with faults: `z y x : E W ...`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in self.dims.iter() {
            let ports: Vec<String> = DIRECTIONS
                .iter()
                .filter(|d| self.is_faulty(c, **d))
                .map(|d| d.to_string())
                .collect();
            if !ports.is_empty() {
                out.push_str(&format!("{} {} {} : {}\n", c.z, c.y, c.x, ports.join(" ")));
            }
        }
        out
    }

    pub fn from_text(dims: Dims, text: &str) -> Result<Self, String> {
        let mut map = FaultMap::new(dims);
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (coords, ports) = line
                .split_once(':')
                .ok_or_else(|| format!("line {}: missing ':'", ln + 1))?;
            let nums: Vec<u8> = coords
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| format!("line {}: bad coordinate", ln + 1)))
                .collect::<Result<_, _>>()?;
            let [z, y, x] = nums[..] else {
                return Err(format!("line {}: expected z y x", ln + 1));
            };
            let node = Coord3::new(x, y, z);
            if !dims.contains(node) {
                return Err(format!("line {}: node outside mesh", ln + 1));
            }
            for tok in ports.split_whitespace() {
                let dir = DIRECTIONS
                    .iter()
                    .find(|d| d.to_string() == tok)
                    .ok_or_else(|| format!("line {}: unknown port {tok}", ln + 1))?;
                // Symmetric flag; only accept ports with a neighbour.
                if dir.step(node, &dims).is_none() {
                    return Err(format!("line {}: port {tok} is a boundary", ln + 1));
                }
                map.mark_channel(node, *dir);
            }
        }
        Ok(map)
    }
}

/// Buffer occupancy seen one hop downstream, used as the congestion
/// tie-breaker. Implementations report last-cycle values.
pub trait CongestionView {
    /// Occupied slots in the input buffer at the far end of `node`'s `dir`
    /// channel.
    fn occupancy(&self, node: Coord3, dir: Port) -> u8;
}

/// All-zero congestion, for tests and schedule precomputation.
pub struct NoCongestion;

impl CongestionView for NoCongestion {
    fn occupancy(&self, _: Coord3, _: Port) -> u8 {
        0
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RouteDecision {
    Forward(Port),
    /// The routed node is the destination; eject through Local.
    Deliver,
    /// Every usable direction is exhausted; the packet must be dropped.
    Unroutable,
}

/// Neighbour of `cur` through `port`. Panics on boundary misuse; callers
/// validate ports before stepping.
pub fn next_node(cur: Coord3, port: Port, dims: &Dims) -> Coord3 {
    port.step(cur, dims)
        .unwrap_or_else(|| panic!("port {port} leaves the mesh at {cur}"))
}

/// Minimal directions from `node` toward `dest`, in tie-break order.
/// At most three (one per axis); empty when already there. Directions that
/// would leave the mesh (possible only with corrupted destinations) are
/// dropped.
pub fn possible_directions(node: Coord3, dest: Coord3, dims: &Dims) -> Vec<Port> {
    TIE_BREAK
        .iter()
        .copied()
        .filter(|d| is_minimal(node, dest, *d) && d.step(node, dims).is_some())
        .collect()
}

fn is_minimal(node: Coord3, dest: Coord3, dir: Port) -> bool {
    match dir {
        Port::East => dest.x > node.x,
        Port::West => dest.x < node.x,
        Port::North => dest.y > node.y,
        Port::South => dest.y < node.y,
        Port::Up => dest.z > node.z,
        Port::Down => dest.z < node.z,
        Port::Local => false,
    }
}

/// Usable minimal directions one hop past `candidate`: the score a candidate
/// contributes when competing for selection at `node`.
pub fn path_diversity(node: Coord3, dest: Coord3, candidate: Port, faults: &FaultMap) -> u32 {
    let reached = next_node(node, candidate, &faults.dims());
    possible_directions(reached, dest, &faults.dims())
        .into_iter()
        .filter(|d| faults.is_usable(reached, *d))
        .count() as u32
}

/// Route for `node`: the port a flit arriving there (via `arrival`, if any)
/// should take toward `dest`.
pub fn route(
    node: Coord3,
    arrival: Option<Port>,
    dest: Coord3,
    faults: &FaultMap,
    congestion: &dyn CongestionView,
) -> RouteDecision {
    if node == dest {
        return RouteDecision::Deliver;
    }
    let dims = faults.dims();
    let minimal: Vec<Port> = possible_directions(node, dest, &dims)
        .into_iter()
        .filter(|d| faults.is_usable(node, *d))
        .collect();
    match minimal.len() {
        0 => fallback(node, arrival, dest, faults, congestion),
        1 => RouteDecision::Forward(minimal[0]),
        _ => {
            let mut best = minimal[0];
            let mut best_key = (
                u32::MAX - path_diversity(node, dest, best, faults),
                congestion.occupancy(node, best),
            );
            for &d in &minimal[1..] {
                let key = (
                    u32::MAX - path_diversity(node, dest, d, faults),
                    congestion.occupancy(node, d),
                );
                if key < best_key {
                    best = d;
                    best_key = key;
                }
            }
            RouteDecision::Forward(best)
        }
    }
}

/// Detour selection when no minimal direction is usable: smallest distance
/// increase, then congestion, then port order. The arrival port is a last
/// resort only.
fn fallback(
    node: Coord3,
    arrival: Option<Port>,
    dest: Coord3,
    faults: &FaultMap,
    congestion: &dyn CongestionView,
) -> RouteDecision {
    let dims = faults.dims();
    let usable: Vec<Port> = TIE_BREAK
        .iter()
        .copied()
        .filter(|d| faults.is_usable(node, *d))
        .collect();
    if usable.is_empty() {
        return RouteDecision::Unroutable;
    }
    let candidates: Vec<Port> = match arrival {
        Some(a) if usable.len() > 1 => usable.into_iter().filter(|d| *d != a).collect(),
        _ => usable,
    };
    let dist = node.manhattan(dest);
    let mut best = candidates[0];
    let mut best_key = fallback_key(node, dest, dist, best, congestion, &dims);
    for &d in &candidates[1..] {
        let key = fallback_key(node, dest, dist, d, congestion, &dims);
        if key < best_key {
            best = d;
            best_key = key;
        }
    }
    RouteDecision::Forward(best)
}

fn fallback_key(
    node: Coord3,
    dest: Coord3,
    dist: u32,
    dir: Port,
    congestion: &dyn CongestionView,
    dims: &Dims,
) -> (i64, u8) {
    let increase = next_node(node, dir, dims).manhattan(dest) as i64 - dist as i64;
    (increase, congestion.occupancy(node, dir))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims443() -> Dims {
        Dims::new(1, 4, 4) // z=1: Up/Down are boundaries
    }

    #[test]
    fn next_node_steps_east() {
        let d = Dims::new(3, 3, 3);
        assert_eq!(
            next_node(Coord3::new(1, 2, 0), Port::East, &d),
            Coord3::new(2, 2, 0)
        );
    }

    #[test]
    #[should_panic]
    fn next_node_rejects_boundary() {
        let d = Dims::new(3, 3, 3);
        next_node(Coord3::new(0, 0, 0), Port::West, &d);
    }

    #[test]
    fn minimal_directions() {
        let d = Dims::new(1, 3, 3);
        assert_eq!(
            possible_directions(Coord3::new(0, 0, 0), Coord3::new(2, 1, 0), &d),
            vec![Port::East, Port::North]
        );
        assert!(possible_directions(Coord3::new(2, 1, 0), Coord3::new(2, 1, 0), &d).is_empty());
    }

    #[test]
    fn diversity_counts_usable_continuations() {
        let faults = FaultMap::new(dims443());
        assert_eq!(
            path_diversity(Coord3::new(0, 0, 0), Coord3::new(3, 3, 0), Port::East, &faults),
            2
        );
    }

    #[test]
    fn single_usable_minimal_wins() {
        let mut faults = FaultMap::new(dims443());
        faults.mark_channel(Coord3::new(1, 1, 0), Port::East);
        let got = route(
            Coord3::new(1, 1, 0),
            Some(Port::West),
            Coord3::new(3, 3, 0),
            &faults,
            &NoCongestion,
        );
        assert_eq!(got, RouteDecision::Forward(Port::North));
    }

    #[test]
    fn tie_breaks_to_port_order() {
        let faults = FaultMap::new(dims443());
        let got = route(
            Coord3::new(1, 1, 0),
            Some(Port::West),
            Coord3::new(3, 3, 0),
            &faults,
            &NoCongestion,
        );
        assert_eq!(got, RouteDecision::Forward(Port::East));
    }

    #[test]
    fn congestion_breaks_diversity_ties() {
        struct Biased;
        impl CongestionView for Biased {
            fn occupancy(&self, _: Coord3, dir: Port) -> u8 {
                if dir == Port::East {
                    3
                } else {
                    0
                }
            }
        }
        let faults = FaultMap::new(dims443());
        let got = route(
            Coord3::new(1, 1, 0),
            Some(Port::West),
            Coord3::new(3, 3, 0),
            &faults,
            &Biased,
        );
        assert_eq!(got, RouteDecision::Forward(Port::North));
    }

    #[test]
    fn fallback_detours_in_port_order() {
        let mut faults = FaultMap::new(dims443());
        faults.mark_channel(Coord3::new(1, 0, 0), Port::East);
        let got = route(
            Coord3::new(1, 0, 0),
            Some(Port::West),
            Coord3::new(3, 0, 0),
            &faults,
            &NoCongestion,
        );
        // Minimal (East) is faulty; detours N and W both add one hop, North
        // comes first in port order and West is the arrival port anyway.
        assert_eq!(got, RouteDecision::Forward(Port::North));
    }

    #[test]
    fn arrival_port_is_last_resort() {
        let mut faults = FaultMap::new(dims443());
        // Strand (3,0,0): only West remains usable.
        faults.mark_channel(Coord3::new(3, 0, 0), Port::North);
        let got = route(
            Coord3::new(3, 0, 0),
            Some(Port::West),
            Coord3::new(0, 3, 0),
            &faults,
            &NoCongestion,
        );
        assert_eq!(got, RouteDecision::Forward(Port::West));
    }

    #[test]
    fn all_ports_faulty_is_unroutable() {
        let mut faults = FaultMap::new(dims443());
        faults.mark_channel(Coord3::new(3, 0, 0), Port::North);
        faults.mark_channel(Coord3::new(3, 0, 0), Port::West);
        let got = route(
            Coord3::new(3, 0, 0),
            Some(Port::West),
            Coord3::new(0, 3, 0),
            &faults,
            &NoCongestion,
        );
        assert_eq!(got, RouteDecision::Unroutable);
    }

    #[test]
    fn deliver_at_destination() {
        let faults = FaultMap::new(dims443());
        let got = route(
            Coord3::new(2, 2, 0),
            Some(Port::South),
            Coord3::new(2, 2, 0),
            &faults,
            &NoCongestion,
        );
        assert_eq!(got, RouteDecision::Deliver);
    }

    #[test]
    fn fault_map_text_roundtrip() {
        let mut faults = FaultMap::new(Dims::new(2, 3, 3));
        faults.mark_channel(Coord3::new(0, 0, 0), Port::East);
        faults.mark_channel(Coord3::new(1, 2, 1), Port::Down);
        let text = faults.to_text();
        let back = FaultMap::from_text(Dims::new(2, 3, 3), &text).unwrap();
        for c in faults.dims().iter() {
            for d in DIRECTIONS {
                assert_eq!(faults.is_faulty(c, d), back.is_faulty(c, d), "{c} {d}");
            }
        }
    }
}
