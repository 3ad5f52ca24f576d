//! Mesh geometry: coordinates, dimensions and the seven router ports.

use serde::{Deserialize, Serialize};

/// Node position in the mesh. `x` runs east, `y` north, `z` up.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Coord3 {
    pub x: u8,
    pub y: u8,
    pub z: u8,
}

impl Coord3 {
    pub const fn new(x: u8, y: u8, z: u8) -> Self {
        Coord3 { x, y, z }
    }

    pub fn manhattan(self, other: Coord3) -> u32 {
        let d = |a: u8, b: u8| (a as i32 - b as i32).unsigned_abs();
        d(self.x, other.x) + d(self.y, other.y) + d(self.z, other.z)
    }
}

impl std::fmt::Display for Coord3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.z, self.y, self.x)
    }
}

/// Mesh dimensions, conventionally quoted z*y*x.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Dims {
    pub x: u8,
    pub y: u8,
    pub z: u8,
}

impl Dims {
    pub const fn new(z: u8, y: u8, x: u8) -> Self {
        Dims { x, y, z }
    }

    pub fn nodes(&self) -> usize {
        self.x as usize * self.y as usize * self.z as usize
    }

    pub fn contains(&self, c: Coord3) -> bool {
        c.x < self.x && c.y < self.y && c.z < self.z
    }

    /// Dense node index, x fastest.
    pub fn index(&self, c: Coord3) -> usize {
        debug_assert!(self.contains(c));
        (c.z as usize * self.y as usize + c.y as usize) * self.x as usize + c.x as usize
    }

    pub fn coord(&self, idx: usize) -> Coord3 {
        let x = (idx % self.x as usize) as u8;
        let y = ((idx / self.x as usize) % self.y as usize) as u8;
        let z = (idx / (self.x as usize * self.y as usize)) as u8;
        Coord3::new(x, y, z)
    }

    pub fn iter(&self) -> impl Iterator<Item = Coord3> + '_ {
        (0..self.nodes()).map(|i| self.coord(i))
    }

    /// Maximum hop count between any two nodes.
    pub fn diameter(&self) -> u32 {
        (self.x as u32 - 1) + (self.y as u32 - 1) + (self.z as u32 - 1)
    }
}

/// Router ports. Six mesh directions plus the local tile interface.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Port {
    East = 0,  // +x
    West = 1,  // -x
    North = 2, // +y
    South = 3, // -y
    Up = 4,    // +z
    Down = 5,  // -z
    Local = 6,
}

pub const PORT_COUNT: usize = 7;

/// All ports, index order.
pub const ALL_PORTS: [Port; 7] = [
    Port::East,
    Port::West,
    Port::North,
    Port::South,
    Port::Up,
    Port::Down,
    Port::Local,
];

/// The six channel directions.
pub const DIRECTIONS: [Port; 6] = [
    Port::East,
    Port::West,
    Port::North,
    Port::South,
    Port::Up,
    Port::Down,
];

/// Deterministic tie-break order used by the routing priority cascade.
pub const TIE_BREAK: [Port; 6] = [
    Port::East,
    Port::North,
    Port::Up,
    Port::West,
    Port::South,
    Port::Down,
];

impl Port {
    pub fn from_index(i: u8) -> Option<Port> {
        ALL_PORTS.get(i as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn opposite(self) -> Port {
        match self {
            Port::East => Port::West,
            Port::West => Port::East,
            Port::North => Port::South,
            Port::South => Port::North,
            Port::Up => Port::Down,
            Port::Down => Port::Up,
            Port::Local => Port::Local,
        }
    }

    /// Neighbour of `c` through this port, if it stays inside the mesh.
    /// `Local` maps to `c` itself.
    pub fn step(self, c: Coord3, dims: &Dims) -> Option<Coord3> {
        let (dx, dy, dz): (i16, i16, i16) = match self {
            Port::East => (1, 0, 0),
            Port::West => (-1, 0, 0),
            Port::North => (0, 1, 0),
            Port::South => (0, -1, 0),
            Port::Up => (0, 0, 1),
            Port::Down => (0, 0, -1),
            Port::Local => (0, 0, 0),
        };
        let nx = c.x as i16 + dx;
        let ny = c.y as i16 + dy;
        let nz = c.z as i16 + dz;
        if nx < 0 || ny < 0 || nz < 0 {
            return None;
        }
        let n = Coord3::new(nx as u8, ny as u8, nz as u8);
        dims.contains(n).then_some(n)
    }
}

impl std::fmt::Display for Port {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Port::East => "E",
            Port::West => "W",
            Port::North => "N",
            Port::South => "S",
            Port::Up => "U",
            Port::Down => "D",
            Port::Local => "L",
        };
        f.write_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip() {
        let dims = Dims::new(3, 4, 5);
        for i in 0..dims.nodes() {
            assert_eq!(dims.index(dims.coord(i)), i);
        }
    }

    #[test]
    fn step_interior_and_boundary() {
        let dims = Dims::new(2, 2, 2);
        let origin = Coord3::new(0, 0, 0);
        assert_eq!(Port::East.step(origin, &dims), Some(Coord3::new(1, 0, 0)));
        assert_eq!(Port::West.step(origin, &dims), None);
        assert_eq!(Port::Up.step(origin, &dims), Some(Coord3::new(0, 0, 1)));
        assert_eq!(Port::Down.step(origin, &dims), None);
        assert_eq!(Port::Local.step(origin, &dims), Some(origin));
    }

    #[test]
    fn opposite_is_involution() {
        for p in ALL_PORTS {
            assert_eq!(p.opposite().opposite(), p);
        }
    }

    #[test]
    fn manhattan_symmetry() {
        let a = Coord3::new(0, 3, 1);
        let b = Coord3::new(3, 0, 2);
        assert_eq!(a.manhattan(b), 7);
        assert_eq!(b.manhattan(a), 7);
    }
}
