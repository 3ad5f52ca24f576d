//! Seed derivation. Every random process in a run owns a private generator
//! seeded from (run seed, domain tag), so the draw sequence one component
//! sees never depends on how many draws another component made.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// splitmix64 finalizer; decorrelates structured (seed, tag) pairs.
pub fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, tag: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(mix(seed, tag))
}

/// Domain tags. Keep values stable: they are part of run reproducibility.
pub mod tag {
    pub const PLACEMENT: u64 = 0x01;
    pub const TRAFFIC: u64 = 0x02;
    pub const PAYLOAD: u64 = 0x03;
    /// Hotspot redirect draws, separate from the destination draws so a
    /// zero redirect fraction reproduces the uniform pattern exactly.
    pub const HOTSPOT: u64 = 0x04;
    /// Base for per-channel-direction transient streams; add the directed
    /// channel id.
    pub const CHANNEL: u64 = 0x1_0000;
    /// Base for per-router pipeline upset streams; add the router index.
    pub const STAGE: u64 = 0x2_0000;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn same_inputs_same_stream() {
        let mut a = stream(42, tag::STAGE + 3);
        let mut b = stream(42, tag::STAGE + 3);
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn neighbor_tags_decorrelate() {
        let mut a = stream(42, tag::CHANNEL);
        let mut b = stream(42, tag::CHANNEL + 1);
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
