//! Flit encoding: 44-bit words, optionally protected by two SEC-DED
//! Hamming (22,16) codes.
//!
//! Word layout, MSB first (bit 43 down to bit 0):
//!
//! ```text
//! [43:42] flit type   [41:39] next-port   [38:30] dest z,y,x (3b each)
//! ecc off:  [29:0]  payload (30 bits)
//! ecc on:   [29:12] payload (18 bits)  [11:6] parity half A  [5:0] parity half B
//! ```
//!
//! With ECC on, the 32 bits [43:12] form the protected data word; half A is
//! its upper 16 bits, half B the lower 16. Each half carries five Hamming
//! check bits plus an overall parity bit, so every one of the 44 wire bits is
//! covered: any single-bit error corrects, any double-bit error within one
//! half is detected as uncorrectable.

use crate::coord::{Coord3, Port};

pub const FLIT_BITS: u32 = 44;
pub const WORD_MASK: u64 = (1 << FLIT_BITS) - 1;

const TYPE_SHIFT: u32 = 42;
const PORT_SHIFT: u32 = 39;
const DEST_SHIFT: u32 = 30;
const HALF_A_SHIFT: u32 = 28; // protected data bits [43:28]
const HALF_B_SHIFT: u32 = 12; // protected data bits [27:12]
const PARITY_A_SHIFT: u32 = 6;
const PARITY_B_SHIFT: u32 = 0;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EccMode {
    Off,
    On,
}

impl EccMode {
    /// Payload bits carried per flit.
    pub fn payload_bits(self) -> u32 {
        match self {
            EccMode::Off => 30,
            EccMode::On => 18,
        }
    }

    pub fn payload_mask(self) -> u64 {
        (1u64 << self.payload_bits()) - 1
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
#[repr(u8)]
pub enum FlitType {
    Header = 0,
    Body = 1,
    Tail = 2,
    /// Single-flit packet: header and tail at once.
    Single = 3,
}

impl FlitType {
    pub fn from_bits(b: u8) -> FlitType {
        match b & 3 {
            0 => FlitType::Header,
            1 => FlitType::Body,
            2 => FlitType::Tail,
            _ => FlitType::Single,
        }
    }

    pub fn is_head(self) -> bool {
        matches!(self, FlitType::Header | FlitType::Single)
    }

    pub fn is_tail(self) -> bool {
        matches!(self, FlitType::Tail | FlitType::Single)
    }
}

/// Field view of a flit word. `next_port` is the raw 3-bit field; after
/// corruption it may name no valid port, which callers must tolerate.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct FlitFields {
    pub ftype: FlitType,
    pub next_port: u8,
    pub dest: Coord3,
    pub payload: u32,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DecodeOutcome {
    Clean,
    Corrected,
    Uncorrectable,
}

// --- SEC-DED (22,16): Hamming(21,16) plus an overall parity bit ------------

/// Hamming position of data bit i (LSB first). Positions 1,2,4,8,16 hold the
/// check bits; data fills the rest of 1..=21.
const DATA_POS: [u32; 16] = [3, 5, 6, 7, 9, 10, 11, 12, 13, 14, 15, 17, 18, 19, 20, 21];

fn pos_to_data_index(pos: u32) -> Option<u32> {
    DATA_POS.iter().position(|&p| p == pos).map(|i| i as u32)
}

/// Check-bit field for one 16-bit half: bits 0..=4 are the Hamming checks,
/// bit 5 the overall parity over data and checks.
pub fn encode_half(data: u16) -> u8 {
    let mut checks: u8 = 0;
    for (i, &pos) in DATA_POS.iter().enumerate() {
        if (data >> i) & 1 == 1 {
            checks ^= (pos & 0x1f) as u8;
        }
    }
    let total = (data.count_ones() + checks.count_ones()) & 1;
    checks | ((total as u8) << 5)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum HalfStatus {
    Clean,
    Corrected,
    Uncorrectable,
}

fn decode_half(data: u16, parity: u8) -> (u16, HalfStatus) {
    let expect = encode_half(data);
    let diff = parity ^ expect;
    let syndrome = (diff & 0x1f) as u32;
    // Overall parity across all 22 received bits. `diff` bit 5 covers the data
    // and the stored parity bit; the received check bits enter through the
    // syndrome weight, since `expect` was recomputed from received data.
    let odd = ((diff >> 5) as u32 ^ syndrome.count_ones()) & 1 == 1;
    match (syndrome, odd) {
        (0, false) => (data, HalfStatus::Clean),
        (0, true) => (data, HalfStatus::Corrected), // overall parity bit flipped
        (s, true) => {
            if s.is_power_of_two() && s <= 16 {
                (data, HalfStatus::Corrected) // a check bit flipped
            } else if let Some(i) = pos_to_data_index(s) {
                (data ^ (1 << i), HalfStatus::Corrected)
            } else {
                (data, HalfStatus::Uncorrectable)
            }
        }
        (_, false) => (data, HalfStatus::Uncorrectable), // even weight >= 2
    }
}

// --- flit level ------------------------------------------------------------

pub fn encode_flit(
    ftype: FlitType,
    next_port: Port,
    dest: Coord3,
    payload: u32,
    ecc: EccMode,
) -> u64 {
    debug_assert!(dest.x < 8 && dest.y < 8 && dest.z < 8, "dest field is 3 bits per axis");
    debug_assert_eq!(payload as u64 & !ecc.payload_mask(), 0, "payload overflows field");
    let dest_bits = ((dest.z as u64) << 6) | ((dest.y as u64) << 3) | dest.x as u64;
    let head = ((ftype as u64) << TYPE_SHIFT)
        | ((next_port.index() as u64) << PORT_SHIFT)
        | (dest_bits << DEST_SHIFT);
    match ecc {
        EccMode::Off => head | payload as u64,
        EccMode::On => {
            let word = head | ((payload as u64) << HALF_B_SHIFT);
            let half_a = ((word >> HALF_A_SHIFT) & 0xffff) as u16;
            let half_b = ((word >> HALF_B_SHIFT) & 0xffff) as u16;
            word | ((encode_half(half_a) as u64) << PARITY_A_SHIFT)
                | ((encode_half(half_b) as u64) << PARITY_B_SHIFT)
        }
    }
}

fn fields_from_word(word: u64, ecc: EccMode) -> FlitFields {
    let dest_bits = (word >> DEST_SHIFT) & 0x1ff;
    FlitFields {
        ftype: FlitType::from_bits(((word >> TYPE_SHIFT) & 3) as u8),
        next_port: ((word >> PORT_SHIFT) & 7) as u8,
        dest: Coord3::new(
            (dest_bits & 7) as u8,
            ((dest_bits >> 3) & 7) as u8,
            ((dest_bits >> 6) & 7) as u8,
        ),
        payload: match ecc {
            EccMode::Off => (word & ecc.payload_mask()) as u32,
            EccMode::On => ((word >> HALF_B_SHIFT) & ecc.payload_mask()) as u32,
        },
    }
}

/// Repair a received word in place. With ECC on, the returned word has
/// single-bit errors (including parity-bit errors) scrubbed; an uncorrectable
/// word, and any word with ECC off, comes back unchanged. Receivers store the
/// repaired word so errors do not accumulate across hops.
pub fn correct_flit(word: u64, ecc: EccMode) -> (u64, DecodeOutcome) {
    match ecc {
        EccMode::Off => (word, DecodeOutcome::Clean),
        EccMode::On => {
            let (a, sa) = decode_half(
                ((word >> HALF_A_SHIFT) & 0xffff) as u16,
                ((word >> PARITY_A_SHIFT) & 0x3f) as u8,
            );
            let (b, sb) = decode_half(
                ((word >> HALF_B_SHIFT) & 0xffff) as u16,
                ((word >> PARITY_B_SHIFT) & 0x3f) as u8,
            );
            let outcome = match (sa, sb) {
                (HalfStatus::Uncorrectable, _) | (_, HalfStatus::Uncorrectable) => {
                    DecodeOutcome::Uncorrectable
                }
                (HalfStatus::Clean, HalfStatus::Clean) => DecodeOutcome::Clean,
                _ => DecodeOutcome::Corrected,
            };
            if outcome == DecodeOutcome::Uncorrectable {
                return (word, outcome);
            }
            let data = (word & !(0xffff_ffffu64 << HALF_B_SHIFT))
                | ((a as u64) << HALF_A_SHIFT)
                | ((b as u64) << HALF_B_SHIFT);
            let scrubbed = (data & !0xfff)
                | ((encode_half(a) as u64) << PARITY_A_SHIFT)
                | ((encode_half(b) as u64) << PARITY_B_SHIFT);
            (scrubbed, outcome)
        }
    }
}

/// Decode a received word. With ECC on, single-bit errors are corrected and
/// the returned fields reflect the corrected word; uncorrectable words return
/// the raw fields (the caller is expected to discard them).
pub fn decode_flit(word: u64, ecc: EccMode) -> (FlitFields, DecodeOutcome) {
    let (repaired, outcome) = correct_flit(word, ecc);
    (fields_from_word(repaired, ecc), outcome)
}

/// Replace the next-port field without re-deriving parity from stored data.
///
/// The code is linear, so the parity adjustment depends only on the changed
/// bits. Any corruption already present in the word rides along untouched and
/// stays detectable downstream; a full re-encode would launder it.
pub fn rewrite_next_port(word: u64, new_port: Port, ecc: EccMode) -> u64 {
    rewrite_next_port_bits(word, new_port.index() as u8, ecc)
}

/// Raw-bits form of [`rewrite_next_port`], for committing a possibly corrupt
/// 3-bit value as-is (only the low three bits are used).
pub fn rewrite_next_port_bits(word: u64, bits: u8, ecc: EccMode) -> u64 {
    let old = ((word >> PORT_SHIFT) & 7) as u8;
    let delta = (old ^ (bits & 7)) as u64;
    if delta == 0 {
        return word;
    }
    match ecc {
        EccMode::Off => word ^ (delta << PORT_SHIFT),
        EccMode::On => {
            // Port bits sit in half A at offset PORT_SHIFT - HALF_A_SHIFT.
            let half_delta = (delta << (PORT_SHIFT - HALF_A_SHIFT)) as u16;
            word ^ (delta << PORT_SHIFT)
                ^ ((encode_half(half_delta) as u64) << PARITY_A_SHIFT)
        }
    }
}

/// Split a payload bit stream (MSB first within each byte) into encoded
/// flits. The first flit is a Header, the last a Tail; a one-flit packet is
/// marked Single. Missing payload bits pad with zeros.
pub fn packetize(
    dest: Coord3,
    first_port: Port,
    packet_len: usize,
    payload: &[u8],
    payload_bits: usize,
    ecc: EccMode,
) -> Vec<u64> {
    assert!(packet_len >= 1);
    assert!(payload_bits <= payload.len() * 8);
    let width = ecc.payload_bits() as usize;
    assert!(
        payload_bits <= packet_len * width,
        "payload does not fit in {packet_len} flits"
    );
    let bit = |i: usize| -> u32 {
        if i < payload_bits {
            ((payload[i / 8] >> (7 - i % 8)) & 1) as u32
        } else {
            0
        }
    };
    (0..packet_len)
        .map(|n| {
            let ftype = match (n == 0, n == packet_len - 1) {
                (true, true) => FlitType::Single,
                (true, false) => FlitType::Header,
                (false, true) => FlitType::Tail,
                (false, false) => FlitType::Body,
            };
            let mut chunk = 0u32;
            for k in 0..width {
                chunk = (chunk << 1) | bit(n * width + k);
            }
            encode_flit(ftype, first_port, dest, chunk, ecc)
        })
        .collect()
}

/// Inverse of [`packetize`]: reassemble the first `payload_bits` bits.
pub fn depacketize(flits: &[u64], payload_bits: usize, ecc: EccMode) -> Vec<u8> {
    let width = ecc.payload_bits() as usize;
    assert!(payload_bits <= flits.len() * width);
    let mut out = vec![0u8; payload_bits.div_ceil(8)];
    for i in 0..payload_bits {
        let (fields, _) = decode_flit(flits[i / width], ecc);
        let bit = (fields.payload >> (width - 1 - i % width)) & 1;
        out[i / 8] |= (bit as u8) << (7 - i % 8);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> u64 {
        encode_flit(
            FlitType::Header,
            Port::North,
            Coord3::new(3, 1, 2),
            0x2_aaaa & 0x3ffff,
            EccMode::On,
        )
    }

    #[test]
    fn all_zero_encodes_to_zero_parity() {
        let w = encode_flit(FlitType::Header, Port::East, Coord3::new(0, 0, 0), 0, EccMode::On);
        assert_eq!(w, 0, "zero data must produce zero checks in a linear code");
    }

    #[test]
    fn width_is_44_bits() {
        for ecc in [EccMode::Off, EccMode::On] {
            let w = encode_flit(
                FlitType::Single,
                Port::Down,
                Coord3::new(7, 7, 7),
                ecc.payload_mask() as u32,
                ecc,
            );
            assert_eq!(w & !WORD_MASK, 0);
        }
    }

    #[test]
    fn clean_roundtrip() {
        let w = sample();
        let (f, out) = decode_flit(w, EccMode::On);
        assert_eq!(out, DecodeOutcome::Clean);
        assert_eq!(f.ftype, FlitType::Header);
        assert_eq!(f.next_port, Port::North.index() as u8);
        assert_eq!(f.dest, Coord3::new(3, 1, 2));
    }

    #[test]
    fn every_single_flip_corrects() {
        let w = sample();
        let (orig, _) = decode_flit(w, EccMode::On);
        for bit in 0..FLIT_BITS {
            let (f, out) = decode_flit(w ^ (1 << bit), EccMode::On);
            assert_eq!(out, DecodeOutcome::Corrected, "bit {bit}");
            assert_eq!(f, orig, "bit {bit}");
        }
    }

    #[test]
    fn same_half_double_flip_detected() {
        let w = sample();
        // Half A spans wire bits 43:28 plus parity 11:6; half B 27:12 plus 5:0.
        let half_a: Vec<u32> = (28..44).chain(6..12).collect();
        for (i, &b1) in half_a.iter().enumerate() {
            for &b2 in &half_a[i + 1..] {
                let (_, out) = decode_flit(w ^ (1 << b1) ^ (1 << b2), EccMode::On);
                assert_eq!(out, DecodeOutcome::Uncorrectable, "bits {b1},{b2}");
            }
        }
    }

    #[test]
    fn cross_half_double_flip_corrects() {
        let w = sample();
        let (orig, _) = decode_flit(w, EccMode::On);
        for (a, b) in [(43u32, 12u32), (30, 27), (8, 3)] {
            let (f, out) = decode_flit(w ^ (1 << a) ^ (1 << b), EccMode::On);
            assert_eq!(out, DecodeOutcome::Corrected);
            assert_eq!(f, orig);
        }
    }

    #[test]
    fn rewrite_preserves_validity_and_existing_damage() {
        let w = sample();
        let rew = rewrite_next_port(w, Port::Down, EccMode::On);
        let (f, out) = decode_flit(rew, EccMode::On);
        assert_eq!(out, DecodeOutcome::Clean);
        assert_eq!(f.next_port, Port::Down.index() as u8);

        // A payload bit corrupted before the rewrite must still decode as an
        // error afterwards, not be re-encoded into a "valid" word.
        let damaged = w ^ (1 << 20);
        let rew = rewrite_next_port(damaged, Port::Down, EccMode::On);
        let (f, out) = decode_flit(rew, EccMode::On);
        assert_eq!(out, DecodeOutcome::Corrected);
        assert_eq!(f.payload, 0x2_aaaa & 0x3ffff);
        assert_eq!(f.next_port, Port::Down.index() as u8);
    }

    #[test]
    fn correct_flit_scrubs_any_single_flip_back_to_original() {
        let w = sample();
        for bit in 0..FLIT_BITS {
            let (repaired, out) = correct_flit(w ^ (1 << bit), EccMode::On);
            assert_eq!(out, DecodeOutcome::Corrected, "bit {bit}");
            assert_eq!(repaired, w, "bit {bit} must scrub to the original word");
        }
        let (same, out) = correct_flit(w, EccMode::On);
        assert_eq!(out, DecodeOutcome::Clean);
        assert_eq!(same, w);
    }

    #[test]
    fn correct_flit_leaves_uncorrectable_words_alone() {
        let w = sample();
        let damaged = w ^ (1 << 30) ^ (1 << 35);
        let (out_word, out) = correct_flit(damaged, EccMode::On);
        assert_eq!(out, DecodeOutcome::Uncorrectable);
        assert_eq!(out_word, damaged);
    }

    #[test]
    fn rewrite_bits_accepts_out_of_range_port_values() {
        let w = sample();
        let rew = rewrite_next_port_bits(w, 7, EccMode::On);
        let (f, out) = decode_flit(rew, EccMode::On);
        assert_eq!(out, DecodeOutcome::Clean, "a wrong value is still a valid codeword");
        assert_eq!(f.next_port, 7);
    }

    #[test]
    fn rewrite_without_ecc_touches_only_port_bits() {
        let w = encode_flit(
            FlitType::Body,
            Port::East,
            Coord3::new(1, 2, 3),
            0x3fff_ffff,
            EccMode::Off,
        );
        let rew = rewrite_next_port(w, Port::South, EccMode::Off);
        assert_eq!(w ^ rew, (Port::East.index() as u64 ^ Port::South.index() as u64) << 39);
    }

    #[test]
    fn packetize_shapes() {
        let dest = Coord3::new(1, 1, 0);
        let one = packetize(dest, Port::Local, 1, &[], 0, EccMode::On);
        assert_eq!(one.len(), 1);
        assert_eq!(decode_flit(one[0], EccMode::On).0.ftype, FlitType::Single);

        let four = packetize(dest, Port::East, 4, &[0xde, 0xad], 16, EccMode::On);
        let types: Vec<_> = four
            .iter()
            .map(|&w| decode_flit(w, EccMode::On).0.ftype)
            .collect();
        assert_eq!(
            types,
            [FlitType::Header, FlitType::Body, FlitType::Body, FlitType::Tail]
        );
    }

    #[test]
    fn depacketize_inverts_packetize() {
        let payload = [0x12u8, 0x34, 0x56, 0x78, 0x9a, 0xbc, 0xde, 0xf0];
        for (ecc, bits) in [(EccMode::On, 61), (EccMode::Off, 64), (EccMode::On, 3)] {
            let flits = packetize(Coord3::new(2, 0, 1), Port::Up, 4, &payload, bits, ecc);
            let back = depacketize(&flits, bits, ecc);
            for i in 0..bits {
                let want = (payload[i / 8] >> (7 - i % 8)) & 1;
                let got = (back[i / 8] >> (7 - i % 8)) & 1;
                assert_eq!(want, got, "bit {i} ecc={ecc:?}");
            }
        }
    }
}
