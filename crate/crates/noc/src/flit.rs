//! A flit instance in flight: the 44-bit wire word plus simulator identity.

use crate::codec::{self, EccMode, FlitFields};

/// Packet id, unique per scheduled packet.
pub type Pid = u32;

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Flit {
    pub word: u64,
    pub pid: Pid,
    /// Position within the packet, 0 = header.
    pub seq: u16,
}

impl Flit {
    pub fn new(word: u64, pid: Pid, seq: u16) -> Flit {
        Flit { word, pid, seq }
    }

    pub fn fields(&self, ecc: EccMode) -> FlitFields {
        codec::decode_flit(self.word, ecc).0
    }

    pub fn id(&self) -> (Pid, u16) {
        (self.pid, self.seq)
    }
}
