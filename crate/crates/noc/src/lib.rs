//! Cycle-accurate simulator of a fault-tolerant 3D mesh network-on-chip.
//!
//! The modeled router has a three-stage wormhole pipeline with duplicated
//! route/arbitration stages and majority voting against transient upsets,
//! SEC-DED-protected flits with hop-by-hop retransmission, input buffers that
//! skip faulty slots, a crossbar with spare links, lookahead adaptive routing
//! that steers around faulty channels, and an online fault diagnosis engine
//! that localizes permanent faults to a buffer slot, a crossbar link or a
//! channel.

pub mod arq;
pub mod buffer;
pub mod codec;
pub mod coord;
pub mod crossbar;
pub mod ddrm;
pub mod event;
pub mod fault;
pub mod flit;
pub mod network;
pub mod rng;
pub mod router;
pub mod routing;
pub mod traffic;

pub use coord::{Coord3, Dims, Port};
