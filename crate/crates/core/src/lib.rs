//! Deterministic simulator and verifier for coded MapReduce shuffles over a
//! single switch and over t-ary fat-trees.
//!
//! The pipeline is: build a [`job::JobSpec`], place files and reducers, run
//! the Map phase, build coded sub-messages, route them over a
//! [`topology::Topology`] while charging every bit to a link, then decode at
//! every server and compare the heaviest link against the optimum from
//! [`bounds`].

use bitvec::prelude::{BitSlice, BitVec, Msb0};

pub mod bounds;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod frame;
pub mod job;
pub mod routing;
pub mod shuffle;
pub mod subset;
pub mod topology;

pub use error::{Error, Result};

pub type Bits = BitVec<u8, Msb0>;
pub type BitsRef = BitSlice<u8, Msb0>;
