//! Planning, simulation and verification of graph-state distribution over
//! quantum networks with lossy, width-limited channels.
//!
//! Start with the programs under `examples/`; each one exercises a single
//! capability end to end.

pub mod cli;
pub mod error;
pub mod fixtures;
pub mod flows;
pub mod graphs;
pub mod mgst;
pub mod model;
pub mod p2pgsd;
pub mod protocol;
pub mod recovery;
pub mod spacetime;
pub mod stabilizer;
pub mod stp2pgsd;
pub mod validate;

pub use error::{Error, Result};
