//! Simulation and learning toolkit for two-sided mmWave beam alignment and
//! RIS reflection design with ping-pong pilots.

pub mod error;
pub mod harness;
pub mod channel;
pub mod nn;
pub mod numerics;
pub mod policies;
pub mod protocol;

pub use error::{Error, Result};
pub use numerics::{ComplexMatrix, Rng, C64};
