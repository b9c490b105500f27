//! Sensing and design strategies: the LSTM active-sensing policy, fixed
//! sensing with learned decoders, and the analytic baselines.

mod active;
mod batch;
mod bisection;
mod fixed;
mod omp;
mod oracle;
#[cfg(test)]
use oracle::CascadeBasis;

use std::fmt;
use std::str::FromStr;

pub use active::ActiveSensing;
pub use batch::TrainBatch;
pub use bisection::{bisection_choice, Bisection, BisectionSide, HierarchicalCodebook, FIT_GRID};
pub use fixed::FixedSensing;
pub use omp::{omp_estimate, pilot_measurements, random_sensing, sensing_matrix, AngularDictionary, Measurement, Omp, OmpEstimate};
pub use oracle::{
    bcd_from_beams, bcd_from_reflection, constant_agents, Bcd, bcd_perfect_csi, cascade_terms, perfect_csi_design, phase_match,
    power_iteration, random_reflection, BcdRun, PerfectCsi, PowerIteration, PowerIterationResult, RandomRis,
    BCD_MAX_ITERS, BCD_TOL,
};

use crate::error::{Error, Result};
use crate::nn::{Graph, ParameterStore, Tensor, Var};
use crate::numerics::{Rng, C64};
use crate::protocol::{Policy, ProtocolConfig};

/// Stream offsets of per-episode policy randomness, kept apart from the
/// engine's noise stream.
pub(crate) const RIS_STREAM: u64 = 0x5249_5300;
pub(crate) const SENSING_STREAM: u64 = 0x5345_4e53;

/// Network sizes shared by the learned policies.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    /// LSTM width at agent A.
    pub hidden_a: usize,
    /// LSTM width at agent B.
    pub hidden_b: usize,
    /// Hidden widths of every head; the output width follows from the array.
    pub head: Vec<usize>,
    pub batch_norm: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden_a: 64,
            hidden_b: 64,
            head: vec![64, 64],
            batch_norm: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_a == 0 || self.hidden_b == 0 || self.head.contains(&0) {
            return Err(Error::InvalidArgument("network widths must be positive".into()));
        }
        Ok(())
    }
}

/// How the surface coefficients are chosen during sensing. The final
/// coefficients always come from the learned head on both sides' states.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RisSensing {
    Active,
    Learned,
    Random,
}

/// How fixed sensing vectors are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SensingKind {
    Random,
    Learned,
}

macro_rules! names {
    ($t:ty { $($v:ident => $s:literal),* }) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$v => $s),* })
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$v),)*
                    _ => Err(Error::InvalidArgument(format!(
                        "unknown value `{s}`, expected one of: {}",
                        [$($s),*].join(", ")
                    ))),
                }
            }
        }
    };
}

names!(RisSensing { Active => "active", Learned => "learned", Random => "random" });
names!(SensingKind { Random => "random", Learned => "learned" });

/// A policy whose parameters are fitted by unrolling the protocol over a
/// batch of channels.
pub trait Trainable: Policy {
    fn store(&self) -> &ParameterStore;
    fn store_mut(&mut self) -> &mut ParameterStore;
    fn config(&self) -> &ProtocolConfig;
    /// Per-episode beamforming gain, `B x 1`.
    fn unroll(&self, g: &mut Graph<'_>, batch: &TrainBatch) -> Result<Var>;
}

/// Random starting value of a trainable `1 x 2m` vector.
pub(crate) fn init_vector(m: usize, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(1, 2 * m, |_, _| rng.normal())
}

pub(crate) fn scalar_input(g: &mut Graph<'_>, y: C64) -> Var {
    g.constant(Tensor::row_vector(vec![y.re, y.im]))
}
