//! Ping-pong pilot exchange between agent A (the transmitter side, `Mt`
//! antennas) and agent B (the receiver side, `Mr` antennas), optionally via
//! a reconfigurable surface.
//!
//! Round `l` proceeds as: A sends a pilot with `w^A_{t,l}` that B combines
//! with `w^B_{r,l}`; B updates and answers with `w^B_{t,l}`, which A combines
//! with `w^A_{r,l}`; A updates. After `L` rounds both sides emit their data
//! beamformers and the controller, if any, its reflection vector.

mod engine;
mod trace;

pub use engine::{evaluate_design, pilot_ab, pilot_ba, run_episode};
pub use trace::{EpisodeTrace, FinalDesign, RoundRecord};

use crate::channel::{ChannelRealization, Geometry, LinkMode};
use crate::error::{Error, Result};
use crate::numerics::{from_db, to_db, C64};

/// Round count, powers and noise of one protocol run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub rounds: usize,
    pub p1: f64,
    pub p2: f64,
    pub noise_var: f64,
    pub geometry: Geometry,
    pub mode: LinkMode,
}

impl ProtocolConfig {
    /// Unit pilot powers with `sigma^2 = 10^(-snr_db / 10)`.
    pub fn from_snr_db(rounds: usize, snr_db: f64, geometry: Geometry, mode: LinkMode) -> Self {
        Self {
            rounds,
            p1: 1.0,
            p2: 1.0,
            noise_var: 1.0 / from_db(snr_db),
            geometry,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("at least one ping-pong round is required".into()));
        }
        for (name, x) in [("P1", self.p1), ("P2", self.p2), ("noise variance", self.noise_var)] {
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {x}")));
            }
        }
        self.geometry.validate(self.mode)
    }

    /// `P1 / sigma^2` in dB.
    pub fn snr_db(&self) -> f64 {
        to_db(self.p1 / self.noise_var)
    }

    /// Pilot symbols spent before data transmission.
    pub fn overhead(&self) -> usize {
        2 * self.rounds
    }
}

/// What an agent exposes to the reflection controller.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AgentSummary {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
    /// Pilots received so far, oldest first.
    pub observations: Vec<C64>,
}

/// Agent A.
pub trait TxAgent {
    /// `(w^A_{t,0}, w^A_{r,0})`.
    fn initial_sensing(&mut self) -> Result<(Vec<C64>, Vec<C64>)>;
    /// Receives `y^A_l`.
    fn observe(&mut self, round: usize, y: C64) -> Result<()>;
    /// `(w^A_{t,l+1}, w^A_{r,l+1})` after observing round `l`.
    fn next_sensing(&mut self, round: usize) -> Result<(Vec<C64>, Vec<C64>)>;
    fn summary(&self) -> AgentSummary;
    /// Data beamformer `w_t`. `feedback` carries B's pilots for policies that
    /// assume an explicit feedback link; the returned second vector, if any, is
    /// forwarded to B as its design.
    fn finalize(&mut self, feedback: Option<&[C64]>) -> Result<(Vec<C64>, Option<Vec<C64>>)>;
}

/// Agent B.
pub trait RxAgent {
    /// `w^B_{r,0}`.
    fn initial_receive(&mut self) -> Result<Vec<C64>>;
    /// Receives `y^B_l`.
    fn observe(&mut self, round: usize, y: C64) -> Result<()>;
    /// `w^B_{t,l}`, used to answer in round `l`.
    fn transmit_beam(&mut self, round: usize) -> Result<Vec<C64>>;
    /// `w^B_{r,l+1}`.
    fn next_receive(&mut self, round: usize) -> Result<Vec<C64>>;
    fn summary(&self) -> AgentSummary;
    /// Data combiner `w_r`; `from_tx` is A's forwarded design under feedback.
    fn finalize(&mut self, from_tx: Option<Vec<C64>>) -> Result<Vec<C64>>;
}

/// Designs the surface coefficients from both agents' summaries.
pub trait ReflectionController {
    /// `v^{AB}_0`.
    fn initial(&mut self) -> Result<Vec<C64>>;
    /// `v^{BA}_l`, after B observed round `l`.
    fn design_ba(&mut self, round: usize, a: &AgentSummary, b: &AgentSummary) -> Result<Vec<C64>>;
    /// `v^{AB}_{l+1}`, after A observed round `l`.
    fn design_ab(&mut self, round: usize, a: &AgentSummary, b: &AgentSummary) -> Result<Vec<C64>>;
    /// Data-transmission coefficients.
    fn finalize(&mut self, a: &AgentSummary, b: &AgentSummary) -> Result<Vec<C64>>;
}

/// Whether the engine forwards B's pilots to A before the final design.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feedback {
    None,
    RxObservationsToTx,
}

/// Per-episode instances of a policy's agents.
pub struct Agents<'a> {
    pub tx: Box<dyn TxAgent + 'a>,
    pub rx: Box<dyn RxAgent + 'a>,
    pub controller: Option<Box<dyn ReflectionController + 'a>>,
}

/// What a policy may see when it spawns agents. Only oracle baselines look at
/// `channel`.
pub struct EpisodeContext<'a> {
    pub config: &'a ProtocolConfig,
    pub channel: &'a ChannelRealization,
    /// Seed for any per-episode randomness of the policy.
    pub seed: u64,
}

/// A sensing and design strategy.
pub trait Policy: Sync {
    fn name(&self) -> String;

    fn feedback(&self) -> Feedback {
        Feedback::None
    }

    fn spawn<'a>(&'a self, ctx: &EpisodeContext<'a>) -> Result<Agents<'a>>;
}

#[cfg(test)]
mod tests;
