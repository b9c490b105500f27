//! Training, Monte Carlo evaluation and figure data.

mod directions;
mod evaluate;
mod pattern;
mod registry;
mod selftest;
mod train;

use std::path::PathBuf;

pub use directions::{argmax, default_gain_edges, direction_stats, DirectionStats, Histogram};
pub use evaluate::{
    draw_episode, episode_rng, evaluate, evaluate_channels, generalization_sweep, par_map, run_one, sweep_csv, Evaluation,
    MetricRow, MetricTable, SweepRow, METRIC_HEADER,
};
pub use pattern::{angle_grid, episode_patterns, pattern_integral, peak_angle, PatternTable, PATTERN_POINTS};
pub use registry::{baseline, LearnedPolicy, PolicyId, BASELINE_NAMES, LEARNED_NAMES};
pub use selftest::{selftest, SelfTestResult};
pub use train::{batched_gain, train, train_step, validation_set, EpochRecord, LearningCurve, TrainConfig, TrainReport, BN_MOMENTUM};

use crate::channel::{AngleRange, ChannelModel, Geometry, LinkMode};
use crate::error::{Error, Result};
use crate::policies::NetConfig;
use crate::protocol::ProtocolConfig;

/// Path counts of the generalization sweep.
pub const SWEEP_PATHS: [usize; 6] = [1, 2, 3, 4, 5, 6];

/// One experiment: channel statistics, protocol grid, policy and budgets.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub geometry: Geometry,
    pub mode: LinkMode,
    /// Paths of the direct link.
    pub paths: usize,
    pub ris_tx_paths: usize,
    pub ris_rx_paths: usize,
    pub azimuth: AngleRange,
    pub elevation: AngleRange,
    /// `P / sigma^2` grid in dB.
    pub snr_db: Vec<f64>,
    pub rounds: Vec<usize>,
    pub policy: PolicyId,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub eval_episodes: usize,
    pub seed: u64,
    /// Evaluation threads; 0 uses every core.
    pub workers: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            geometry: Geometry::direct(64, 32),
            mode: LinkMode::Direct,
            paths: 3,
            ris_tx_paths: 2,
            ris_rx_paths: 2,
            azimuth: AngleRange::default(),
            elevation: AngleRange::default(),
            snr_db: vec![0.0],
            rounds: vec![4],
            policy: PolicyId::Active(crate::policies::RisSensing::Active),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            eval_episodes: 10_000,
            seed: 0,
            workers: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate(self.mode)?;
        if self.snr_db.is_empty() || self.rounds.is_empty() {
            return Err(Error::InvalidArgument("snr_db and rounds grids must be non-empty".into()));
        }
        if self.rounds.contains(&0) {
            return Err(Error::InvalidArgument("rounds must be positive".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::InvalidArgument("eval_episodes must be positive".into()));
        }
        if !self.policy.supports(self.mode) {
            return Err(Error::InvalidArgument(format!(
                "policy `{}` does not support the {} link",
                self.policy, self.mode
            )));
        }
        if self.policy.is_learned() {
            self.net.validate()?;
            self.train.validate()?;
        }
        Ok(())
    }

    pub fn channel_model(&self) -> ChannelModel {
        ChannelModel {
            geometry: self.geometry,
            mode: self.mode,
            paths: if self.mode == LinkMode::Direct { self.paths } else { 0 },
            ris_tx_paths: self.ris_tx_paths,
            ris_rx_paths: self.ris_rx_paths,
            azimuth: self.azimuth,
            elevation: self.elevation,
        }
    }

    /// Protocol at one grid point; the dB SNR is converted here only.
    pub fn protocol(&self, rounds: usize, snr_db: f64) -> ProtocolConfig {
        ProtocolConfig::from_snr_db(rounds, snr_db, self.geometry, self.mode)
    }

    /// OMP path budget: the true path count of the link.
    pub fn sparsity(&self) -> usize {
        match self.mode {
            LinkMode::Direct => self.paths,
            LinkMode::Ris => self.ris_tx_paths * self.ris_rx_paths,
        }
    }
}

#[cfg(test)]
mod tests;
