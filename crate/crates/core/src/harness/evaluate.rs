use std::fmt::Write as _;

use rayon::prelude::*;

use crate::channel::{beamforming_gain, ChannelModel, ChannelRealization};
use crate::error::{Error, Result};
use crate::numerics::{to_db, Rng};
use crate::protocol::{run_episode, EpisodeContext, EpisodeTrace, Policy, ProtocolConfig};

/// Header of every metric table.
pub const METRIC_HEADER: &str = "policy,L,overhead,snr_db,mean_gain_db,stderr_db,n";

/// One evaluated configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub policy: String,
    pub rounds: usize,
    pub snr_db: f64,
    pub mean_gain: f64,
    /// Standard error of the mean, linear.
    pub stderr: f64,
    pub n: usize,
}

impl MetricRow {
    pub fn from_gains(policy: String, rounds: usize, snr_db: f64, gains: &[f64]) -> Self {
        let n = gains.len();
        let mean = gains.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            gains.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            policy,
            rounds,
            snr_db,
            mean_gain: mean,
            stderr: (var / n as f64).sqrt(),
            n,
        }
    }

    pub fn overhead(&self) -> usize {
        2 * self.rounds
    }

    pub fn mean_gain_db(&self) -> f64 {
        to_db(self.mean_gain)
    }

    /// First-order (delta method) standard error of the dB mean.
    pub fn stderr_db(&self) -> f64 {
        10.0 / std::f64::consts::LN_10 * self.stderr / self.mean_gain
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.policy,
            self.rounds,
            self.overhead(),
            self.snr_db,
            self.mean_gain_db(),
            self.stderr_db(),
            self.n
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

impl MetricTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRIC_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.csv_line());
        }
        out
    }
}

/// Evaluation of one policy on one protocol configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub row: MetricRow,
    /// Per-episode gains in episode order.
    pub gains: Vec<f64>,
}

/// Channel, noise and policy randomness of episode `index`.
pub fn episode_rng(seed: u64, index: usize) -> Rng {
    Rng::with_stream(seed, index as u64)
}

/// Draws episode `index`: its channel followed by the policy seed. The
/// returned generator then drives the pilot noise.
pub fn draw_episode(model: &ChannelModel, seed: u64, index: usize) -> Result<(ChannelRealization, u64, Rng)> {
    let mut rng = episode_rng(seed, index);
    let chan = model.sample(&mut rng)?;
    let policy_seed = rng.next_u64();
    Ok((chan, policy_seed, rng))
}

pub fn run_one(policy: &dyn Policy, config: &ProtocolConfig, chan: &ChannelRealization, policy_seed: u64, rng: &mut Rng) -> Result<EpisodeTrace> {
    let ctx = EpisodeContext {
        config,
        channel: chan,
        seed: policy_seed,
    };
    let mut agents = policy.spawn(&ctx)?;
    run_episode(config, chan, &mut agents, policy.feedback(), rng, false)
}

fn design_gain(chan: &ChannelRealization, trace: &EpisodeTrace) -> Result<f64> {
    let d = &trace.design;
    beamforming_gain(chan, &d.w_t, &d.w_r, d.v.as_deref())
}

/// Runs `f` on `0..n` with `workers` threads (0 = all cores) and returns the
/// results in index order, so reductions do not depend on scheduling.
pub fn par_map<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

/// Mean gain of `policy` over `episodes` fresh channels from `model`,
/// through the full pilot protocol. Bit-identical for a fixed seed whatever
/// the worker count.
pub fn evaluate(policy: &dyn Policy, config: &ProtocolConfig, model: &ChannelModel, episodes: usize, seed: u64, workers: usize) -> Result<Evaluation> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("need at least one episode".into()));
    }
    let gains = par_map(episodes, workers, |i| {
        let (chan, ps, mut rng) = draw_episode(model, seed, i)?;
        let trace = run_one(policy, config, &chan, ps, &mut rng)?;
        design_gain(&chan, &trace)
    })?;
    Ok(Evaluation {
        row: MetricRow::from_gains(policy.name(), config.rounds, config.snr_db(), &gains),
        gains,
    })
}

/// Like [`evaluate`] on a given list of channels; episode `i` uses the
/// noise stream of index `i`.
pub fn evaluate_channels(policy: &dyn Policy, config: &ProtocolConfig, channels: &[ChannelRealization], seed: u64, workers: usize) -> Result<Evaluation> {
    if channels.is_empty() {
        return Err(Error::InvalidArgument("need at least one channel".into()));
    }
    let gains = par_map(channels.len(), workers, |i| {
        let mut rng = episode_rng(seed, i);
        let ps = rng.next_u64();
        let trace = run_one(policy, config, &channels[i], ps, &mut rng)?;
        design_gain(&channels[i], &trace)
    })?;
    Ok(Evaluation {
        row: MetricRow::from_gains(policy.name(), config.rounds, config.snr_db(), &gains),
        gains,
    })
}

/// Evaluation of a policy trained at one path count on other path counts.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub paths: usize,
    pub row: MetricRow,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("paths,{METRIC_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{}", r.paths, r.row.csv_line());
    }
    out
}

pub fn generalization_sweep(
    policy: &dyn Policy,
    config: &ProtocolConfig,
    model: &ChannelModel,
    path_counts: &[usize],
    episodes: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<SweepRow>> {
    if model.mode != crate::channel::LinkMode::Direct {
        return Err(Error::InvalidArgument("path-count sweeps apply to direct links".into()));
    }
    path_counts
        .iter()
        .map(|&paths| {
            let m = ChannelModel { paths, ..model.clone() };
            Ok(SweepRow {
                paths,
                row: evaluate(policy, config, &m, episodes, seed, workers)?.row,
            })
        })
        .collect()
}
