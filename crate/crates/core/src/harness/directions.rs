use std::fmt::Write as _;

use crate::channel::{beamforming_gain, direction_gains, ChannelModel};
use crate::error::{Error, Result};
use crate::numerics::to_db;
use crate::protocol::{Policy, ProtocolConfig};

use super::evaluate::{draw_episode, par_map, run_one};

/// Gain histogram with `edges.len() - 1` bins; values outside the edges go
/// to the first or last bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("histogram edges must increase".into()));
        }
        let bins = edges.len() - 1;
        Ok(Self {
            edges,
            counts: vec![0; bins],
        })
    }

    pub fn add(&mut self, x: f64) {
        let bins = self.counts.len();
        let i = self.edges.partition_point(|e| *e <= x).saturating_sub(1).min(bins - 1);
        self.counts[i] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// 1 dB bins from -30 dB to 30 dB.
pub fn default_gain_edges() -> Vec<f64> {
    (-30..=30).map(f64::from).collect()
}

/// Which effective direction the final design captures most of.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionStats {
    pub n: usize,
    /// Episodes whose largest direction gain is in direction `i + 1`.
    pub counts: Vec<usize>,
    /// Final gains in dB of the episodes of each class.
    pub histograms: Vec<Histogram>,
}

impl DirectionStats {
    pub fn proportions(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.n as f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("direction,proportion,count\n");
        for (i, (c, p)) in self.counts.iter().zip(self.proportions()).enumerate() {
            let _ = writeln!(out, "{},{},{}", i + 1, p, c);
        }
        out
    }

    pub fn histograms_csv(&self) -> String {
        let mut out = String::from("direction,bin_lo_db,bin_hi_db,count\n");
        for (i, h) in self.histograms.iter().enumerate() {
            for (b, c) in h.counts.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{}", i + 1, h.edges[b], h.edges[b + 1], c);
            }
        }
        out
    }
}

/// Index of the largest value, lowest on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Classifies each evaluation episode by the direction of the uplink matrix
/// in which the final design has the largest gain, over the first
/// `directions` singular directions.
pub fn direction_stats(
    policy: &dyn Policy,
    config: &ProtocolConfig,
    model: &ChannelModel,
    episodes: usize,
    directions: usize,
    seed: u64,
    workers: usize,
) -> Result<DirectionStats> {
    if episodes == 0 || directions == 0 {
        return Err(Error::InvalidArgument("need episodes and directions".into()));
    }
    let per_episode = par_map(episodes, workers, |i| {
        let (chan, ps, mut rng) = draw_episode(model, seed, i)?;
        let trace = run_one(policy, config, &chan, ps, &mut rng)?;
        let d = &trace.design;
        let g = chan.uplink(d.v.as_deref())?;
        let dg = direction_gains(&g, &d.w_t, &d.w_r, directions)?;
        Ok((argmax(&dg), beamforming_gain(&chan, &d.w_t, &d.w_r, d.v.as_deref())?))
    })?;
    let mut stats = DirectionStats {
        n: episodes,
        counts: vec![0; directions],
        histograms: vec![Histogram::new(default_gain_edges())?; directions],
    };
    for (class, gain) in per_episode {
        stats.counts[class] += 1;
        stats.histograms[class].add(to_db(gain));
    }
    Ok(stats)
}
