use std::sync::Arc;

use crate::channel::{ChannelMatrices, ChannelModel, ChannelRealization, LinkMode};
use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor, Var};
use crate::numerics::{ComplexMatrix, Rng};
use crate::protocol::ProtocolConfig;

/// Channels and noise for one batched unroll of the protocol.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub config: ProtocolConfig,
    pub channels: Vec<ChannelRealization>,
    /// `G` per row, or `T` and `R` per row on a RIS link.
    g: Arc<Vec<ComplexMatrix>>,
    t: Arc<Vec<ComplexMatrix>>,
    r: Arc<Vec<ComplexMatrix>>,
    /// Per round, `B x 2` noise already scaled to `noise_var`.
    noise_b: Vec<Tensor>,
    noise_a: Vec<Tensor>,
    /// Per round, random reflection phases for the A-to-B and B-to-A pilots.
    phases_ab: Vec<Tensor>,
    phases_ba: Vec<Tensor>,
}

fn complex_noise(rows: usize, var: f64, rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(rows, 2);
    for i in 0..rows {
        let z = rng.complex_normal(var);
        t.set(i, 0, z.re);
        t.set(i, 1, z.im);
    }
    t
}

fn phase_rows(rows: usize, n: usize, rng: &mut Rng) -> Result<Tensor> {
    let v: Vec<_> = (0..rows).map(|_| rng.unit_phases(n)).collect();
    Tensor::from_complex_rows(&v)
}

impl TrainBatch {
    /// Draws `size` channels from `model`, then all noise and random phases.
    pub fn sample(config: &ProtocolConfig, model: &ChannelModel, size: usize, rng: &mut Rng) -> Result<Self> {
        if model.mode != config.mode || model.geometry != config.geometry {
            return Err(Error::InvalidArgument("channel model does not match the protocol".into()));
        }
        let channels = (0..size).map(|_| model.sample(rng)).collect::<Result<Vec<_>>>()?;
        Self::from_channels(config, channels, rng)
    }

    pub fn from_channels(config: &ProtocolConfig, channels: Vec<ChannelRealization>, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if channels.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let (mut g, mut t, mut r) = (Vec::new(), Vec::new(), Vec::new());
        for c in &channels {
            if c.mode() != config.mode {
                return Err(Error::InvalidArgument(format!("batch expects {} channels", config.mode)));
            }
            match &c.matrices {
                ChannelMatrices::Direct { g: m } => g.push(m.clone()),
                ChannelMatrices::Ris { t: tm, r: rm } => {
                    t.push(tm.clone());
                    r.push(rm.clone());
                }
            }
        }
        let rows = channels.len();
        let rounds = config.rounds;
        let mut noise_b = Vec::with_capacity(rounds);
        let mut noise_a = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            noise_b.push(complex_noise(rows, config.noise_var, rng));
            noise_a.push(complex_noise(rows, config.noise_var, rng));
        }
        let (mut phases_ab, mut phases_ba) = (Vec::new(), Vec::new());
        if config.mode == LinkMode::Ris {
            let n = config.geometry.ris_elements;
            for _ in 0..rounds {
                phases_ab.push(phase_rows(rows, n, rng)?);
                phases_ba.push(phase_rows(rows, n, rng)?);
            }
        }
        Ok(Self {
            config: *config,
            channels,
            g: Arc::new(g),
            t: Arc::new(t),
            r: Arc::new(r),
            noise_b,
            noise_a,
            phases_ab,
            phases_ba,
        })
    }

    /// Same channels without pilot noise.
    pub fn noiseless(mut self) -> Self {
        for t in self.noise_a.iter_mut().chain(self.noise_b.iter_mut()) {
            *t = Tensor::zeros(t.rows(), 2);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub(crate) fn random_phases(&self, round: usize, ab: bool) -> &Tensor {
        if ab {
            &self.phases_ab[round]
        } else {
            &self.phases_ba[round]
        }
    }

    /// Noisy pilot at B in round `l`: `sqrt(P1) w_r^H G^H w_t + n`, or through
    /// the surface with `v`.
    pub(crate) fn pilot_ab(&self, g: &mut Graph<'_>, l: usize, wt_a: Var, wr_b: Var, v: Option<Var>) -> Result<Var> {
        let clean = match v {
            None => {
                let h = g.cmatvec(self.g.clone(), wt_a, true)?;
                g.conj_dot(wr_b, h)?
            }
            Some(v) => {
                let b = g.cmatvec(self.r.clone(), wr_b, false)?;
                let a = g.cmatvec(self.t.clone(), wt_a, true)?;
                g.conj_dot3(b, v, a, false)?
            }
        };
        let scaled = g.scale(clean, self.config.p1.sqrt());
        let n = g.constant(self.noise_b[l].clone());
        g.add(scaled, n)
    }

    /// Noisy pilot at A in round `l`: `sqrt(P2) w_r^H G w_t + n`.
    pub(crate) fn pilot_ba(&self, g: &mut Graph<'_>, l: usize, wt_b: Var, wr_a: Var, v: Option<Var>) -> Result<Var> {
        let clean = match v {
            None => {
                let h = g.cmatvec(self.g.clone(), wt_b, false)?;
                g.conj_dot(wr_a, h)?
            }
            Some(v) => {
                let b = g.cmatvec(self.t.clone(), wr_a, true)?;
                let a = g.cmatvec(self.r.clone(), wt_b, false)?;
                g.conj_dot3(b, v, a, true)?
            }
        };
        let scaled = g.scale(clean, self.config.p2.sqrt());
        let n = g.constant(self.noise_a[l].clone());
        g.add(scaled, n)
    }

    /// Per-row beamforming gain, `B x 1`.
    pub(crate) fn gain(&self, g: &mut Graph<'_>, w_t: Var, w_r: Var, v: Option<Var>) -> Result<Var> {
        let z = match v {
            None => {
                let h = g.cmatvec(self.g.clone(), w_t, true)?;
                g.conj_dot(w_r, h)?
            }
            Some(v) => {
                let b = g.cmatvec(self.r.clone(), w_r, false)?;
                let a = g.cmatvec(self.t.clone(), w_t, true)?;
                g.conj_dot3(b, v, a, false)?
            }
        };
        g.abs2(z)
    }
}
