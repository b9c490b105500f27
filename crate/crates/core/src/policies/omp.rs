use std::rc::Rc;

use crate::channel::{phase_ramp, Geometry};
use crate::error::{Error, Result};
use crate::numerics::{inner, least_squares, top_singular_pair, ComplexMatrix, Rng, C64};
use crate::protocol::{AgentSummary, Agents, EpisodeContext, Feedback, Policy, RxAgent, TxAgent};

use super::SENSING_STREAM;

/// Grid of `grid_t x grid_r` rank-one atoms `a_t(s_j) a_r(s_k)^H`, with
/// spatial frequencies `s = sin(angle)` uniform on `[-1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AngularDictionary {
    pub mt: usize,
    pub mr: usize,
    pub grid_t: usize,
    pub grid_r: usize,
}

impl AngularDictionary {
    pub fn new(mt: usize, mr: usize, grid_t: usize, grid_r: usize) -> Result<Self> {
        if mt == 0 || mr == 0 || grid_t == 0 || grid_r == 0 {
            return Err(Error::InvalidArgument("dictionary sizes must be positive".into()));
        }
        Ok(Self { mt, mr, grid_t, grid_r })
    }

    /// Twice as many grid points as antennas on each side.
    pub fn for_geometry(geometry: Geometry) -> Self {
        Self {
            mt: geometry.mt,
            mr: geometry.mr,
            grid_t: 2 * geometry.mt,
            grid_r: 2 * geometry.mr,
        }
    }

    pub fn len(&self) -> usize {
        self.grid_t * self.grid_r
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sine(j: usize, grid: usize) -> f64 {
        -1.0 + 2.0 * j as f64 / grid as f64
    }

    pub fn atom_t(&self, j: usize) -> Vec<C64> {
        phase_ramp(self.mt, Self::sine(j, self.grid_t))
    }

    pub fn atom_r(&self, k: usize) -> Vec<C64> {
        phase_ramp(self.mr, Self::sine(k, self.grid_r))
    }

    /// Flat index of atom `(j, k)`.
    pub fn index(&self, j: usize, k: usize) -> usize {
        j * self.grid_r + k
    }

    pub fn split(&self, idx: usize) -> (usize, usize) {
        (idx / self.grid_r, idx % self.grid_r)
    }
}

/// One linear measurement `y = left^H G right` of the `Mt x Mr` channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub y: C64,
    pub left: Vec<C64>,
    pub right: Vec<C64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OmpEstimate {
    /// Selected atoms in selection order.
    pub support: Vec<(usize, usize)>,
    pub coefficients: Vec<C64>,
    pub channel: ComplexMatrix,
}

/// Sensing matrix with one row per measurement and one column per atom.
pub fn sensing_matrix(measurements: &[Measurement], dict: &AngularDictionary) -> Result<ComplexMatrix> {
    let at: Vec<_> = (0..dict.grid_t).map(|j| dict.atom_t(j)).collect();
    let ar: Vec<_> = (0..dict.grid_r).map(|k| dict.atom_r(k)).collect();
    let mut phi = ComplexMatrix::zeros(measurements.len(), dict.len());
    for (i, m) in measurements.iter().enumerate() {
        if m.left.len() != dict.mt || m.right.len() != dict.mr {
            return Err(Error::Dimension {
                op: "omp measurement",
                lhs: (m.left.len(), m.right.len()),
                rhs: (dict.mt, dict.mr),
            });
        }
        let p: Vec<C64> = at.iter().map(|a| inner(&m.left, a)).collect();
        let q: Vec<C64> = ar.iter().map(|a| inner(a, &m.right)).collect();
        for (j, pj) in p.iter().enumerate() {
            for (k, qk) in q.iter().enumerate() {
                phi[(i, dict.index(j, k))] = pj * qk;
            }
        }
    }
    Ok(phi)
}

/// Orthogonal matching pursuit with `k` atoms. Each step picks the atom with
/// the largest normalized correlation to the residual (lowest index on
/// ties) and refits all selected atoms by least squares.
pub fn omp_estimate(measurements: &[Measurement], dict: &AngularDictionary, k: usize) -> Result<OmpEstimate> {
    if measurements.is_empty() {
        return Err(Error::InvalidArgument("OMP needs at least one measurement".into()));
    }
    if k > measurements.len() {
        return Err(Error::InvalidArgument(format!(
            "sparsity {k} exceeds the {} measurements",
            measurements.len()
        )));
    }
    let phi = sensing_matrix(measurements, dict)?;
    let y: Vec<C64> = measurements.iter().map(|m| m.y).collect();
    let columns: Vec<Vec<C64>> = (0..dict.len()).map(|c| phi.column(c)).collect();
    let norms: Vec<f64> = columns.iter().map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).collect();
    let mut support: Vec<usize> = Vec::with_capacity(k);
    let mut coefficients = Vec::new();
    let mut residual = y.clone();
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for (c, col) in columns.iter().enumerate() {
            if support.contains(&c) || norms[c] == 0.0 {
                continue;
            }
            let score = inner(col, &residual).norm() / norms[c];
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((c, score));
            }
        }
        let Some((c, _)) = best else { break };
        support.push(c);
        let sub = ComplexMatrix::from_columns(&support.iter().map(|&s| columns[s].clone()).collect::<Vec<_>>())?;
        coefficients = least_squares(&sub, &y)?;
        let fit = sub.matvec(&coefficients)?;
        residual = y.iter().zip(&fit).map(|(a, b)| a - b).collect();
    }
    let mut channel = ComplexMatrix::zeros(dict.mt, dict.mr);
    let pairs: Vec<(usize, usize)> = support.iter().map(|&s| dict.split(s)).collect();
    for (&(j, kk), x) in pairs.iter().zip(&coefficients) {
        let at = dict.atom_t(j);
        let ar = dict.atom_r(kk);
        for (m, atm) in at.iter().enumerate() {
            for (n, arn) in ar.iter().enumerate() {
                channel[(m, n)] += x * atm * arn.conj();
            }
        }
    }
    Ok(OmpEstimate {
        support: pairs,
        coefficients,
        channel,
    })
}

/// Random sensing, OMP channel estimate at A from both sides' pilots, and
/// SVD beamformers on the estimate. B's combiner is fed back.
#[derive(Clone, Debug, PartialEq)]
pub struct Omp {
    pub sparsity: usize,
    pub dictionary: AngularDictionary,
}

impl Omp {
    pub fn new(geometry: Geometry, sparsity: usize) -> Self {
        Self {
            sparsity,
            dictionary: AngularDictionary::for_geometry(geometry),
        }
    }
}

/// Per-round random sensing vectors `(w^A_t, w^A_r, w^B_t, w^B_r)` shared by
/// both sides through the episode seed.
pub fn random_sensing(seed: u64, geometry: Geometry, rounds: usize) -> Vec<[Vec<C64>; 4]> {
    let mut rng = Rng::with_stream(seed, SENSING_STREAM);
    (0..rounds)
        .map(|_| {
            [
                rng.unit_vector(geometry.mt),
                rng.unit_vector(geometry.mt),
                rng.unit_vector(geometry.mr),
                rng.unit_vector(geometry.mr),
            ]
        })
        .collect()
}

/// Measurements implied by a trace of pilots. `y_b[l]` conjugated measures
/// `w^A_t^H G w^B_r`; `y_a[l]` measures `w^A_r^H G w^B_t`.
pub fn pilot_measurements(sensing: &[[Vec<C64>; 4]], y_a: &[C64], y_b: &[C64], p1: f64, p2: f64) -> Vec<Measurement> {
    let mut out = Vec::with_capacity(2 * sensing.len());
    for (l, s) in sensing.iter().enumerate() {
        if let Some(y) = y_b.get(l) {
            out.push(Measurement {
                y: y.conj() / p1.sqrt(),
                left: s[0].clone(),
                right: s[3].clone(),
            });
        }
        if let Some(y) = y_a.get(l) {
            out.push(Measurement {
                y: y / p2.sqrt(),
                left: s[1].clone(),
                right: s[2].clone(),
            });
        }
    }
    out
}

struct OmpTx<'a> {
    p: &'a Omp,
    sensing: Rc<Vec<[Vec<C64>; 4]>>,
    powers: (f64, f64),
    seen: Vec<C64>,
}

impl TxAgent for OmpTx<'_> {
    fn initial_sensing(&mut self) -> Result<(Vec<C64>, Vec<C64>)> {
        Ok((self.sensing[0][0].clone(), self.sensing[0][1].clone()))
    }
    fn observe(&mut self, _round: usize, y: C64) -> Result<()> {
        self.seen.push(y);
        Ok(())
    }
    fn next_sensing(&mut self, round: usize) -> Result<(Vec<C64>, Vec<C64>)> {
        let s = &self.sensing[round + 1];
        Ok((s[0].clone(), s[1].clone()))
    }
    fn summary(&self) -> AgentSummary {
        AgentSummary {
            observations: self.seen.clone(),
            ..Default::default()
        }
    }
    fn finalize(&mut self, feedback: Option<&[C64]>) -> Result<(Vec<C64>, Option<Vec<C64>>)> {
        let y_b = feedback.ok_or_else(|| Error::InvalidArgument("OMP needs B's pilots fed back".into()))?;
        let meas = pilot_measurements(&self.sensing, &self.seen, y_b, self.powers.0, self.powers.1);
        let est = omp_estimate(&meas, &self.p.dictionary, self.p.sparsity.min(meas.len()))?;
        if est.channel.frobenius_norm() == 0.0 {
            return Ok((self.sensing[0][0].clone(), Some(self.sensing[0][3].clone())));
        }
        let top = top_singular_pair(&est.channel)?;
        Ok((top.u, Some(top.v)))
    }
}

struct OmpRx {
    sensing: Rc<Vec<[Vec<C64>; 4]>>,
    seen: Vec<C64>,
}

impl RxAgent for OmpRx {
    fn initial_receive(&mut self) -> Result<Vec<C64>> {
        Ok(self.sensing[0][3].clone())
    }
    fn observe(&mut self, _round: usize, y: C64) -> Result<()> {
        self.seen.push(y);
        Ok(())
    }
    fn transmit_beam(&mut self, round: usize) -> Result<Vec<C64>> {
        Ok(self.sensing[round][2].clone())
    }
    fn next_receive(&mut self, round: usize) -> Result<Vec<C64>> {
        Ok(self.sensing[round + 1][3].clone())
    }
    fn summary(&self) -> AgentSummary {
        AgentSummary {
            observations: self.seen.clone(),
            ..Default::default()
        }
    }
    fn finalize(&mut self, from_tx: Option<Vec<C64>>) -> Result<Vec<C64>> {
        from_tx.ok_or_else(|| Error::InvalidArgument("B's combiner is designed at A and must be forwarded".into()))
    }
}

impl Policy for Omp {
    fn name(&self) -> String {
        "omp".into()
    }

    fn feedback(&self) -> Feedback {
        Feedback::RxObservationsToTx
    }

    fn spawn<'a>(&'a self, ctx: &EpisodeContext<'a>) -> Result<Agents<'a>> {
        ctx.channel.direct_matrix()?;
        let geom = ctx.config.geometry;
        if geom.mt != self.dictionary.mt || geom.mr != self.dictionary.mr {
            return Err(Error::InvalidArgument("OMP dictionary does not match the geometry".into()));
        }
        let sensing = Rc::new(random_sensing(ctx.seed, geom, ctx.config.rounds));
        Ok(Agents {
            tx: Box::new(OmpTx {
                p: self,
                sensing: sensing.clone(),
                powers: (ctx.config.p1, ctx.config.p2),
                seen: Vec::new(),
            }),
            rx: Box::new(OmpRx { sensing, seen: Vec::new() }),
            controller: None,
        })
    }
}
