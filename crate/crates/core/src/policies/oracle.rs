use std::cell::RefCell;
use std::rc::Rc;

use crate::channel::{cascaded, check_unit_modulus, ChannelMatrices, ChannelRealization, Direction, LinkMode};
use crate::error::{Error, Result};
use crate::numerics::{inner, svd, top_singular_pair, unit_normalize, ComplexMatrix, Rng, C64};
use crate::protocol::{AgentSummary, Agents, EpisodeContext, Policy, ReflectionController, RxAgent, TxAgent};

use super::RIS_STREAM;

/// Agents that send a precomputed design in every round.
pub fn constant_agents<'a>(w_t: Vec<C64>, w_r: Vec<C64>, v: Option<Vec<C64>>) -> Agents<'a> {
    Agents {
        tx: Box::new(ConstTx { w: w_t, seen: Vec::new() }),
        rx: Box::new(ConstRx { w: w_r, seen: Vec::new() }),
        controller: v.map(|v| Box::new(ConstController { v }) as Box<dyn ReflectionController>),
    }
}

struct ConstTx {
    w: Vec<C64>,
    seen: Vec<C64>,
}

impl TxAgent for ConstTx {
    fn initial_sensing(&mut self) -> Result<(Vec<C64>, Vec<C64>)> {
        Ok((self.w.clone(), self.w.clone()))
    }
    fn observe(&mut self, _round: usize, y: C64) -> Result<()> {
        self.seen.push(y);
        Ok(())
    }
    fn next_sensing(&mut self, _round: usize) -> Result<(Vec<C64>, Vec<C64>)> {
        self.initial_sensing()
    }
    fn summary(&self) -> AgentSummary {
        AgentSummary {
            observations: self.seen.clone(),
            ..Default::default()
        }
    }
    fn finalize(&mut self, _feedback: Option<&[C64]>) -> Result<(Vec<C64>, Option<Vec<C64>>)> {
        Ok((self.w.clone(), None))
    }
}

struct ConstRx {
    w: Vec<C64>,
    seen: Vec<C64>,
}

impl RxAgent for ConstRx {
    fn initial_receive(&mut self) -> Result<Vec<C64>> {
        Ok(self.w.clone())
    }
    fn observe(&mut self, _round: usize, y: C64) -> Result<()> {
        self.seen.push(y);
        Ok(())
    }
    fn transmit_beam(&mut self, _round: usize) -> Result<Vec<C64>> {
        Ok(self.w.clone())
    }
    fn next_receive(&mut self, _round: usize) -> Result<Vec<C64>> {
        Ok(self.w.clone())
    }
    fn summary(&self) -> AgentSummary {
        AgentSummary {
            observations: self.seen.clone(),
            ..Default::default()
        }
    }
    fn finalize(&mut self, _from_tx: Option<Vec<C64>>) -> Result<Vec<C64>> {
        Ok(self.w.clone())
    }
}

struct ConstController {
    v: Vec<C64>,
}

impl ReflectionController for ConstController {
    fn initial(&mut self) -> Result<Vec<C64>> {
        Ok(self.v.clone())
    }
    fn design_ba(&mut self, _round: usize, _a: &AgentSummary, _b: &AgentSummary) -> Result<Vec<C64>> {
        Ok(self.v.clone())
    }
    fn design_ab(&mut self, _round: usize, _a: &AgentSummary, _b: &AgentSummary) -> Result<Vec<C64>> {
        Ok(self.v.clone())
    }
    fn finalize(&mut self, _a: &AgentSummary, _b: &AgentSummary) -> Result<Vec<C64>> {
        Ok(self.v.clone())
    }
}

/// `(w_t, w_r)` maximizing `|w_r^H H w_t|^2` for a downlink matrix `H`.
fn svd_beams(h: &ComplexMatrix) -> Result<(Vec<C64>, Vec<C64>, f64)> {
    let top = top_singular_pair(h)?;
    Ok((top.v, top.u, top.sigma * top.sigma))
}

/// Phase matching: `v_n = conj(q_n) / |q_n|`, so every `v_n q_n` is real and
/// nonnegative. Zero terms get `v_n = 1`.
pub fn phase_match(q: &[C64]) -> Vec<C64> {
    q.iter()
        .map(|z| {
            let r = z.norm();
            if r > 0.0 {
                z.conj() / r
            } else {
                C64::new(1.0, 0.0)
            }
        })
        .collect()
}

/// Per-element terms `q_n = conj((R w_r)_n) (T^H w_t)_n`, so that the
/// cascade gain is `|sum_n v_n q_n|^2`.
pub fn cascade_terms(chan: &ChannelRealization, w_t: &[C64], w_r: &[C64]) -> Result<Vec<C64>> {
    let (t, r) = ris_factors(chan)?;
    let b = r.matvec(w_r)?;
    let a = t.adjoint_matvec(w_t)?;
    Ok(b.iter().zip(&a).map(|(b, a)| b.conj() * a).collect())
}

fn ris_factors(chan: &ChannelRealization) -> Result<(&ComplexMatrix, &ComplexMatrix)> {
    match &chan.matrices {
        ChannelMatrices::Ris { t, r } => Ok((t, r)),
        ChannelMatrices::Direct { .. } => Err(Error::InvalidArgument("BCD requires a RIS link".into())),
    }
}

fn objective(q: &[C64], v: &[C64]) -> f64 {
    q.iter().zip(v).map(|(q, v)| q * v).sum::<C64>().norm_sqr()
}

/// Outcome of one block coordinate descent run.
#[derive(Clone, Debug, PartialEq)]
pub struct BcdRun {
    pub w_t: Vec<C64>,
    pub w_r: Vec<C64>,
    pub v: Vec<C64>,
    pub gain: f64,
    /// Objective after every half-step, starting with the initial point.
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// Alternates SVD beamformers for fixed `v` with phase matching for fixed
/// beamformers, starting from the beam pair `(w_t, w_r)`. A block update is
/// kept only if it does not lower the objective, which makes the recorded
/// sequence monotone in floating point too.
pub fn bcd_from_beams(chan: &ChannelRealization, w_t: &[C64], w_r: &[C64], max_iters: usize, tol: f64) -> Result<BcdRun> {
    bcd_core(chan, &CascadeBasis::new(chan)?, w_t, w_r, max_iters, tol)
}

/// Column spaces of `T` and `R^H` with per-element coordinates:
/// `T = Q_t C_t`, `R^H = Q_r C_r`, so the cascade is `Q_r K(v) Q_t^H` with
/// `K(v) = C_r diag(v) C_t^H` of size rank(R) x rank(T).
pub(super) struct CascadeBasis {
    qt: ComplexMatrix,
    ct: ComplexMatrix,
    qr: ComplexMatrix,
    cr: ComplexMatrix,
}

const BASIS_RANK_TOL: f64 = 1e-13;

impl CascadeBasis {
    pub(super) fn new(chan: &ChannelRealization) -> Result<Self> {
        let (t, r) = ris_factors(chan)?;
        let (st, sr) = (svd(t)?, svd(r)?);
        let kt = st.rank(BASIS_RANK_TOL);
        let kr = sr.rank(BASIS_RANK_TOL);
        let n = t.cols();
        // T = U S V^H gives Q_t = U, C_t = S V^H; R^H = V S U^H gives Q_r = V, C_r = S U^H
        Ok(Self {
            qt: ComplexMatrix::from_fn(t.rows(), kt, |i, b| st.u[(i, b)]),
            ct: ComplexMatrix::from_fn(kt, n, |b, k| st.v[(k, b)].conj() * st.singular_values[b]),
            qr: ComplexMatrix::from_fn(r.cols(), kr, |i, a| sr.v[(i, a)]),
            cr: ComplexMatrix::from_fn(kr, n, |a, k| sr.u[(k, a)].conj() * sr.singular_values[a]),
        })
    }

    /// Top singular beams `(w_t, w_r)` of the cascade for reflection `v`.
    pub(super) fn beams(&self, chan: &ChannelRealization, v: &[C64]) -> Result<(Vec<C64>, Vec<C64>)> {
        if self.qt.cols() == 0 || self.qr.cols() == 0 {
            let (w_t, w_r, _) = svd_beams(&cascaded(chan, v, Direction::AB)?)?;
            return Ok((w_t, w_r));
        }
        let n = self.ct.cols();
        let core = ComplexMatrix::from_fn(self.cr.rows(), self.ct.rows(), |a, b| {
            (0..n).map(|k| self.cr[(a, k)] * v[k] * self.ct[(b, k)].conj()).sum()
        });
        let top = top_singular_pair(&core)?;
        Ok((unit_normalize(&self.qt.matvec(&top.v)?)?, unit_normalize(&self.qr.matvec(&top.u)?)?))
    }
}

fn bcd_core(
    chan: &ChannelRealization,
    basis: &CascadeBasis,
    w_t: &[C64],
    w_r: &[C64],
    max_iters: usize,
    tol: f64,
) -> Result<BcdRun> {
    let mut w_t = unit_normalize(w_t)?;
    let mut w_r = unit_normalize(w_r)?;
    let q = cascade_terms(chan, &w_t, &w_r)?;
    let mut v = phase_match(&q);
    let mut gain = objective(&q, &v);
    let mut history = vec![gain];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let before = gain;
        let (t, r) = basis.beams(chan, &v)?;
        let g_svd = objective(&cascade_terms(chan, &t, &r)?, &v);
        if g_svd >= gain {
            w_t = t;
            w_r = r;
            gain = g_svd;
        }
        history.push(gain);
        let q = cascade_terms(chan, &w_t, &w_r)?;
        let cand = phase_match(&q);
        let g_pm = objective(&q, &cand);
        if g_pm >= gain {
            v = cand;
            gain = g_pm;
        }
        history.push(gain);
        if gain - before <= tol * gain.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(BcdRun {
        w_t,
        w_r,
        v,
        gain,
        history,
        iterations,
    })
}

fn bcd_core_from_reflection(
    chan: &ChannelRealization,
    basis: &CascadeBasis,
    v: &[C64],
    max_iters: usize,
    tol: f64,
) -> Result<BcdRun> {
    check_unit_modulus(v, basis.ct.cols())?;
    let (w_t, w_r) = basis.beams(chan, v)?;
    bcd_core(chan, basis, &w_t, &w_r, max_iters, tol)
}

/// BCD started from the SVD beams of a given reflection vector.
pub fn bcd_from_reflection(chan: &ChannelRealization, v: &[C64], max_iters: usize, tol: f64) -> Result<BcdRun> {
    bcd_core_from_reflection(chan, &CascadeBasis::new(chan)?, v, max_iters, tol)
}

const BCD_RANDOM_STARTS: usize = 2;
const BCD_SUBSPACE: usize = 3;

/// Best of several deterministic BCD starts: all-ones reflection, beam pairs
/// built from the leading singular directions of `T` and `R`, and a few
/// fixed-seed random reflections.
pub fn bcd_perfect_csi(chan: &ChannelRealization, max_iters: usize, tol: f64) -> Result<BcdRun> {
    let (t, r) = ris_factors(chan)?;
    let n = t.cols();
    let basis = CascadeBasis::new(chan)?;
    let mut best = bcd_core_from_reflection(chan, &basis, &vec![C64::new(1.0, 0.0); n], max_iters, tol)?;
    let mut consider = |run: BcdRun| {
        if run.gain > best.gain {
            best = run;
        }
    };
    let (st, sr) = (svd(t)?, svd(r)?);
    let kt = BCD_SUBSPACE.min(st.singular_values.len());
    let kr = BCD_SUBSPACE.min(sr.singular_values.len());
    for i in 0..kt {
        for j in 0..kr {
            if st.singular_values[i] <= 0.0 || sr.singular_values[j] <= 0.0 {
                continue;
            }
            consider(bcd_core(chan, &basis, &st.left(i), &sr.right(j), max_iters, tol)?);
        }
    }
    let mut rng = Rng::new(0x0bcd);
    for _ in 0..BCD_RANDOM_STARTS {
        consider(bcd_core_from_reflection(chan, &basis, &rng.unit_phases(n), max_iters, tol)?);
    }
    Ok(best)
}

pub const BCD_MAX_ITERS: usize = 200;
pub const BCD_TOL: f64 = 1e-12;

/// Full-CSI upper bound: SVD beams on a direct link, BCD on a RIS link.
#[derive(Clone, Copy, Debug, Default)]
pub struct PerfectCsi;

/// Design used by [`PerfectCsi`] for one channel.
pub fn perfect_csi_design(chan: &ChannelRealization) -> Result<(Vec<C64>, Vec<C64>, Option<Vec<C64>>)> {
    match &chan.matrices {
        ChannelMatrices::Direct { g } => {
            let top = top_singular_pair(g)?;
            Ok((top.u, top.v, None))
        }
        ChannelMatrices::Ris { .. } => {
            let run = bcd_perfect_csi(chan, BCD_MAX_ITERS, BCD_TOL)?;
            Ok((run.w_t, run.w_r, Some(run.v)))
        }
    }
}

impl Policy for PerfectCsi {
    fn name(&self) -> String {
        "perfect-csi".into()
    }

    fn spawn<'a>(&'a self, ctx: &EpisodeContext<'a>) -> Result<Agents<'a>> {
        let (w_t, w_r, v) = perfect_csi_design(ctx.channel)?;
        Ok(constant_agents(w_t, w_r, v))
    }
}

/// Multi-start block coordinate descent with perfect knowledge of the RIS
/// link; the RIS counterpart of [`PerfectCsi`].
#[derive(Clone, Copy, Debug, Default)]
pub struct Bcd;

impl Policy for Bcd {
    fn name(&self) -> String {
        "bcd".into()
    }

    fn spawn<'a>(&'a self, ctx: &EpisodeContext<'a>) -> Result<Agents<'a>> {
        if ctx.channel.mode() != LinkMode::Ris {
            return Err(Error::InvalidArgument("bcd requires a RIS link".into()));
        }
        let (w_t, w_r, v) = perfect_csi_design(ctx.channel)?;
        Ok(constant_agents(w_t, w_r, v))
    }
}

/// Random reflection coefficients with SVD beamformers on the resulting
/// cascade.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomRis;

impl Policy for RandomRis {
    fn name(&self) -> String {
        "random-ris".into()
    }

    fn spawn<'a>(&'a self, ctx: &EpisodeContext<'a>) -> Result<Agents<'a>> {
        if ctx.channel.mode() != LinkMode::Ris {
            return Err(Error::InvalidArgument("random-ris requires a RIS link".into()));
        }
        let v = random_reflection(ctx.seed, ctx.config.geometry.ris_elements);
        let (w_t, w_r, _) = svd_beams(&cascaded(ctx.channel, &v, Direction::AB)?)?;
        Ok(constant_agents(w_t, w_r, Some(v)))
    }
}

/// I.i.d. uniform phases for episode `seed`.
pub fn random_reflection(seed: u64, n: usize) -> Vec<C64> {
    Rng::with_stream(seed, RIS_STREAM).unit_phases(n)
}

/// Result of the alternating power iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerIterationResult {
    pub w_t: Vec<C64>,
    pub w_r: Vec<C64>,
    pub gain: f64,
    /// False when the top two singular values coincide, in which case the
    /// iterate need not settle on one direction.
    pub converged: bool,
}

fn start(m: usize) -> Vec<C64> {
    vec![C64::new(1.0 / (m as f64).sqrt(), 0.0); m]
}

/// `w_r <- G^H w_t / |.|`, `w_t <- G w_r / |.|` for `rounds` rounds from the
/// all-ones start. Every update assumes the receiving side sees the full
/// vector, which is what makes this a noiseless oracle.
pub fn power_iteration(g: &ComplexMatrix, rounds: usize) -> Result<PowerIterationResult> {
    let mut w_t = start(g.rows());
    let mut w_r = start(g.cols());
    for _ in 0..rounds {
        if let Ok(w) = unit_normalize(&g.adjoint_matvec(&w_t)?) {
            w_r = w;
        }
        if let Ok(w) = unit_normalize(&g.matvec(&w_r)?) {
            w_t = w;
        }
    }
    let gain = inner(&w_t, &g.matvec(&w_r)?).norm_sqr();
    let s = svd(g)?.singular_values;
    let converged = match s.as_slice() {
        [s1, s2, ..] => s1 - s2 > 1e-9 * s1,
        _ => true,
    };
    Ok(PowerIterationResult {
        w_t,
        w_r,
        gain,
        converged,
    })
}

/// Ping-pong power iteration with full noiseless observations.
#[derive(Clone, Copy, Debug, Default)]
pub struct PowerIteration;

struct PowerState {
    g: ComplexMatrix,
    w_a: Vec<C64>,
    w_b: Vec<C64>,
}

struct PowerTx {
    st: Rc<RefCell<PowerState>>,
    seen: Vec<C64>,
}

struct PowerRx {
    st: Rc<RefCell<PowerState>>,
    seen: Vec<C64>,
}

impl TxAgent for PowerTx {
    fn initial_sensing(&mut self) -> Result<(Vec<C64>, Vec<C64>)> {
        let w = self.st.borrow().w_a.clone();
        Ok((w.clone(), w))
    }
    fn observe(&mut self, _round: usize, y: C64) -> Result<()> {
        self.seen.push(y);
        let mut st = self.st.borrow_mut();
        if let Ok(w) = unit_normalize(&st.g.matvec(&st.w_b)?) {
            st.w_a = w;
        }
        Ok(())
    }
    fn next_sensing(&mut self, _round: usize) -> Result<(Vec<C64>, Vec<C64>)> {
        self.initial_sensing()
    }
    fn summary(&self) -> AgentSummary {
        AgentSummary {
            observations: self.seen.clone(),
            ..Default::default()
        }
    }
    fn finalize(&mut self, _feedback: Option<&[C64]>) -> Result<(Vec<C64>, Option<Vec<C64>>)> {
        Ok((self.st.borrow().w_a.clone(), None))
    }
}

impl RxAgent for PowerRx {
    fn initial_receive(&mut self) -> Result<Vec<C64>> {
        Ok(self.st.borrow().w_b.clone())
    }
    fn observe(&mut self, _round: usize, y: C64) -> Result<()> {
        self.seen.push(y);
        let mut st = self.st.borrow_mut();
        if let Ok(w) = unit_normalize(&st.g.adjoint_matvec(&st.w_a)?) {
            st.w_b = w;
        }
        Ok(())
    }
    fn transmit_beam(&mut self, _round: usize) -> Result<Vec<C64>> {
        self.initial_receive()
    }
    fn next_receive(&mut self, _round: usize) -> Result<Vec<C64>> {
        self.initial_receive()
    }
    fn summary(&self) -> AgentSummary {
        AgentSummary {
            observations: self.seen.clone(),
            ..Default::default()
        }
    }
    fn finalize(&mut self, _from_tx: Option<Vec<C64>>) -> Result<Vec<C64>> {
        self.initial_receive()
    }
}

impl Policy for PowerIteration {
    fn name(&self) -> String {
        "power-iteration".into()
    }

    fn spawn<'a>(&'a self, ctx: &EpisodeContext<'a>) -> Result<Agents<'a>> {
        let g = ctx.channel.direct_matrix()?.clone();
        let st = Rc::new(RefCell::new(PowerState {
            w_a: start(g.rows()),
            w_b: start(g.cols()),
            g,
        }));
        Ok(Agents {
            tx: Box::new(PowerTx {
                st: st.clone(),
                seen: Vec::new(),
            }),
            rx: Box::new(PowerRx { st, seen: Vec::new() }),
            controller: None,
        })
    }
}
