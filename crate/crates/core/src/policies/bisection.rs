use crate::channel::{phase_ramp, AngleRange, Geometry};
use crate::error::{Error, Result};
use crate::numerics::{least_squares, unit_normalize, ComplexMatrix, C64};
use crate::protocol::{AgentSummary, Agents, EpisodeContext, EpisodeTrace, Policy, RxAgent, TxAgent};

/// Points of the uniform spatial-frequency grid used to fit sector beams.
pub const FIT_GRID: usize = 512;

/// Binary tree of sector beams. Level `d` splits the range of `sin(angle)`
/// into `2^d` equal sectors; each beam is the least-squares fit of the
/// sector's indicator on [`FIT_GRID`] points, built once per level around
/// zero and moved to each sector by a phase ramp.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchicalCodebook {
    m: usize,
    lo: f64,
    hi: f64,
    levels: Vec<Vec<Vec<C64>>>,
}

fn fitted_beam(m: usize, half_width: f64) -> Result<Vec<C64>> {
    let grid: Vec<f64> = (0..FIT_GRID).map(|g| -1.0 + 2.0 * g as f64 / FIT_GRID as f64).collect();
    let mut a = ComplexMatrix::zeros(FIT_GRID, m);
    for (g, &u) in grid.iter().enumerate() {
        for (k, z) in phase_ramp(m, u).iter().enumerate() {
            a[(g, k)] = z.conj();
        }
    }
    let target: Vec<C64> = grid
        .iter()
        .map(|u| C64::new(if u.abs() <= half_width { 1.0 } else { 0.0 }, 0.0))
        .collect();
    least_squares(&a, &target)
}

impl HierarchicalCodebook {
    /// Depth `floor(log2 m)`: the finest sectors are about one beamwidth.
    pub fn new(m: usize, range: AngleRange) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("codebook needs at least one antenna".into()));
        }
        let (lo, hi) = (range.min.sin(), range.max.sin());
        if !(hi > lo) {
            return Err(Error::InvalidArgument("empty codebook range".into()));
        }
        let depth = m.ilog2() as usize;
        let mut levels = Vec::with_capacity(depth + 1);
        for d in 0..=depth {
            let count = 1usize << d;
            let width = (hi - lo) / count as f64;
            let base = fitted_beam(m, width / 2.0)?;
            let beams = (0..count)
                .map(|i| {
                    let centre = lo + (i as f64 + 0.5) * width;
                    let ramp = phase_ramp(m, centre);
                    let w: Vec<C64> = base.iter().zip(&ramp).map(|(b, r)| b * r).collect();
                    unit_normalize(&w)
                })
                .collect::<Result<Vec<_>>>()?;
            levels.push(beams);
        }
        Ok(Self { m, lo, hi, levels })
    }

    pub fn antennas(&self) -> usize {
        self.m
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn beam(&self, level: usize, index: usize) -> &[C64] {
        &self.levels[level][index]
    }

    /// Sector `[lo, hi)` of `sin(angle)` covered by a beam.
    pub fn sector(&self, level: usize, index: usize) -> (f64, f64) {
        let width = (self.hi - self.lo) / (1usize << level) as f64;
        (self.lo + index as f64 * width, self.lo + (index + 1) as f64 * width)
    }

    pub fn contains(&self, level: usize, index: usize, angle: f64) -> bool {
        let (a, b) = self.sector(level, index);
        let s = angle.sin();
        let last = index + 1 == 1usize << level;
        s >= a && (s < b || (last && s <= b))
    }
}

/// Child choice after a probing window: the stronger one, the lower index
/// on a tie.
pub fn bisection_choice(p0: f64, p1: f64) -> usize {
    usize::from(p1 > p0)
}

/// One side's search state. Rounds `2k` and `2k + 1` form a window in which
/// the side listens with the two children of its current sector; the chosen
/// child becomes current once the window closes. Transmissions always use
/// the current sector beam, so the far side's comparison is not disturbed.
#[derive(Clone, Debug)]
pub struct BisectionSide<'c> {
    book: &'c HierarchicalCodebook,
    level: usize,
    index: usize,
    window: Vec<f64>,
    pending: Option<(usize, usize)>,
    history: Vec<(usize, usize)>,
}

impl<'c> BisectionSide<'c> {
    pub fn new(book: &'c HierarchicalCodebook) -> Self {
        Self {
            book,
            level: 0,
            index: 0,
            window: Vec::new(),
            pending: None,
            history: Vec::new(),
        }
    }

    pub fn current(&self) -> (usize, usize) {
        (self.level, self.index)
    }

    /// Every sector chosen so far, coarsest first.
    pub fn history(&self) -> &[(usize, usize)] {
        &self.history
    }

    pub fn transmit_beam(&self) -> &'c [C64] {
        self.book.beam(self.level, self.index)
    }

    /// Listening beam of round `l`; at the finest level it is the current beam.
    pub fn probe(&self, round: usize) -> &'c [C64] {
        if self.level < self.book.depth() {
            self.book.beam(self.level + 1, 2 * self.index + round % 2)
        } else {
            self.transmit_beam()
        }
    }

    pub fn observe(&mut self, round: usize, y: C64) {
        if self.level >= self.book.depth() {
            return;
        }
        if round % 2 == 0 {
            self.window.clear();
        }
        self.window.push(y.norm_sqr());
        if round % 2 == 1 && self.window.len() == 2 {
            let child = 2 * self.index + bisection_choice(self.window[0], self.window[1]);
            self.pending = Some((self.level + 1, child));
            self.history.push((self.level + 1, child));
            self.window.clear();
        }
    }

    pub fn commit(&mut self) {
        if let Some((level, index)) = self.pending.take() {
            self.level = level;
            self.index = index;
        }
    }
}

/// Hierarchical codebook search run independently by both sides on their
/// own pilots; needs no feedback.
#[derive(Clone, Debug, PartialEq)]
pub struct Bisection {
    pub tx: HierarchicalCodebook,
    pub rx: HierarchicalCodebook,
}

impl Bisection {
    pub fn new(geometry: Geometry, range: AngleRange) -> Result<Self> {
        Ok(Self {
            tx: HierarchicalCodebook::new(geometry.mt, range)?,
            rx: HierarchicalCodebook::new(geometry.mr, range)?,
        })
    }

    /// Sectors chosen by A and by B in an episode, replayed from its pilots.
    pub fn replay(&self, trace: &EpisodeTrace) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
        let mut a = BisectionSide::new(&self.tx);
        let mut b = BisectionSide::new(&self.rx);
        for (l, r) in trace.rounds.iter().enumerate() {
            b.observe(l, r.y_b);
            a.observe(l, r.y_a);
            a.commit();
            b.commit();
        }
        (a.history, b.history)
    }
}

struct BisectionTx<'c> {
    side: BisectionSide<'c>,
    seen: Vec<C64>,
}

impl TxAgent for BisectionTx<'_> {
    fn initial_sensing(&mut self) -> Result<(Vec<C64>, Vec<C64>)> {
        Ok((self.side.transmit_beam().to_vec(), self.side.probe(0).to_vec()))
    }
    fn observe(&mut self, round: usize, y: C64) -> Result<()> {
        self.seen.push(y);
        self.side.observe(round, y);
        Ok(())
    }
    fn next_sensing(&mut self, round: usize) -> Result<(Vec<C64>, Vec<C64>)> {
        self.side.commit();
        Ok((self.side.transmit_beam().to_vec(), self.side.probe(round + 1).to_vec()))
    }
    fn summary(&self) -> AgentSummary {
        AgentSummary {
            observations: self.seen.clone(),
            ..Default::default()
        }
    }
    fn finalize(&mut self, _feedback: Option<&[C64]>) -> Result<(Vec<C64>, Option<Vec<C64>>)> {
        self.side.commit();
        Ok((self.side.transmit_beam().to_vec(), None))
    }
}

struct BisectionRx<'c> {
    side: BisectionSide<'c>,
    seen: Vec<C64>,
}

impl RxAgent for BisectionRx<'_> {
    fn initial_receive(&mut self) -> Result<Vec<C64>> {
        Ok(self.side.probe(0).to_vec())
    }
    fn observe(&mut self, round: usize, y: C64) -> Result<()> {
        self.seen.push(y);
        self.side.observe(round, y);
        Ok(())
    }
    fn transmit_beam(&mut self, _round: usize) -> Result<Vec<C64>> {
        Ok(self.side.transmit_beam().to_vec())
    }
    fn next_receive(&mut self, round: usize) -> Result<Vec<C64>> {
        self.side.commit();
        Ok(self.side.probe(round + 1).to_vec())
    }
    fn summary(&self) -> AgentSummary {
        AgentSummary {
            observations: self.seen.clone(),
            ..Default::default()
        }
    }
    fn finalize(&mut self, _from_tx: Option<Vec<C64>>) -> Result<Vec<C64>> {
        self.side.commit();
        Ok(self.side.transmit_beam().to_vec())
    }
}

impl Policy for Bisection {
    fn name(&self) -> String {
        "bisection".into()
    }

    fn spawn<'a>(&'a self, ctx: &EpisodeContext<'a>) -> Result<Agents<'a>> {
        ctx.channel.direct_matrix()?;
        let geom = ctx.config.geometry;
        if geom.mt != self.tx.antennas() || geom.mr != self.rx.antennas() {
            return Err(Error::InvalidArgument("codebooks do not match the geometry".into()));
        }
        Ok(Agents {
            tx: Box::new(BisectionTx {
                side: BisectionSide::new(&self.tx),
                seen: Vec::new(),
            }),
            rx: Box::new(BisectionRx {
                side: BisectionSide::new(&self.rx),
                seen: Vec::new(),
            }),
            controller: None,
        })
    }
}
