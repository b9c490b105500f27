use crate::channel::LinkMode;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseStack, Graph, Mode, ParamId, ParameterStore, Tensor, Var};
use crate::numerics::{Rng, C64};
use crate::protocol::{
    AgentSummary, Agents, EpisodeContext, Feedback, Policy, ProtocolConfig, ReflectionController, RxAgent, TxAgent,
};

use super::batch::TrainBatch;
use super::{init_vector, NetConfig, SensingKind, Trainable};

#[derive(Clone, Copy, Debug)]
struct RoundSensing {
    wt_a: ParamId,
    wr_a: ParamId,
    wt_b: ParamId,
    wr_b: ParamId,
    v_ab: Option<ParamId>,
    v_ba: Option<ParamId>,
}

/// Sensing vectors that are the same in every episode, followed by decoders
/// that map all `2L` pilots to the final design. A receives B's pilots over
/// a feedback link and forwards B's combiner.
#[derive(Clone, Debug)]
pub struct FixedSensing {
    config: ProtocolConfig,
    kind: SensingKind,
    store: ParameterStore,
    rounds: Vec<RoundSensing>,
    dec_t: DenseStack,
    dec_r: DenseStack,
    dec_v: Option<DenseStack>,
}

impl FixedSensing {
    pub fn new(config: ProtocolConfig, net: NetConfig, kind: SensingKind, seed: u64) -> Result<Self> {
        config.validate()?;
        net.validate()?;
        let mut rng = Rng::new(seed);
        let mut store = ParameterStore::new();
        let geom = config.geometry;
        let ris = config.mode == LinkMode::Ris;
        let add = |store: &mut ParameterStore, name: String, m: usize, rng: &mut Rng| match kind {
            SensingKind::Random => store.add_buffer(&name, init_vector(m, rng)),
            SensingKind::Learned => store.add_param(&name, init_vector(m, rng)),
        };
        let mut rounds = Vec::with_capacity(config.rounds);
        for l in 0..config.rounds {
            let n = geom.ris_elements;
            rounds.push(RoundSensing {
                wt_a: add(&mut store, format!("sense.{l}.wt_a"), geom.mt, &mut rng)?,
                wr_a: add(&mut store, format!("sense.{l}.wr_a"), geom.mt, &mut rng)?,
                wt_b: add(&mut store, format!("sense.{l}.wt_b"), geom.mr, &mut rng)?,
                wr_b: add(&mut store, format!("sense.{l}.wr_b"), geom.mr, &mut rng)?,
                v_ab: if ris { Some(add(&mut store, format!("sense.{l}.v_ab"), n, &mut rng)?) } else { None },
                v_ba: if ris { Some(add(&mut store, format!("sense.{l}.v_ba"), n, &mut rng)?) } else { None },
            });
        }
        let input = 4 * config.rounds;
        let mut decoder = |store: &mut ParameterStore, name: &str, m: usize, act: Activation| {
            let mut sizes = net.head.clone();
            sizes.push(2 * m);
            DenseStack::new(store, name, input, &sizes, act, net.batch_norm, 1, &mut rng)
        };
        let dec_t = decoder(&mut store, "dec.t", geom.mt, Activation::UnitNorm)?;
        let dec_r = decoder(&mut store, "dec.r", geom.mr, Activation::UnitNorm)?;
        let dec_v = if ris {
            Some(decoder(&mut store, "dec.v", geom.ris_elements, Activation::UnitModulus)?)
        } else {
            None
        };
        Ok(Self {
            config,
            kind,
            store,
            rounds,
            dec_t,
            dec_r,
            dec_v,
        })
    }

    pub fn kind(&self) -> SensingKind {
        self.kind
    }

    fn broadcast(&self, g: &mut Graph<'_>, id: ParamId, rows: usize, act: Activation) -> Result<Var> {
        let p = g.param(id);
        let x = g.broadcast_rows(p, rows)?;
        act.apply(g, x)
    }

    fn vector(&self, id: ParamId, act: Activation) -> Result<Vec<C64>> {
        let mut g = Graph::new(&self.store, Mode::Eval);
        let v = self.broadcast(&mut g, id, 1, act)?;
        Ok(g.value(v).complex_row(0))
    }

    /// Sensing vectors of round `l` as `(w^A_t, w^A_r, w^B_t, w^B_r)`.
    pub fn sensing_vectors(&self, l: usize) -> Result<[Vec<C64>; 4]> {
        let r = self
            .rounds
            .get(l)
            .ok_or_else(|| Error::InvalidArgument(format!("round {l} out of range")))?;
        Ok([
            self.vector(r.wt_a, Activation::UnitNorm)?,
            self.vector(r.wr_a, Activation::UnitNorm)?,
            self.vector(r.wt_b, Activation::UnitNorm)?,
            self.vector(r.wr_b, Activation::UnitNorm)?,
        ])
    }

    fn decoder_input(&self, ya: &[C64], yb: &[C64]) -> Result<Tensor> {
        let l = self.config.rounds;
        if ya.len() != l || yb.len() != l {
            return Err(Error::InvalidArgument(format!(
                "decoder needs {l} pilots per side, got {} and {}",
                ya.len(),
                yb.len()
            )));
        }
        let data = ya.iter().chain(yb).flat_map(|z| [z.re, z.im]).collect();
        Ok(Tensor::row_vector(data))
    }

    fn decode(&self, net: &DenseStack, ya: &[C64], yb: &[C64]) -> Result<Vec<C64>> {
        let mut g = Graph::new(&self.store, Mode::Eval);
        let x = g.constant(self.decoder_input(ya, yb)?);
        let out = net.forward(&mut g, x, 0)?;
        Ok(g.value(out).complex_row(0))
    }
}

impl Trainable for FixedSensing {
    fn store(&self) -> &ParameterStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    fn unroll(&self, g: &mut Graph<'_>, batch: &TrainBatch) -> Result<Var> {
        let rows = batch.len();
        let (mut ya, mut yb) = (Vec::new(), Vec::new());
        for (l, r) in self.rounds.iter().enumerate() {
            let wt_a = self.broadcast(g, r.wt_a, rows, Activation::UnitNorm)?;
            let wr_a = self.broadcast(g, r.wr_a, rows, Activation::UnitNorm)?;
            let wt_b = self.broadcast(g, r.wt_b, rows, Activation::UnitNorm)?;
            let wr_b = self.broadcast(g, r.wr_b, rows, Activation::UnitNorm)?;
            let v_ab = r.v_ab.map(|id| self.broadcast(g, id, rows, Activation::UnitModulus)).transpose()?;
            let v_ba = r.v_ba.map(|id| self.broadcast(g, id, rows, Activation::UnitModulus)).transpose()?;
            yb.push(batch.pilot_ab(g, l, wt_a, wr_b, v_ab)?);
            ya.push(batch.pilot_ba(g, l, wt_b, wr_a, v_ba)?);
        }
        ya.extend(yb);
        let x = g.concat(&ya)?;
        let w_t = self.dec_t.forward(g, x, 0)?;
        let w_r = self.dec_r.forward(g, x, 0)?;
        let v = self.dec_v.as_ref().map(|d| d.forward(g, x, 0)).transpose()?;
        batch.gain(g, w_t, w_r, v)
    }
}

impl Policy for FixedSensing {
    fn name(&self) -> String {
        format!("{}-sensing", self.kind)
    }

    fn feedback(&self) -> Feedback {
        Feedback::RxObservationsToTx
    }

    fn spawn<'a>(&'a self, _ctx: &EpisodeContext<'a>) -> Result<Agents<'a>> {
        let controller = self
            .dec_v
            .as_ref()
            .map(|_| Box::new(FixedController { p: self }) as Box<dyn ReflectionController>);
        Ok(Agents {
            tx: Box::new(FixedTx { p: self, seen: Vec::new() }),
            rx: Box::new(FixedRx { p: self, seen: Vec::new() }),
            controller,
        })
    }
}

fn summary(seen: &[C64]) -> AgentSummary {
    AgentSummary {
        observations: seen.to_vec(),
        ..Default::default()
    }
}

struct FixedTx<'a> {
    p: &'a FixedSensing,
    seen: Vec<C64>,
}

impl FixedTx<'_> {
    fn sensing(&self, l: usize) -> Result<(Vec<C64>, Vec<C64>)> {
        let r = self.p.rounds[l];
        Ok((self.p.vector(r.wt_a, Activation::UnitNorm)?, self.p.vector(r.wr_a, Activation::UnitNorm)?))
    }
}

impl TxAgent for FixedTx<'_> {
    fn initial_sensing(&mut self) -> Result<(Vec<C64>, Vec<C64>)> {
        self.sensing(0)
    }

    fn observe(&mut self, _round: usize, y: C64) -> Result<()> {
        self.seen.push(y);
        Ok(())
    }

    fn next_sensing(&mut self, round: usize) -> Result<(Vec<C64>, Vec<C64>)> {
        self.sensing(round + 1)
    }

    fn summary(&self) -> AgentSummary {
        summary(&self.seen)
    }

    fn finalize(&mut self, feedback: Option<&[C64]>) -> Result<(Vec<C64>, Option<Vec<C64>>)> {
        let yb = feedback.ok_or_else(|| Error::InvalidArgument("fixed-sensing decoder needs B's pilots".into()))?;
        let w_t = self.p.decode(&self.p.dec_t, &self.seen, yb)?;
        let w_r = self.p.decode(&self.p.dec_r, &self.seen, yb)?;
        Ok((w_t, Some(w_r)))
    }
}

struct FixedRx<'a> {
    p: &'a FixedSensing,
    seen: Vec<C64>,
}

impl RxAgent for FixedRx<'_> {
    fn initial_receive(&mut self) -> Result<Vec<C64>> {
        self.p.vector(self.p.rounds[0].wr_b, Activation::UnitNorm)
    }

    fn observe(&mut self, _round: usize, y: C64) -> Result<()> {
        self.seen.push(y);
        Ok(())
    }

    fn transmit_beam(&mut self, round: usize) -> Result<Vec<C64>> {
        self.p.vector(self.p.rounds[round].wt_b, Activation::UnitNorm)
    }

    fn next_receive(&mut self, round: usize) -> Result<Vec<C64>> {
        self.p.vector(self.p.rounds[round + 1].wr_b, Activation::UnitNorm)
    }

    fn summary(&self) -> AgentSummary {
        summary(&self.seen)
    }

    fn finalize(&mut self, from_tx: Option<Vec<C64>>) -> Result<Vec<C64>> {
        from_tx.ok_or_else(|| Error::InvalidArgument("B's combiner is designed at A and must be forwarded".into()))
    }
}

struct FixedController<'a> {
    p: &'a FixedSensing,
}

impl FixedController<'_> {
    fn reflection(&self, id: Option<ParamId>) -> Result<Vec<C64>> {
        let id = id.ok_or_else(|| Error::InvalidArgument("policy was built for a direct link".into()))?;
        self.p.vector(id, Activation::UnitModulus)
    }
}

impl ReflectionController for FixedController<'_> {
    fn initial(&mut self) -> Result<Vec<C64>> {
        self.reflection(self.p.rounds[0].v_ab)
    }

    fn design_ba(&mut self, round: usize, _a: &AgentSummary, _b: &AgentSummary) -> Result<Vec<C64>> {
        self.reflection(self.p.rounds[round].v_ba)
    }

    fn design_ab(&mut self, round: usize, _a: &AgentSummary, _b: &AgentSummary) -> Result<Vec<C64>> {
        self.reflection(self.p.rounds[round + 1].v_ab)
    }

    fn finalize(&mut self, a: &AgentSummary, b: &AgentSummary) -> Result<Vec<C64>> {
        let dec = self.p.dec_v.as_ref().expect("controller exists only on RIS links");
        self.p.decode(dec, &a.observations, &b.observations)
    }
}
