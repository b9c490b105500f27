use crate::channel::LinkMode;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseStack, Graph, Lstm, LstmState, Mode, ParamId, ParameterStore, Tensor, Var};
use crate::numerics::{Rng, C64};
use crate::protocol::{
    AgentSummary, Agents, EpisodeContext, Policy, ProtocolConfig, ReflectionController, RxAgent, TxAgent,
};

use super::batch::TrainBatch;
use super::{init_vector, scalar_input, NetConfig, RisSensing, Trainable, RIS_STREAM};

/// LSTM, sensing heads and final head of one agent.
#[derive(Clone, Debug)]
struct SideNet {
    lstm: Lstm,
    f_t: DenseStack,
    f_r: DenseStack,
    g: DenseStack,
}

impl SideNet {
    fn new(store: &mut ParameterStore, name: &str, m: usize, hidden: usize, net: &NetConfig, slots: usize, rng: &mut Rng) -> Result<Self> {
        let mut sizes = net.head.clone();
        sizes.push(2 * m);
        let head = |store: &mut ParameterStore, tag: &str, slots: usize, rng: &mut Rng| {
            DenseStack::new(store, &format!("{name}.{tag}"), hidden, &sizes, Activation::UnitNorm, net.batch_norm, slots, rng)
        };
        Ok(Self {
            lstm: Lstm::new(store, &format!("{name}.lstm"), 2, hidden, rng)?,
            f_t: head(store, "f_t", slots, rng)?,
            f_r: head(store, "f_r", slots, rng)?,
            g: head(store, "g", 1, rng)?,
        })
    }
}

#[derive(Clone, Debug)]
struct RisNet {
    /// `v^{AB}_0` only when active, one vector per round when learned.
    fixed_ab: Vec<ParamId>,
    fixed_ba: Vec<ParamId>,
    f_ab: Option<DenseStack>,
    f_ba: Option<DenseStack>,
    g_v: DenseStack,
}

/// Two-sided LSTM active-sensing policy, optionally with a learned surface
/// controller.
#[derive(Clone, Debug)]
pub struct ActiveSensing {
    config: ProtocolConfig,
    net: NetConfig,
    ris_sensing: RisSensing,
    store: ParameterStore,
    a: SideNet,
    b: SideNet,
    wt_a0: ParamId,
    wr_a0: ParamId,
    wr_b0: ParamId,
    ris: Option<RisNet>,
}

impl ActiveSensing {
    pub fn new(config: ProtocolConfig, net: NetConfig, ris_sensing: RisSensing, seed: u64) -> Result<Self> {
        config.validate()?;
        net.validate()?;
        let mut rng = Rng::new(seed);
        let mut store = ParameterStore::new();
        let geom = config.geometry;
        let slots = config.rounds;
        let a = SideNet::new(&mut store, "a", geom.mt, net.hidden_a, &net, slots, &mut rng)?;
        let b = SideNet::new(&mut store, "b", geom.mr, net.hidden_b, &net, slots, &mut rng)?;
        let wt_a0 = store.add_param("init.wt_a", init_vector(geom.mt, &mut rng))?;
        let wr_a0 = store.add_param("init.wr_a", init_vector(geom.mt, &mut rng))?;
        let wr_b0 = store.add_param("init.wr_b", init_vector(geom.mr, &mut rng))?;
        let ris = if config.mode == LinkMode::Ris {
            let n = geom.ris_elements;
            let joint_h = net.hidden_a + net.hidden_b;
            let mut sizes = net.head.clone();
            sizes.push(2 * n);
            let mut head = |store: &mut ParameterStore, tag: &str, slots: usize| {
                DenseStack::new(store, &format!("ris.{tag}"), joint_h, &sizes, Activation::UnitModulus, net.batch_norm, slots, &mut rng)
            };
            let (f_ab, f_ba) = if ris_sensing == RisSensing::Active {
                (Some(head(&mut store, "f_ab", slots)?), Some(head(&mut store, "f_ba", slots)?))
            } else {
                (None, None)
            };
            let g_v = head(&mut store, "g_v", 1)?;
            let (mut fixed_ab, mut fixed_ba) = (Vec::new(), Vec::new());
            match ris_sensing {
                RisSensing::Active => fixed_ab.push(store.add_param("ris.v_ab.0", init_vector(n, &mut rng))?),
                RisSensing::Learned => {
                    for l in 0..config.rounds {
                        fixed_ab.push(store.add_param(&format!("ris.v_ab.{l}"), init_vector(n, &mut rng))?);
                        fixed_ba.push(store.add_param(&format!("ris.v_ba.{l}"), init_vector(n, &mut rng))?);
                    }
                }
                RisSensing::Random => {}
            }
            Some(RisNet {
                fixed_ab,
                fixed_ba,
                f_ab,
                f_ba,
                g_v,
            })
        } else {
            None
        };
        Ok(Self {
            config,
            net,
            ris_sensing,
            store,
            a,
            b,
            wt_a0,
            wr_a0,
            wr_b0,
            ris,
        })
    }

    pub fn net(&self) -> &NetConfig {
        &self.net
    }

    pub fn ris_sensing(&self) -> RisSensing {
        self.ris_sensing
    }

    fn ris(&self) -> Result<&RisNet> {
        self.ris
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("policy was built for a direct link".into()))
    }

    /// `(w^A_{t,0}, w^A_{r,0}, w^B_{r,0})` broadcast to `rows`.
    fn initial(&self, g: &mut Graph<'_>, rows: usize) -> Result<(Var, Var, Var)> {
        let mut one = |id: ParamId| -> Result<Var> {
            let p = g.param(id);
            let x = g.broadcast_rows(p, rows)?;
            g.unit_norm(x)
        };
        Ok((one(self.wt_a0)?, one(self.wr_a0)?, one(self.wr_b0)?))
    }

    fn fixed_reflection(&self, g: &mut Graph<'_>, id: ParamId, rows: usize) -> Result<Var> {
        let p = g.param(id);
        let x = g.broadcast_rows(p, rows)?;
        g.unit_modulus(x)
    }

    /// `v^{AB}_l` from the hidden states after round `l - 1`.
    fn reflection_ab(&self, g: &mut Graph<'_>, l: usize, s_a: Var, s_b: Var, random: impl FnOnce(&mut Graph<'_>) -> Var) -> Result<Var> {
        let ris = self.ris()?;
        let rows = g.shape(s_a).0;
        match self.ris_sensing {
            RisSensing::Active if l == 0 => self.fixed_reflection(g, ris.fixed_ab[0], rows),
            RisSensing::Active => {
                let x = g.concat(&[s_a, s_b])?;
                ris.f_ab.as_ref().expect("active heads").forward(g, x, l - 1)
            }
            RisSensing::Learned => self.fixed_reflection(g, ris.fixed_ab[l], rows),
            RisSensing::Random => Ok(random(g)),
        }
    }

    /// `v^{BA}_l` from `s^A_{l-1}` and `s^B_l`.
    fn reflection_ba(&self, g: &mut Graph<'_>, l: usize, s_a: Var, s_b: Var, random: impl FnOnce(&mut Graph<'_>) -> Var) -> Result<Var> {
        let ris = self.ris()?;
        let rows = g.shape(s_a).0;
        match self.ris_sensing {
            RisSensing::Active => {
                let x = g.concat(&[s_a, s_b])?;
                ris.f_ba.as_ref().expect("active heads").forward(g, x, l)
            }
            RisSensing::Learned => self.fixed_reflection(g, ris.fixed_ba[l], rows),
            RisSensing::Random => Ok(random(g)),
        }
    }

    fn final_reflection(&self, g: &mut Graph<'_>, c_a: Var, c_b: Var) -> Result<Var> {
        let x = g.concat(&[c_a, c_b])?;
        self.ris()?.g_v.forward(g, x, 0)
    }
}

impl Trainable for ActiveSensing {
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
        let rounds = self.config.rounds;
        let ris = self.config.mode == LinkMode::Ris;
        let (mut wt_a, mut wr_a, mut wr_b) = self.initial(g, rows)?;
        let mut sa = self.a.lstm.zero_state(g, rows);
        let mut sb = self.b.lstm.zero_state(g, rows);
        let mut v_ab = if ris {
            Some(self.reflection_ab(g, 0, sa.s, sb.s, |g| g.constant(batch.random_phases(0, true).clone()))?)
        } else {
            None
        };
        for l in 0..rounds {
            let y_b = batch.pilot_ab(g, l, wt_a, wr_b, v_ab)?;
            sb = self.b.lstm.step(g, &sb, y_b)?;
            let wt_b = self.b.f_t.forward(g, sb.s, l)?;
            let v_ba = if ris {
                Some(self.reflection_ba(g, l, sa.s, sb.s, |g| g.constant(batch.random_phases(l, false).clone()))?)
            } else {
                None
            };
            let y_a = batch.pilot_ba(g, l, wt_b, wr_a, v_ba)?;
            sa = self.a.lstm.step(g, &sa, y_a)?;
            if l + 1 < rounds {
                wt_a = self.a.f_t.forward(g, sa.s, l)?;
                wr_a = self.a.f_r.forward(g, sa.s, l)?;
                wr_b = self.b.f_r.forward(g, sb.s, l)?;
                if ris {
                    let next = l + 1;
                    v_ab = Some(self.reflection_ab(g, next, sa.s, sb.s, |g| {
                        g.constant(batch.random_phases(next, true).clone())
                    })?);
                }
            }
        }
        let w_t = self.a.g.forward(g, sa.c, 0)?;
        let w_r = self.b.g.forward(g, sb.c, 0)?;
        let v = if ris { Some(self.final_reflection(g, sa.c, sb.c)?) } else { None };
        batch.gain(g, w_t, w_r, v)
    }
}

impl Policy for ActiveSensing {
    fn name(&self) -> String {
        match self.config.mode {
            LinkMode::Direct => "active".into(),
            LinkMode::Ris => format!("active-ris-{}", self.ris_sensing),
        }
    }

    fn spawn<'a>(&'a self, ctx: &EpisodeContext<'a>) -> Result<Agents<'a>> {
        let controller = match self.config.mode {
            LinkMode::Direct => None,
            LinkMode::Ris => Some(Box::new(ActiveController {
                p: self,
                rng: Rng::with_stream(ctx.seed, RIS_STREAM),
            }) as Box<dyn ReflectionController>),
        };
        Ok(Agents {
            tx: Box::new(ActiveTx {
                p: self,
                side: SideState::new(self.net.hidden_a),
            }),
            rx: Box::new(ActiveRx {
                p: self,
                side: SideState::new(self.net.hidden_b),
            }),
            controller,
        })
    }
}

/// Recurrent state of one agent between rounds.
struct SideState {
    c: Tensor,
    s: Tensor,
    seen: Vec<C64>,
}

impl SideState {
    fn new(hidden: usize) -> Self {
        Self {
            c: Tensor::zeros(1, hidden),
            s: Tensor::zeros(1, hidden),
            seen: Vec::new(),
        }
    }

    fn observe(&mut self, store: &ParameterStore, lstm: &Lstm, y: C64) -> Result<()> {
        let mut g = Graph::new(store, Mode::Eval);
        let state = LstmState {
            c: g.constant(self.c.clone()),
            s: g.constant(self.s.clone()),
        };
        let x = scalar_input(&mut g, y);
        let next = lstm.step(&mut g, &state, x)?;
        self.c = g.value(next.c).clone();
        self.s = g.value(next.s).clone();
        self.seen.push(y);
        Ok(())
    }

    fn head(&self, store: &ParameterStore, net: &DenseStack, slot: usize, cell: bool) -> Result<Vec<C64>> {
        let mut g = Graph::new(store, Mode::Eval);
        let x = g.constant(if cell { self.c.clone() } else { self.s.clone() });
        let out = net.forward(&mut g, x, slot)?;
        Ok(g.value(out).complex_row(0))
    }

    fn summary(&self) -> AgentSummary {
        AgentSummary {
            hidden: self.s.as_slice().to_vec(),
            cell: self.c.as_slice().to_vec(),
            observations: self.seen.clone(),
        }
    }
}

fn require_observations(side: &SideState, who: &str) -> Result<()> {
    if side.seen.is_empty() {
        return Err(Error::InvalidArgument(format!("{who} finalized before any observation")));
    }
    Ok(())
}

struct ActiveTx<'a> {
    p: &'a ActiveSensing,
    side: SideState,
}

impl TxAgent for ActiveTx<'_> {
    fn initial_sensing(&mut self) -> Result<(Vec<C64>, Vec<C64>)> {
        let mut g = Graph::new(&self.p.store, Mode::Eval);
        let (wt, wr, _) = self.p.initial(&mut g, 1)?;
        Ok((g.value(wt).complex_row(0), g.value(wr).complex_row(0)))
    }

    fn observe(&mut self, _round: usize, y: C64) -> Result<()> {
        self.side.observe(&self.p.store, &self.p.a.lstm, y)
    }

    fn next_sensing(&mut self, round: usize) -> Result<(Vec<C64>, Vec<C64>)> {
        let wt = self.side.head(&self.p.store, &self.p.a.f_t, round, false)?;
        let wr = self.side.head(&self.p.store, &self.p.a.f_r, round, false)?;
        Ok((wt, wr))
    }

    fn summary(&self) -> AgentSummary {
        self.side.summary()
    }

    fn finalize(&mut self, _feedback: Option<&[C64]>) -> Result<(Vec<C64>, Option<Vec<C64>>)> {
        require_observations(&self.side, "agent A")?;
        Ok((self.side.head(&self.p.store, &self.p.a.g, 0, true)?, None))
    }
}

struct ActiveRx<'a> {
    p: &'a ActiveSensing,
    side: SideState,
}

impl RxAgent for ActiveRx<'_> {
    fn initial_receive(&mut self) -> Result<Vec<C64>> {
        let mut g = Graph::new(&self.p.store, Mode::Eval);
        let (_, _, wr) = self.p.initial(&mut g, 1)?;
        Ok(g.value(wr).complex_row(0))
    }

    fn observe(&mut self, _round: usize, y: C64) -> Result<()> {
        self.side.observe(&self.p.store, &self.p.b.lstm, y)
    }

    fn transmit_beam(&mut self, round: usize) -> Result<Vec<C64>> {
        self.side.head(&self.p.store, &self.p.b.f_t, round, false)
    }

    fn next_receive(&mut self, round: usize) -> Result<Vec<C64>> {
        self.side.head(&self.p.store, &self.p.b.f_r, round, false)
    }

    fn summary(&self) -> AgentSummary {
        self.side.summary()
    }

    fn finalize(&mut self, _from_tx: Option<Vec<C64>>) -> Result<Vec<C64>> {
        require_observations(&self.side, "agent B")?;
        self.side.head(&self.p.store, &self.p.b.g, 0, true)
    }
}

struct ActiveController<'a> {
    p: &'a ActiveSensing,
    rng: Rng,
}

impl ActiveController<'_> {
    fn run(&mut self, f: impl FnOnce(&ActiveSensing, &mut Graph<'_>, Var) -> Result<Var>) -> Result<Vec<C64>> {
        let n = self.p.config.geometry.ris_elements;
        let phases = Tensor::from_complex_rows(&[self.rng.unit_phases(n)])?;
        let mut g = Graph::new(&self.p.store, Mode::Eval);
        let random = g.constant(phases);
        let out = f(self.p, &mut g, random)?;
        Ok(g.value(out).complex_row(0))
    }
}

fn state_vars(g: &mut Graph<'_>, a: &[f64], b: &[f64]) -> (Var, Var) {
    let va = g.constant(Tensor::row_vector(a.to_vec()));
    let vb = g.constant(Tensor::row_vector(b.to_vec()));
    (va, vb)
}

impl ReflectionController for ActiveController<'_> {
    fn initial(&mut self) -> Result<Vec<C64>> {
        let (ha, hb) = (self.p.net.hidden_a, self.p.net.hidden_b);
        self.run(|p, g, random| {
            let (sa, sb) = state_vars(g, &vec![0.0; ha], &vec![0.0; hb]);
            p.reflection_ab(g, 0, sa, sb, |_| random)
        })
    }

    fn design_ba(&mut self, round: usize, a: &AgentSummary, b: &AgentSummary) -> Result<Vec<C64>> {
        self.run(|p, g, random| {
            let (sa, sb) = state_vars(g, &a.hidden, &b.hidden);
            p.reflection_ba(g, round, sa, sb, |_| random)
        })
    }

    fn design_ab(&mut self, round: usize, a: &AgentSummary, b: &AgentSummary) -> Result<Vec<C64>> {
        self.run(|p, g, random| {
            let (sa, sb) = state_vars(g, &a.hidden, &b.hidden);
            p.reflection_ab(g, round + 1, sa, sb, |_| random)
        })
    }

    fn finalize(&mut self, a: &AgentSummary, b: &AgentSummary) -> Result<Vec<C64>> {
        self.run(|p, g, _| {
            let (ca, cb) = state_vars(g, &a.cell, &b.cell);
            p.final_reflection(g, ca, cb)
        })
    }
}
