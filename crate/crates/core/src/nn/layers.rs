use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::graph::{Graph, Var};
use super::store::{ParamId, ParameterStore};
use super::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-5;

/// Output nonlinearity of a [`DenseStack`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    /// Reads the output as `[Re | Im]` halves and scales it to unit norm.
    UnitNorm,
    /// Reads the output as `[Re | Im]` halves and keeps only each entry's phase.
    UnitModulus,
}

impl Activation {
    pub fn apply(self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::UnitNorm => g.unit_norm(x),
            Activation::UnitModulus => g.unit_modulus(x),
        }
    }
}

/// Affine layer `x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(store: &mut ParameterStore, name: &str, input: usize, output: usize, rng: &mut Rng) -> Result<Self> {
        let w = store.add_param(&format!("{name}.w"), Tensor::glorot(input, output, rng))?;
        let b = store.add_param(&format!("{name}.b"), Tensor::zeros(1, output))?;
        Ok(Self { w, b, input, output })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        if g.shape(x).1 != self.input {
            return Err(Error::Dimension {
                op: "dense",
                lhs: g.shape(x),
                rhs: (self.input, self.output),
            });
        }
        let (w, b) = (g.param(self.w), g.param(self.b));
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// Batch normalization with a shared scale/shift and one set of running
/// statistics per slot. Slots let a layer that is reused across sensing
/// rounds keep separate statistics for each round's input distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running: Vec<(ParamId, ParamId)>,
}

impl BatchNorm {
    pub fn new(store: &mut ParameterStore, name: &str, width: usize, slots: usize) -> Result<Self> {
        let gamma = store.add_param(&format!("{name}.gamma"), Tensor::filled(1, width, 1.0))?;
        let beta = store.add_param(&format!("{name}.beta"), Tensor::zeros(1, width))?;
        let running = (0..slots.max(1))
            .map(|s| {
                let m = store.add_buffer(&format!("{name}.mean.{s}"), Tensor::zeros(1, width))?;
                let v = store.add_buffer(&format!("{name}.var.{s}"), Tensor::filled(1, width, 1.0))?;
                Ok((m, v))
            })
            .collect::<Result<_>>()?;
        Ok(Self { gamma, beta, running })
    }

    /// Slots beyond the last reuse the last one.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, slot: usize) -> Result<Var> {
        let (m, v) = self.running[slot.min(self.running.len() - 1)];
        g.batch_norm(x, self.gamma, self.beta, m, v, BN_EPS)
    }
}

/// Fully connected network: affine, optional batch norm and ReLU for every
/// hidden layer, then a final affine followed by the output activation.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseStack {
    pub layers: Vec<Dense>,
    pub norms: Vec<BatchNorm>,
    pub output: Activation,
}

impl DenseStack {
    /// `sizes` lists the output width of every layer, the last being the
    /// network output.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        input: usize,
        sizes: &[usize],
        output: Activation,
        batch_norm: bool,
        slots: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidArgument(format!("`{name}` needs at least one layer")));
        }
        let mut layers = Vec::with_capacity(sizes.len());
        let mut norms = Vec::new();
        let mut width = input;
        for (k, &s) in sizes.iter().enumerate() {
            layers.push(Dense::new(store, &format!("{name}.{k}"), width, s, rng)?);
            if batch_norm && k + 1 < sizes.len() {
                norms.push(BatchNorm::new(store, &format!("{name}.{k}.bn"), s, slots)?);
            }
            width = s;
        }
        Ok(Self { layers, norms, output })
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, slot: usize) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if k < last {
                if let Some(bn) = self.norms.get(k) {
                    h = bn.forward(g, h, slot)?;
                }
                h = g.relu(h);
            }
        }
        self.output.apply(g, h)
    }
}

/// Recurrent state of an [`Lstm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmState {
    pub c: Var,
    pub s: Var,
}

const GATES: [&str; 4] = ["f", "i", "o", "c"];

/// LSTM cell with separate input (`W`), recurrent (`U`) and bias (`b`)
/// tensors for the forget, input, output and candidate gates, in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub w: [ParamId; 4],
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParameterStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for gate in GATES {
            w.push(store.add_param(&format!("{name}.w_{gate}"), Tensor::glorot(input, hidden, rng))?);
            u.push(store.add_param(&format!("{name}.u_{gate}"), Tensor::glorot(hidden, hidden, rng))?);
            let bias = if gate == "f" { 1.0 } else { 0.0 };
            b.push(store.add_param(&format!("{name}.b_{gate}"), Tensor::filled(1, hidden, bias))?);
        }
        Ok(Self {
            w: w.try_into().expect("four gates"),
            u: u.try_into().expect("four gates"),
            b: b.try_into().expect("four gates"),
            input,
            hidden,
        })
    }

    /// `c = 0`, `s = 0` for a batch of `rows`.
    pub fn zero_state(&self, g: &mut Graph<'_>, rows: usize) -> LstmState {
        let c = g.constant(Tensor::zeros(rows, self.hidden));
        let s = g.constant(Tensor::zeros(rows, self.hidden));
        LstmState { c, s }
    }

    fn gate(&self, g: &mut Graph<'_>, k: usize, state: &LstmState, x: Var) -> Result<Var> {
        let (w, u, b) = (g.param(self.w[k]), g.param(self.u[k]), g.param(self.b[k]));
        let xw = g.matmul(x, w)?;
        let su = g.matmul(state.s, u)?;
        let pre = g.add(xw, su)?;
        g.add_row(pre, b)
    }

    pub fn step(&self, g: &mut Graph<'_>, state: &LstmState, x: Var) -> Result<LstmState> {
        if g.shape(x).1 != self.input {
            return Err(Error::Dimension {
                op: "lstm_step",
                lhs: g.shape(x),
                rhs: (self.input, self.hidden),
            });
        }
        let f = self.gate(g, 0, state, x)?;
        let f = g.sigmoid(f);
        let i = self.gate(g, 1, state, x)?;
        let i = g.sigmoid(i);
        let o = self.gate(g, 2, state, x)?;
        let o = g.sigmoid(o);
        let cand = self.gate(g, 3, state, x)?;
        let cand = g.tanh(cand);
        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let s = g.mul(o, tc)?;
        Ok(LstmState { c, s })
    }
}
