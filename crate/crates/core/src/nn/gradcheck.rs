use crate::error::Result;

use super::graph::{Graph, Mode, Var};
use super::store::ParameterStore;

/// Smallest denominator of a relative error, as a fraction of the global
/// analytic gradient norm (with an absolute minimum of the same value).
pub const REL_FLOOR: f64 = 1e-6;

/// Agreement between analytic and central-difference gradients for one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||, floor)` with
    /// `floor = REL_FLOOR * max(1, global gradient norm)`. The floor keeps
    /// tensors whose true gradient is zero (a bias feeding batch
    /// normalization, for instance) from dividing rounding noise by itself.
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

/// Compares reverse-mode gradients of the scalar built by `build` with
/// central differences of step `h`, for every trainable tensor.
pub fn gradient_check<F>(store: &ParameterStore, h: f64, build: F) -> Result<Vec<TensorCheck>>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store, Mode::Train);
        let loss = build(&mut g)?;
        g.backward(loss)?
    };
    let eval = |s: &ParameterStore| -> Result<f64> {
        let mut g = Graph::new(s, Mode::Train);
        let loss = build(&mut g)?;
        Ok(g.value(loss).get(0, 0))
    };

    let global = store
        .trainable_ids()
        .filter_map(|id| analytic.get(id))
        .map(|t| t.norm().powi(2))
        .sum::<f64>()
        .sqrt();
    let floor = REL_FLOOR * global.max(1.0);
    let mut work = store.clone();
    let ids: Vec<_> = store.trainable_ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.value(id).len();
        let mut numeric = vec![0.0; n];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = store.value(id).as_slice()[k];
            work.value_mut(id).as_mut_slice()[k] = orig + h;
            let up = eval(&work)?;
            work.value_mut(id).as_mut_slice()[k] = orig - h;
            let down = eval(&work)?;
            work.value_mut(id).as_mut_slice()[k] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let zeros = vec![0.0; n];
        let a = analytic.get(id).map_or(&zeros[..], |t| t.as_slice());
        let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let an = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let denom = an.max(nn).max(floor);
        out.push(TensorCheck {
            name: store.name(id).to_string(),
            rel_error: diff / denom,
            analytic_norm: an,
            numeric_norm: nn,
        });
    }
    Ok(out)
}
