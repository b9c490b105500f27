use std::fmt::Write as _;

use crate::channel::ChannelModel;
use crate::error::{Error, Result};
use crate::nn::{Adam, Graph, Mode, ParameterStore};
use crate::numerics::Rng;
use crate::policies::{TrainBatch, Trainable};

const TRAIN_STREAM: u64 = 0x5452_4149;
const VALID_STREAM: u64 = 0x5641_4c49;
/// Rows per validation graph; bounds memory at large validation sizes.
const VALID_CHUNK: usize = 1000;
pub const BN_MOMENTUM: f64 = 0.99;

/// Optimizer and stopping schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub max_epochs: usize,
    pub validation_size: usize,
    /// Epochs without a new best validation gain before the learning rate
    /// drops, or training stops once no drops remain.
    pub patience: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_drops: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            steps_per_epoch: 100,
            max_epochs: 500,
            validation_size: 10_000,
            patience: 10,
            lr: 1e-3,
            lr_decay: 0.1,
            lr_drops: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be at least 2".into()));
        }
        if self.validation_size == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument("validation size and patience must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(Error::InvalidArgument("need lr > 0 and 0 < lr_decay < 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    /// Mean training-batch gain over the epoch; none before training.
    pub train_gain: Option<f64>,
    pub validation_gain: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearningCurve {
    /// Epoch 0 is the untrained model.
    pub epochs: Vec<EpochRecord>,
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,steps,lr,train_gain,validation_gain\n");
        for e in &self.epochs {
            let train = e.train_gain.map(|g| g.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{:e},{},{}", e.epoch, e.steps, e.lr, train, e.validation_gain);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub curve: LearningCurve,
    pub best_epoch: usize,
    pub best_validation: f64,
    pub steps: usize,
}

/// Fixed noisy validation set, split into graph-sized chunks.
pub fn validation_set(policy: &impl Trainable, model: &ChannelModel, size: usize, seed: u64) -> Result<Vec<TrainBatch>> {
    let mut rng = Rng::with_stream(seed, VALID_STREAM);
    let mut out = Vec::new();
    let mut left = size;
    while left > 0 {
        let n = left.min(VALID_CHUNK);
        out.push(TrainBatch::sample(policy.config(), model, n, &mut rng)?);
        left -= n;
    }
    Ok(out)
}

/// Mean gain of the evaluation-mode network over `set`.
pub fn batched_gain(policy: &impl Trainable, set: &[TrainBatch]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for batch in set {
        let mut g = Graph::new(policy.store(), Mode::Eval);
        let gains = policy.unroll(&mut g, batch)?;
        sum += g.value(gains).as_slice().iter().sum::<f64>();
        n += batch.len();
    }
    Ok(sum / n as f64)
}

/// One Adam step on `-mean gain`; returns the batch's mean gain.
pub fn train_step(policy: &mut impl Trainable, batch: &TrainBatch, opt: &Adam) -> Result<f64> {
    let (grads, updates, gain) = {
        let mut g = Graph::new(policy.store(), Mode::Train);
        let gains = policy.unroll(&mut g, batch)?;
        let mean = g.mean(gains);
        let gain = g.value(mean).get(0, 0);
        let loss = g.scale(mean, -1.0);
        let grads = g.backward(loss)?;
        (grads, g.take_bn_updates(), gain)
    };
    if !gain.is_finite() {
        return Err(Error::Divergence { step: policy.store().step() as usize });
    }
    let store = policy.store_mut();
    store.set_gradients(&grads);
    store.adam_step(opt)?;
    store.apply_bn_updates(&updates, BN_MOMENTUM);
    Ok(gain)
}

fn finite(store: &ParameterStore) -> bool {
    store.ids().all(|id| store.value(id).as_slice().iter().all(|x| x.is_finite()))
}

/// Minimizes `-E[gain]` with Adam on fresh batches from `model`. Each epoch
/// ends with a validation pass; after `patience` epochs without improvement
/// the learning rate is multiplied by `lr_decay`, and once `lr_drops` drops
/// are spent training stops. The best-validation parameters are restored.
///
/// On a non-finite loss or parameters the policy is reset to the best
/// parameters seen so far and `Error::Divergence` is returned.
pub fn train(policy: &mut impl Trainable, model: &ChannelModel, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let valid = validation_set(policy, model, cfg.validation_size, cfg.seed)?;
    let mut best_store = policy.store().clone();
    let mut best = match batched_gain(policy, &valid) {
        Ok(v) if v.is_finite() => v,
        Ok(_) | Err(Error::Degenerate(_)) => return Err(Error::Divergence { step: 0 }),
        Err(e) => return Err(e),
    };
    let mut curve = LearningCurve {
        epochs: vec![EpochRecord {
            epoch: 0,
            steps: 0,
            lr: cfg.lr,
            train_gain: None,
            validation_gain: best,
        }],
    };
    let mut best_epoch = 0;
    let mut opt = Adam::new(cfg.lr);
    let (mut stale, mut drops, mut steps) = (0, 0, 0);

    for epoch in 1..=cfg.max_epochs {
        let mut sum = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let mut rng = Rng::with_stream(cfg.seed, TRAIN_STREAM + steps as u64);
            let batch = TrainBatch::sample(policy.config(), model, cfg.batch_size, &mut rng)?;
            match train_step(policy, &batch, &opt) {
                Ok(gain) => sum += gain,
                Err(Error::Divergence { .. } | Error::Degenerate(_)) => {
                    *policy.store_mut() = best_store;
                    return Err(Error::Divergence { step: steps });
                }
                Err(e) => return Err(e),
            }
            steps += 1;
        }
        if !finite(policy.store()) {
            *policy.store_mut() = best_store;
            return Err(Error::Divergence { step: steps });
        }
        let v = match batched_gain(policy, &valid) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::Degenerate(_)) => {
                *policy.store_mut() = best_store;
                return Err(Error::Divergence { step: steps });
            }
            Err(e) => return Err(e),
        };
        curve.epochs.push(EpochRecord {
            epoch,
            steps,
            lr: opt.lr,
            train_gain: Some(sum / cfg.steps_per_epoch.max(1) as f64),
            validation_gain: v,
        });
        if v > best {
            best = v;
            best_epoch = epoch;
            best_store = policy.store().clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                if drops == cfg.lr_drops {
                    break;
                }
                drops += 1;
                stale = 0;
                opt.lr *= cfg.lr_decay;
            }
        }
    }
    *policy.store_mut() = best_store;
    Ok(TrainReport {
        curve,
        best_epoch,
        best_validation: best,
        steps,
    })
}
