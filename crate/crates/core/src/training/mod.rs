//! Optimization: loss, Adam, plateau learning-rate schedule, early stopping
//! on validation UWA, and the fold × repetition grid.

pub mod grid;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::data::{LoadedDataset, StandardScaler};
use crate::error::{Error, Result};
use crate::layers::Dropout;
use crate::model::FusionModel;
use crate::schema::Modality;
use crate::stats::ConfusionMatrix;
use crate::tensor::Tensor;

pub use grid::{
    read_results, run_grid, run_seed, GridSpec, ResultRow, ResultsFile, RunResult, RESULTS_HEADER,
};

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 32,
            lr_factor: 0.1,
            lr_patience: 10,
            early_stop_patience: 10,
            max_epochs: 200,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("lr_factor must lie in (0, 1)");
        }
        if self.lr_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("adam betas must lie in [0, 1) and epsilon must be positive");
        }
        Ok(())
    }

    /// Overrides fields from `key=value` pairs; unknown keys are ignored so
    /// one file can also carry model and grid settings.
    pub fn apply_kv(&mut self, kv: &BTreeMap<String, String>) -> Result<()> {
        fn num<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str, slot: &mut T) -> Result<()> {
            if let Some(v) = kv.get(key) {
                *slot = v
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))?;
            }
            Ok(())
        }
        num(kv, "learning_rate", &mut self.learning_rate)?;
        num(kv, "batch_size", &mut self.batch_size)?;
        num(kv, "lr_factor", &mut self.lr_factor)?;
        num(kv, "lr_patience", &mut self.lr_patience)?;
        num(kv, "early_stop_patience", &mut self.early_stop_patience)?;
        num(kv, "max_epochs", &mut self.max_epochs)?;
        num(kv, "adam_beta1", &mut self.beta1)?;
        num(kv, "adam_beta2", &mut self.beta2)?;
        num(kv, "adam_epsilon", &mut self.epsilon)?;
        self.validate()
    }
}

/// Mixes seed components into one well-spread 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x6a09_e667_f3bc_c908;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        // splitmix64 finalizer
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// `−(1/B) Σ ln max(p[i, label_i], 1e-12)` for `B × C` probabilities.
pub fn cross_entropy(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("cross_entropy"));
    }
    let picked = tape.pick(probs, labels)?;
    let logs = tape.log(picked, PROB_FLOOR);
    let total = tape.sum(logs);
    Ok(tape.scale(total, -1.0 / labels.len() as f64))
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(params: &[Tensor], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = |ts: &[Tensor]| ts.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            beta1,
            beta2,
            epsilon,
            m: zeros(params),
            v: zeros(params),
            step: 0,
        }
    }

    pub fn from_config(params: &[Tensor], cfg: &TrainConfig) -> Self {
        Adam::new(params, cfg.beta1, cfg.beta2, cfg.epsilon)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("adam_step", &[self.m.len()], &[params.len(), grads.len()]));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(Error::shape("adam_step", m.shape(), g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *pi -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` once `patience` consecutive
/// epochs pass without a strict improvement on the best validation loss.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: Option<f64>,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, val_loss: f64) -> f64 {
        match self.best {
            Some(b) if val_loss >= b || val_loss.is_nan() => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.patience {
                    self.lr *= self.factor;
                    self.bad_epochs = 0;
                }
            }
            _ => {
                self.best = Some(val_loss);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Learning rate after the last entry of `history`, given the rate in force
/// before it. Replays the plateau rule over the whole history.
pub fn lr_schedule_step(current_lr: f64, history: &[f64], factor: f64, patience: usize) -> Result<f64> {
    let (&last, before) = history
        .split_last()
        .ok_or(Error::EmptyInput("lr_schedule_step"))?;
    let mut s = PlateauScheduler::new(1.0, factor, patience);
    for &l in before {
        s.step(l);
    }
    let prev = s.lr();
    Ok(if s.step(last) < prev {
        current_lr * factor
    } else {
        current_lr
    })
}

/// One fold's data: record indices into `data` for each split, and the
/// audio scaler fitted on `train`.
#[derive(Clone, Copy, Debug)]
pub struct FoldData<'a> {
    pub fold: usize,
    pub data: &'a LoadedDataset,
    pub train: &'a [usize],
    pub dev: &'a [usize],
    pub test: &'a [usize],
    pub scaler: Option<&'a StandardScaler>,
}

/// Summed loss and gradients of `Σ_i CE_i / B` over a batch, one tape per
/// utterance. With `dropout_seeds`, utterance `i` uses its own dropout
/// stream seeded by `dropout_seeds[i]`.
pub fn batch_gradients(
    model: &FusionModel,
    inputs: &[BTreeMap<Modality, Tensor>],
    labels: &[usize],
    dropout_seeds: Option<&[u64]>,
) -> Result<(f64, Vec<Tensor>)> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::invalid("batch_gradients", "inputs and labels must be non-empty and aligned"));
    }
    let b = inputs.len() as f64;
    let rate = model.config().dims.dropout;
    let classes = model.config().dims.classes;
    let per: Vec<(f64, Vec<Tensor>)> = (0..inputs.len())
        .into_par_iter()
        .map(|i| {
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape);
            let vars = inputs[i]
                .iter()
                .map(|(&m, t)| (m, tape.constant(t.clone())))
                .collect();
            let mut dropout = dropout_seeds
                .filter(|_| rate > 0.0)
                .map(|s| Dropout::new(rate, s[i]));
            let trace = model.forward_utterance(&mut tape, &bound, &vars, dropout.as_mut())?;
            let row = tape.reshape(trace.probs, &[1, classes])?;
            let ce = cross_entropy(&mut tape, row, &labels[i..=i])?;
            let loss = tape.scale(ce, 1.0 / b);
            tape.backward(loss)?;
            Ok((tape.value(loss).item()?, bound.grads(&tape)))
        })
        .collect::<Result<_>>()?;
    let mut iter = per.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty");
    for (l, g) in iter {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.add_assign(gi);
        }
    }
    Ok((loss, grads))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub confusion: ConfusionMatrix,
}

/// Evaluation-mode loss and confusion matrix over `indices`.
pub fn evaluate(
    model: &FusionModel,
    data: &LoadedDataset,
    indices: &[usize],
    scaler: Option<&StandardScaler>,
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::EmptyInput("evaluate"));
    }
    let outcomes: Vec<(f64, usize)> = indices
        .par_iter()
        .map(|&i| {
            let inputs = data.inputs(i, scaler)?;
            let mut tape = Tape::new();
            let bound = model.params().bind_frozen(&mut tape);
            let vars = inputs.into_iter().map(|(m, t)| (m, tape.constant(t))).collect();
            let trace = model.forward_utterance(&mut tape, &bound, &vars, None)?;
            let p = tape.value(trace.probs).data();
            let pred = argmax(p);
            Ok((-p[data.labels[i]].max(PROB_FLOOR).ln(), pred))
        })
        .collect::<Result<_>>()?;
    let mut confusion = ConfusionMatrix::new(model.config().dims.classes);
    let mut loss = 0.0;
    for (&i, (l, pred)) in indices.iter().zip(&outcomes) {
        loss += l;
        confusion.record(data.labels[i], *pred);
    }
    Ok(Evaluation {
        loss: loss / indices.len() as f64,
        confusion,
    })
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub epochs: usize,
    pub val_uwa: f64,
    pub test: Evaluation,
    pub test_wa: f64,
    pub test_uwa: f64,
}

/// Trains `model` in place and leaves it holding the parameters of the
/// epoch with the best validation UWA (earliest on ties), which are then
/// evaluated on the test split.
pub fn train_one(model: &mut FusionModel, fold: &FoldData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if fold.train.is_empty() || fold.dev.is_empty() || fold.test.is_empty() {
        return Err(Error::EmptyInput("train_one"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 1]));
    let mut adam = Adam::from_config(model.params().tensors(), cfg);
    let mut scheduler = PlateauScheduler::new(cfg.learning_rate, cfg.lr_factor, cfg.lr_patience);
    let mut order = fold.train.to_vec();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut since_best = 0;
    let mut epochs = 0;

    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        order.shuffle(&mut rng);
        let lr = scheduler.lr();
        let mut train_loss = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let inputs = chunk
                .iter()
                .map(|&i| fold.data.inputs(i, fold.scaler))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = chunk.iter().map(|&i| fold.data.labels[i]).collect();
            let seeds: Vec<u64> = (0..chunk.len())
                .map(|j| derive_seed(&[cfg.seed, 2, epoch as u64, bi as u64, j as u64]))
                .collect();
            let (loss, grads) = batch_gradients(model, &inputs, &labels, Some(&seeds))?;
            if !loss.is_finite() {
                return Err(Error::Numeric("training loss"));
            }
            train_loss += loss * chunk.len() as f64;
            adam.step(model.params_mut().tensors_mut(), &grads, lr)?;
        }
        let val = evaluate(model, fold.data, fold.dev, fold.scaler)?;
        let val_uwa = val.confusion.unweighted_accuracy()?;
        log::debug!(
            "fold {} seed {} epoch {epoch}: train loss {:.4}, val loss {:.4}, val uwa {:.4}, lr {lr:e}",
            fold.fold,
            cfg.seed,
            train_loss / order.len() as f64,
            val.loss,
            val_uwa
        );
        if best.as_ref().is_none_or(|(b, _, _)| val_uwa > *b) {
            best = Some((val_uwa, epoch, model.params().tensors().to_vec()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        scheduler.step(val.loss);
        if since_best >= cfg.early_stop_patience {
            break;
        }
    }

    let (val_uwa, best_epoch, params) = best.expect("at least one epoch");
    for (dst, src) in model.params_mut().tensors_mut().iter_mut().zip(params) {
        *dst = src;
    }
    let test = evaluate(model, fold.data, fold.test, fold.scaler)?;
    Ok(TrainOutcome {
        best_epoch,
        epochs,
        val_uwa,
        test_wa: test.confusion.weighted_accuracy()?,
        test_uwa: test.confusion.unweighted_accuracy()?,
        test,
    })
}
