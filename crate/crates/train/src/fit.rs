//! The shared supervised training loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use cedg_augment::{augment_batch, preprocess_batch, AugmentConfig, Normalization};
use cedg_core::rng::{fnv1a, splitmix64, stream};
use cedg_core::{sgd_step, Activation, Cut, Graph32, Mode, ModelBundle32, SgdConfig, Tensor32};
use cedg_forge::LabeledDataset;

use crate::error::{Result, TrainError};
use crate::loss::{focal_loss_var, FocalConfig};
use crate::metrics::{evaluate, EvalSummary};
use crate::records::{EpochRecord, SelectionState, StepReport};

/// A preprocessed, never augmented evaluation set.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub inputs: Tensor32,
    pub labels: Vec<usize>,
}

impl EvalSet {
    pub fn from_dataset(ds: &LabeledDataset, norm: &Normalization) -> Result<Self> {
        if ds.is_empty() {
            return Err(TrainError::EmptyData("evaluation"));
        }
        Ok(Self { inputs: preprocess_batch(&ds.images(), norm)?, labels: ds.labels() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Where the loss is attached and whether the output still needs a softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objective {
    pub cut: Cut,
    pub softmax: bool,
}

impl Objective {
    /// Target head, which already ends in a softmax.
    pub const HEAD: Self = Self { cut: Cut::Hc, softmax: false };
    /// Common-domain readout, which emits logits.
    pub const READOUT: Self = Self { cut: Cut::Re, softmax: true };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub sgd: SgdConfig,
    pub augment: AugmentConfig,
    pub focal: FocalConfig,
    pub seed: u64,
    pub eval_batch: usize,
    /// Stop once this many epochs pass without a new best validation AVE.
    pub patience: Option<usize>,
    /// Keep batch-norm parameters frozen, so those layers normalize with
    /// their running statistics while the rest trains.
    #[serde(default)]
    pub freeze_bn: bool,
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be positive".into()));
        }
        self.sgd.validate_horizon(self.epochs)?;
        self.augment.validate()?;
        if self.eval_batch == 0 {
            return Err(TrainError::Config("eval batch must be positive".into()));
        }
        Ok(())
    }
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, purpose: &str, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, purpose, epoch as u64, 0));
    order
}

/// Seeded split into (train, held-out) index lists; the held-out part gets
/// `round(n * fraction)` items, at least one when `n > 1`.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) || n < 2 {
        return Err(TrainError::Config(format!("cannot hold out {fraction} of {n} items")));
    }
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let order = epoch_order(n, seed, "holdout", 0);
    let (held, train) = order.split_at(k);
    let (mut train, mut held) = (train.to_vec(), held.to_vec());
    train.sort_unstable();
    held.sort_unstable();
    Ok((train, held))
}

/// Makes exactly the parameters under `prefixes` trainable and clears any
/// optimizer state. Returns the number of trainable tensors.
pub fn set_trainable(bundle: &mut ModelBundle32, prefixes: &[&str]) -> Result<usize> {
    bundle.params.set_trainable("", false);
    for (_, p) in bundle.params.params_mut() {
        p.momentum_buffer = None;
    }
    let n: usize = prefixes.iter().map(|p| bundle.params.set_trainable(p, true)).sum();
    if n == 0 {
        return Err(TrainError::Config(format!("no parameters under {prefixes:?}")));
    }
    Ok(n)
}

/// Freezes every batch-norm scale and shift. Returns how many were trainable.
pub fn freeze_batch_norm(bundle: &mut ModelBundle32) -> usize {
    let mut n = 0;
    for (name, p) in bundle.params.params_mut() {
        if name.contains(".bn.") && p.trainable {
            p.trainable = false;
            n += 1;
        }
    }
    n
}

/// One pass of minibatch SGD over `train` in a seeded order. Returns the
/// mean training loss.
pub fn train_epoch(
    bundle: &mut ModelBundle32,
    train: &LabeledDataset,
    objective: Objective,
    cfg: &FitConfig,
    stream_seed: u64,
    epoch: usize,
) -> Result<f64> {
    let order = epoch_order(train.len(), stream_seed, "batches", epoch);
    let mut total = 0.0;
    for chunk in order.chunks(cfg.sgd.batch_size) {
        let images: Vec<_> = chunk.iter().map(|&i| &train.records[i].image).collect();
        let keys: Vec<u64> = chunk.iter().map(|&i| i as u64).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| train.records[i].label as usize).collect();
        let x = augment_batch(&images, &keys, &cfg.augment, stream_seed, epoch as u64)?;
        let mut g = Graph32::new();
        let xv = g.input(x);
        let mut out = bundle.forward_split(&mut g, xv, objective.cut, Mode::Train)?;
        if objective.softmax {
            out = g.activation(out, Activation::Softmax)?;
        }
        let loss = focal_loss_var(&mut g, out, &labels, &cfg.focal)?;
        let value = g.value(loss).item() as f64;
        if !value.is_finite() {
            return Err(TrainError::NonFinite { what: "training loss", epoch: epoch + 1 });
        }
        total += value * chunk.len() as f64;
        g.backward(loss, &mut bundle.params)?;
        sgd_step(&mut bundle.params, &cfg.sgd, epoch)?;
        bundle.params.zero_grad();
    }
    if !bundle.params.all_finite() {
        return Err(TrainError::NonFinite { what: "parameters", epoch: epoch + 1 });
    }
    Ok(total / train.len() as f64)
}

/// Trains the parameters under `trainable` and keeps the epoch with the
/// lowest validation AVE (earliest on ties); the bundle is left holding
/// that epoch's weights.
pub fn fit(
    bundle: &mut ModelBundle32,
    train: &LabeledDataset,
    val: &EvalSet,
    trainable: &[&str],
    objective: Objective,
    cfg: &FitConfig,
    name: &str,
) -> Result<StepReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyData("training"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptyData("validation"));
    }
    set_trainable(bundle, trainable)?;
    if cfg.freeze_bn {
        freeze_batch_norm(bundle);
    }
    let stream_seed = splitmix64(cfg.seed ^ fnv1a(name.as_bytes()));
    let mut records = Vec::new();
    let mut best: Option<(SelectionState, EvalSummary, cedg_core::ParamStore32)> = None;
    for epoch in 0..cfg.epochs {
        let train_fl = train_epoch(bundle, train, objective, cfg, stream_seed, epoch)?;
        let summary = evaluate(bundle, &val.inputs, &val.labels, objective.cut, cfg.eval_batch)?;
        let rec = EpochRecord { epoch: epoch + 1, train_fl, val_ave: summary.ave, val_er: summary.er };
        log::info!("{name} epoch {}: loss {train_fl:.4} AVE {:.4} ER {:.4}", rec.epoch, rec.val_ave, rec.val_er);
        if best.as_ref().map_or(true, |(s, _, _)| rec.val_ave < s.best_ave) {
            let state = SelectionState { best_ave: rec.val_ave, best_epoch: rec.epoch };
            best = Some((state, summary, bundle.params.clone()));
        }
        records.push(rec);
        let since_best = epoch + 1 - best.as_ref().map_or(0, |(s, _, _)| s.best_epoch);
        if cfg.patience.is_some_and(|p| since_best >= p) {
            log::info!("{name}: no improvement for {since_best} epochs, stopping");
            break;
        }
    }
    let (selection, best_summary, params) = best.expect("at least one epoch");
    bundle.params = params;
    Ok(StepReport { name: name.to_string(), records, selection, best: best_summary })
}
