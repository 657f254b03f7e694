//! Teacher pretraining and feature-mimic distillation on the common domain.

use serde::{Deserialize, Serialize};

use cedg_augment::Normalization;
use cedg_core::rng::splitmix64;
use cedg_core::{sgd_step, Cut, Graph, Graph32, Mode, ModelBundle32, Scalar, SgdConfig, Tensor, Tensor32, Var};
use cedg_forge::LabeledDataset;

use crate::error::{Result, TrainError};
use crate::fit::{epoch_order, fit, holdout_split, set_trainable, EvalSet, FitConfig, Objective};
use crate::metrics::{predict, rows};
use crate::records::StepReport;

/// Trains every teacher parameter with cross-entropy on the readout.
pub fn pretrain_teacher(
    teacher: &mut ModelBundle32,
    train: &LabeledDataset,
    val: &EvalSet,
    cfg: &FitConfig,
) -> Result<StepReport> {
    fit(teacher, train, val, &[""], Objective::READOUT, cfg, "pretrain")
}

/// `0.5 * sum((s - t)^2) / N` for `[N, D]` features.
pub fn mimic_loss<T: Scalar>(student: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if student.shape() != target.shape() || student.ndim() != 2 {
        return Err(TrainError::Config(format!(
            "feature shapes {:?} and {:?} differ",
            student.shape(),
            target.shape()
        )));
    }
    let n = student.shape()[0] as f64;
    let sq: f64 = student.data().iter().zip(target.data()).map(|(&s, &t)| (s - t).to_f64_lossy().powi(2)).sum();
    Ok(0.5 * sq / n)
}

/// Graph version of [`mimic_loss`]; `target` is a constant.
pub fn mimic_loss_var<T: Scalar>(g: &mut Graph<T>, student: Var, target: &Tensor<T>) -> Result<Var> {
    let s = g.value(student);
    let value = mimic_loss(s, target)?;
    let n = T::from_f64_lossy(s.shape()[0] as f64);
    let grad = s.zip_map(target, |a, b| (a - b) / n)?;
    let backward: cedg_core::graph::CustomBackward<T> = Box::new(move |up, _| vec![Some(grad.map(|x| x * up.item()))]);
    Ok(g.custom(&[student], Tensor::scalar(T::from_f64_lossy(value)), backward)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { epochs: 1, lr: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub epochs: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
    /// Fraction of the common domain held out for model selection.
    pub holdout: f64,
    pub eval_batch: usize,
    pub finetune: Option<FinetuneConfig>,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            sgd: SgdConfig::preset(cedg_core::Preset::Stage1),
            seed: 0,
            holdout: 0.1,
            eval_batch: 256,
            finetune: None,
        }
    }
}

/// `epoch` 0 is the student before any update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillRecord {
    pub epoch: usize,
    pub train_lrp: Option<f64>,
    pub heldout_lrp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillOutcome {
    pub records: Vec<DistillRecord>,
    pub best_epoch: usize,
    pub best_heldout: f64,
    pub finetune: Option<StepReport>,
}

fn gather(x: &Tensor32, idx: &[usize]) -> Result<Tensor32> {
    let per: usize = x.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&x.data()[i * per..(i + 1) * per]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = idx.len();
    Ok(Tensor32::new(shape, data)?)
}

/// Copies and freezes the teacher's stem and readout in `student`, then
/// trains the student's middle section to reproduce the teacher's pooled
/// features. The student keeps the epoch with the lowest held-out loss.
pub fn distill_stage1(
    teacher: &mut ModelBundle32,
    student: &mut ModelBundle32,
    common: &LabeledDataset,
    norm: &Normalization,
    cfg: &DistillConfig,
) -> Result<DistillOutcome> {
    if cfg.epochs == 0 || cfg.eval_batch == 0 {
        return Err(TrainError::Config("distillation needs positive epochs and eval batch".into()));
    }
    cfg.sgd.validate_horizon(cfg.epochs)?;
    if teacher.arch.base != student.arch.base || teacher.arch.re != student.arch.re {
        return Err(TrainError::Config("teacher and student must share stem and readout".into()));
    }
    let (train_idx, held_idx) = holdout_split(common.len(), cfg.holdout, cfg.seed)?;
    let all = EvalSet::from_dataset(common, norm)?;
    let (x_train, x_held) = (gather(&all.inputs, &train_idx)?, gather(&all.inputs, &held_idx)?);
    let t_train = predict(teacher, &x_train, Cut::MidPooled, cfg.eval_batch)?;
    let t_held = predict(teacher, &x_held, Cut::MidPooled, cfg.eval_batch)?;
    let probe = student.infer(rows(&x_held, 0, 1)?, Cut::MidPooled)?;
    if probe.shape()[1..] != t_held.shape()[1..] {
        return Err(TrainError::Config(format!(
            "feature shape mismatch: student {:?} vs teacher {:?}",
            &probe.shape()[1..],
            &t_held.shape()[1..]
        )));
    }

    student.params.copy_from(&teacher.params, "base.")?;
    student.params.copy_from(&teacher.params, "re.")?;
    set_trainable(student, &["mid."])?;

    let heldout = |s: &mut ModelBundle32| -> Result<f64> {
        mimic_loss(&predict(s, &x_held, Cut::MidPooled, cfg.eval_batch)?, &t_held)
    };
    let initial = heldout(student)?;
    let mut records = vec![DistillRecord { epoch: 0, train_lrp: None, heldout_lrp: initial }];
    let mut best = (0usize, initial, student.params.clone());
    let stream_seed = splitmix64(cfg.seed ^ 0xD157);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train_idx.len(), stream_seed, "distill", epoch);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.sgd.batch_size) {
            let (xb, tb) = (gather(&x_train, chunk)?, gather(&t_train, chunk)?);
            let mut g = Graph32::new();
            let xv = g.input(xb);
            let feat = student.forward_split(&mut g, xv, Cut::MidPooled, Mode::Train)?;
            let loss = mimic_loss_var(&mut g, feat, &tb)?;
            let v = g.value(loss).item() as f64;
            if !v.is_finite() {
                return Err(TrainError::NonFinite { what: "distillation loss", epoch: epoch + 1 });
            }
            total += v * chunk.len() as f64;
            g.backward(loss, &mut student.params)?;
            sgd_step(&mut student.params, &cfg.sgd, epoch)?;
            student.params.zero_grad();
        }
        let h = heldout(student)?;
        if !h.is_finite() {
            return Err(TrainError::NonFinite { what: "held-out distillation loss", epoch: epoch + 1 });
        }
        let train_lrp = total / train_idx.len() as f64;
        log::info!("distill epoch {}: train {train_lrp:.5} held-out {h:.5}", epoch + 1);
        records.push(DistillRecord { epoch: epoch + 1, train_lrp: Some(train_lrp), heldout_lrp: h });
        if h < best.1 {
            best = (epoch + 1, h, student.params.clone());
        }
    }
    let (best_epoch, best_heldout, params) = best;
    student.params = params;

    let finetune = match &cfg.finetune {
        Some(ft) if ft.epochs > 0 => {
            let fit_cfg = FitConfig {
                epochs: ft.epochs,
                sgd: SgdConfig { batch_size: cfg.sgd.batch_size, ..SgdConfig::constant(ft.lr) },
                augment: cedg_augment::AugmentConfig { normalization: norm.clone(), ..cedg_augment::AugmentConfig::none() },
                focal: crate::FocalConfig::cross_entropy(),
                seed: cfg.seed,
                eval_batch: cfg.eval_batch,
                patience: None,
                freeze_bn: false,
            };
            let held_set = EvalSet { inputs: x_held.clone(), labels: held_idx.iter().map(|&i| all.labels[i]).collect() };
            Some(fit(student, &common.subset(&train_idx), &held_set, &["mid.", "re."], Objective::READOUT, &fit_cfg, "finetune")?)
        }
        _ => None,
    };
    Ok(DistillOutcome { records, best_epoch, best_heldout, finetune })
}
