//! Per-epoch training records, model selection and the learning-speed score.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};
use crate::metrics::EvalSummary;

/// Epochs are numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub train_fl: f64,
    pub val_ave: f64,
    pub val_er: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub best_ave: f64,
    pub best_epoch: usize,
}

/// Epoch with the lowest validation AVE; the earliest wins ties.
pub fn select_best(records: &[EpochRecord]) -> Result<SelectionState> {
    let mut best: Option<SelectionState> = None;
    for r in records {
        if best.map_or(true, |b| r.val_ave < b.best_ave) {
            best = Some(SelectionState { best_ave: r.val_ave, best_epoch: r.epoch });
        }
    }
    best.ok_or(TrainError::EmptyData("epoch records"))
}

/// Mean of `AVE + ER` over epochs `first..=last`.
pub fn sum_metric(records: &[EpochRecord], first: usize, last: usize) -> Result<f64> {
    if first == 0 || last < first {
        return Err(TrainError::Config(format!("bad epoch range {first}..={last}")));
    }
    let mut total = 0.0;
    for ep in first..=last {
        let r = records.iter().find(|r| r.epoch == ep).ok_or(TrainError::MissingEpoch(ep))?;
        total += r.val_ave + r.val_er;
    }
    Ok(total / (last - first + 1) as f64)
}

pub fn write_csv(records: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| TrainError::io(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| TrainError::io(path, e))?;
    }
    w.flush().map_err(|e| TrainError::io(path, e))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| TrainError::io(path, e))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| TrainError::io(path, e))
}

/// Outcome of one training step (or one whole baseline phase).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub name: String,
    pub records: Vec<EpochRecord>,
    pub selection: SelectionState,
    /// Validation result of the restored best model.
    pub best: EvalSummary,
}
