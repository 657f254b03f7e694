//! Confusion matrices and the category-averaged error used for selection.

use serde::{Deserialize, Serialize};

use cedg_core::{Cut, ModelBundle, Scalar, Tensor};

use crate::error::{Result, TrainError};

/// Rows are true categories, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { counts: vec![vec![0; classes]; classes] }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(TrainError::Config("confusion matrix must be square and non-empty".into()));
        }
        Ok(Self { counts: rows })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Recall per category; `None` for categories without samples.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.classes())
            .map(|i| {
                let n = self.row_sum(i);
                (n > 0).then(|| self.counts[i][i] as f64 / n as f64)
            })
            .collect()
    }

    /// One minus the mean recall over categories that have samples.
    pub fn ave(&self) -> f64 {
        let acc = self.per_class_accuracy();
        let present: Vec<f64> = acc.iter().flatten().copied().collect();
        if present.len() < acc.len() {
            log::warn!("{} categories without samples excluded from AVE", acc.len() - present.len());
        }
        if present.is_empty() {
            return f64::NAN;
        }
        1.0 - present.iter().sum::<f64>() / present.len() as f64
    }

    /// Overall error rate.
    pub fn er(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return f64::NAN;
        }
        1.0 - self.trace() as f64 / total as f64
    }

    /// Reorders rows and columns: category `i` here becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.classes();
        let mut out = Self::new(n);
        for i in 0..n {
            for j in 0..n {
                out.counts[perm[i]][perm[j]] = self.counts[i][j];
            }
        }
        out
    }

    pub fn summary(&self) -> EvalSummary {
        EvalSummary { per_class: self.per_class_accuracy(), ave: self.ave(), er: self.er(), matrix: self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub matrix: ConfusionMatrix,
    pub per_class: Vec<Option<f64>>,
    pub ave: f64,
    pub er: f64,
}

/// Index of the first maximum.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Confusion matrix of argmax predictions from a `[N, C]` score tensor.
pub fn confusion_from_scores<T: Scalar>(scores: &Tensor<T>, labels: &[usize]) -> Result<ConfusionMatrix> {
    let shape = scores.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(TrainError::Config(format!("scores {shape:?} for {} labels", labels.len())));
    }
    let classes = shape[1];
    let mut m = ConfusionMatrix::new(classes);
    for (row, &t) in scores.data().chunks(classes.max(1)).zip(labels) {
        if t >= classes {
            return Err(TrainError::Label { label: t, classes });
        }
        m.add(t, argmax(row));
    }
    Ok(m)
}

/// Slices rows `lo..hi` of a batch tensor.
pub fn rows<T: Scalar>(x: &Tensor<T>, lo: usize, hi: usize) -> Result<Tensor<T>> {
    let per: usize = x.shape()[1..].iter().product();
    let mut shape = x.shape().to_vec();
    shape[0] = hi - lo;
    Ok(Tensor::new(shape, x.data()[lo * per..hi * per].to_vec())?)
}

/// Runs `bundle` to `cut` in inference mode, `batch` images at a time.
pub fn predict<T: Scalar>(bundle: &mut ModelBundle<T>, inputs: &Tensor<T>, cut: Cut, batch: usize) -> Result<Tensor<T>> {
    let n = inputs.shape()[0];
    let mut data = Vec::new();
    let mut width = 0;
    for lo in (0..n).step_by(batch.max(1)) {
        let hi = (lo + batch.max(1)).min(n);
        let out = bundle.infer(rows(inputs, lo, hi)?, cut)?;
        width = out.shape()[1..].iter().product();
        data.extend_from_slice(out.data());
    }
    Ok(Tensor::new(vec![n, width], data)?)
}

/// Predicts with argmax of the head output and summarizes against `labels`.
pub fn evaluate<T: Scalar>(
    bundle: &mut ModelBundle<T>,
    inputs: &Tensor<T>,
    labels: &[usize],
    cut: Cut,
    batch: usize,
) -> Result<EvalSummary> {
    if labels.is_empty() {
        return Err(TrainError::EmptyData("evaluation"));
    }
    let scores = predict(bundle, inputs, cut, batch)?;
    Ok(confusion_from_scores(&scores, labels)?.summary())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_degenerate() {
        let m = ConfusionMatrix::from_rows(vec![vec![3, 0], vec![0, 5]]).unwrap();
        assert_eq!((m.ave(), m.er()), (0.0, 0.0));
        let single = ConfusionMatrix::from_rows(vec![vec![4, 0], vec![0, 0]]).unwrap();
        assert_eq!(single.per_class_accuracy(), vec![Some(1.0), None]);
        assert_eq!(single.ave(), 0.0);
    }

    #[test]
    fn argmax_takes_first_tie() {
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    }
}
