//! Cross-entropy and focal loss on probability rows.
//!
//! Both take the output of a softmax (rows summing to one) rather than
//! logits, because every classifier head ends in a softmax layer.

use serde::{Deserialize, Serialize};

use cedg_core::{Graph, Scalar, Tensor, Var};

use crate::error::{Result, TrainError};

/// Lower bound applied to the true-class probability before the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub gamma: f64,
    /// Per-category weights, usually from [`crate::category_balancing_weights`].
    pub class_weights: Option<Vec<f64>>,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { gamma: 2.0, class_weights: None }
    }
}

impl FocalConfig {
    /// Plain cross-entropy.
    pub fn cross_entropy() -> Self {
        Self { gamma: 0.0, class_weights: None }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(TrainError::Config(format!("focal gamma {} must be finite and >= 0", self.gamma)));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != classes {
                return Err(TrainError::Config(format!("{} class weights for {classes} categories", w.len())));
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(TrainError::Config("class weights must be finite and >= 0".into()));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(TrainError::Config(format!("class weights sum to {s}, expected 1")));
            }
        }
        Ok(())
    }

    fn weight(&self, label: usize) -> f64 {
        self.class_weights.as_ref().map_or(1.0, |w| w[label])
    }
}

/// `-(1-p)^gamma * ln(max(p, floor))` and its derivative in `p`.
fn focal_term(p: f64, gamma: f64) -> (f64, f64) {
    let q = p.max(PROB_FLOOR);
    let one_minus = (1.0 - q).max(0.0);
    let modulating = if gamma == 0.0 { 1.0 } else { one_minus.powf(gamma) };
    let value = -modulating * q.ln();
    if p < PROB_FLOOR {
        return (value, 0.0);
    }
    let d_mod = if gamma == 0.0 || one_minus == 0.0 { 0.0 } else { -gamma * one_minus.powf(gamma - 1.0) };
    (value, -d_mod * q.ln() - modulating / q)
}

fn check_rows<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<(usize, usize)> {
    let shape = probs.shape();
    if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
        return Err(TrainError::Config(format!(
            "probabilities {shape:?} do not match {} labels",
            labels.len()
        )));
    }
    let classes = shape[1];
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(TrainError::Label { label, classes });
    }
    Ok((shape[0], classes))
}

/// Unreduced weighted focal loss, one value per row.
pub fn per_sample_focal<T: Scalar>(probs: &Tensor<T>, labels: &[usize], cfg: &FocalConfig) -> Result<Vec<f64>> {
    let (_, classes) = check_rows(probs, labels)?;
    cfg.validate(classes)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &t)| cfg.weight(t) * focal_term(probs.data()[i * classes + t].to_f64_lossy(), cfg.gamma).0)
        .collect())
}

/// Batch mean of the weighted focal loss.
pub fn focal_loss<T: Scalar>(probs: &Tensor<T>, labels: &[usize], cfg: &FocalConfig) -> Result<f64> {
    let v = per_sample_focal(probs, labels, cfg)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    focal_loss(probs, labels, &FocalConfig::cross_entropy())
}

/// Records the focal loss of `probs` on `g` as a scalar node.
pub fn focal_loss_var<T: Scalar>(g: &mut Graph<T>, probs: Var, labels: &[usize], cfg: &FocalConfig) -> Result<Var> {
    let p = g.value(probs);
    let (n, classes) = check_rows(p, labels)?;
    cfg.validate(classes)?;
    let mut total = 0.0;
    let mut grad = vec![T::zero(); n * classes];
    for (i, &t) in labels.iter().enumerate() {
        let (v, d) = focal_term(p.data()[i * classes + t].to_f64_lossy(), cfg.gamma);
        let w = cfg.weight(t);
        total += w * v;
        grad[i * classes + t] = T::from_f64_lossy(w * d / n as f64);
    }
    let value = Tensor::scalar(T::from_f64_lossy(total / n as f64));
    let grad = Tensor::new(vec![n, classes], grad)?;
    let backward: cedg_core::graph::CustomBackward<T> = Box::new(move |up, _| {
        let k = up.item();
        vec![Some(grad.map(|x| x * k))]
    });
    Ok(g.custom(&[probs], value, backward)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let p = Tensor::<f64>::from_f64([1, 2], &[0.5, 0.5]).unwrap();
        assert!((cross_entropy(&p, &[0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let fl = focal_loss(&p, &[1], &FocalConfig::default()).unwrap();
        assert!((fl - 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
        let one = Tensor::<f64>::from_f64([1, 2], &[1.0, 0.0]).unwrap();
        assert_eq!(cross_entropy(&one, &[0]).unwrap(), 0.0);
        assert!((cross_entropy(&one, &[1]).unwrap() + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn label_range_checked() {
        let p = Tensor::<f64>::from_f64([1, 4], &[0.25; 4]).unwrap();
        assert!(matches!(cross_entropy(&p, &[4]), Err(TrainError::Label { label: 4, classes: 4 })));
        let bad = FocalConfig { gamma: 2.0, class_weights: Some(vec![0.5, 0.5, 0.5, 0.5]) };
        assert!(focal_loss(&p, &[0], &bad).is_err());
    }
}
