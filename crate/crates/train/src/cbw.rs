use crate::error::{Result, TrainError};

/// Inverse-frequency weights normalized to sum to one:
/// `w_i = (1 / n_i) / sum_j (1 / n_j)`.
pub fn category_balancing_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(TrainError::Config("no categories".into()));
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(TrainError::ZeroCount(i));
    }
    let inv: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
    let total: f64 = inv.iter().sum();
    Ok(inv.into_iter().map(|v| v / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        assert_eq!(category_balancing_weights(&[5, 5, 5, 5]).unwrap(), vec![0.25; 4]);
        let w = category_balancing_weights(&[1, 3]).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        assert!(matches!(category_balancing_weights(&[3, 0]), Err(TrainError::ZeroCount(1))));
    }
}
