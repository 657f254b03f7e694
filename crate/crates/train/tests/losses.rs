use cedg_core::gradcheck::{check, GradCheckConfig};
use cedg_core::{Activation, ParamStore64, Tensor64};
use cedg_train::distill::{mimic_loss, mimic_loss_var};
use cedg_train::{category_balancing_weights, cross_entropy, focal_loss, focal_loss_var, per_sample_focal, FocalConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random probability rows, some of them nearly one-hot.
fn random_probs(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Tensor64 {
    let mut data = Vec::with_capacity(n * c);
    for _ in 0..n {
        let sharp = rng.gen_range(0.1..20.0);
        let z: Vec<f64> = (0..c).map(|_| (rng.gen_range(-1.0..1.0f64) * sharp).exp()).collect();
        let s: f64 = z.iter().sum();
        data.extend(z.iter().map(|v| v / s));
    }
    Tensor64::new(vec![n, c], data).unwrap()
}

/// Independent cross-entropy: per-row `-ln(max(p_t, 1e-12))`.
fn ce_rows(p: &Tensor64, labels: &[usize]) -> Vec<f64> {
    let c = p.shape()[1];
    labels.iter().enumerate().map(|(i, &t)| -(p.data()[i * c + t].max(1e-12)).ln()).collect()
}

#[test]
fn focal_with_zero_gamma_is_cross_entropy_on_1000_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = rng.gen_range(1..16);
        let p = random_probs(&mut rng, n, 4);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let oracle = ce_rows(&p, &labels).iter().sum::<f64>() / n as f64;
        let fl = focal_loss(&p, &labels, &FocalConfig { gamma: 0.0, class_weights: None }).unwrap();
        assert!((fl - oracle).abs() < 1e-12, "{fl} vs {oracle}");
        assert!((cross_entropy(&p, &labels).unwrap() - oracle).abs() < 1e-12);
    }
}

#[test]
fn closed_form_values() {
    let half = Tensor64::from_f64([2, 2], &[0.5, 0.5, 0.5, 0.5]).unwrap();
    let fl = focal_loss(&half, &[0, 1], &FocalConfig::default()).unwrap();
    assert!((fl - 0.25 * std::f64::consts::LN_2).abs() < 1e-9);
    assert!((cross_entropy(&half, &[0, 1]).unwrap() - 0.693147).abs() < 1e-6);
    let two = Tensor64::from_f64([2, 2], &[0.9, 0.1, 0.3, 0.7]).unwrap();
    let a = cross_entropy(&Tensor64::from_f64([1, 2], &[0.9, 0.1]).unwrap(), &[0]).unwrap();
    let b = cross_entropy(&Tensor64::from_f64([1, 2], &[0.3, 0.7]).unwrap(), &[1]).unwrap();
    assert!((cross_entropy(&two, &[0, 1]).unwrap() - (a + b) / 2.0).abs() < 1e-15);
}

#[test]
fn paper_category_weights() {
    let w = category_balancing_weights(&[13764, 12754, 7994, 5453]).unwrap();
    for (got, want) in w.iter().zip([0.1581, 0.1706, 0.2722, 0.3991]) {
        assert!((got - want).abs() < 1e-4, "{w:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn focal_bounded_by_ce_and_monotone_in_gamma(seed in any::<u64>(), n in 1usize..12, g1 in 0.0f64..5.0, dg in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_probs(&mut rng, n, 4);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let ce = ce_rows(&p, &labels);
        let lo = per_sample_focal(&p, &labels, &FocalConfig { gamma: g1, class_weights: None }).unwrap();
        let hi = per_sample_focal(&p, &labels, &FocalConfig { gamma: g1 + dg, class_weights: None }).unwrap();
        for i in 0..n {
            prop_assert!(lo[i] <= ce[i] + 1e-12);
            prop_assert!(hi[i] <= lo[i] + 1e-12);
        }
    }

    #[test]
    fn weights_sum_to_one_and_are_scale_invariant(counts in proptest::collection::vec(1usize..100_000, 1..8), k in 1usize..50) {
        let w = category_balancing_weights(&counts).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let scaled: Vec<usize> = counts.iter().map(|c| c * k).collect();
        let ws = category_balancing_weights(&scaled).unwrap();
        for (a, b) in w.iter().zip(&ws) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        // Inverse frequency: rarer categories never get less weight.
        for i in 0..counts.len() {
            for j in 0..counts.len() {
                if counts[i] < counts[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }
}

#[test]
fn focal_gradient_wrt_logits_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = GradCheckConfig::default();
    for trial in 0..24 {
        let n = rng.gen_range(1..6);
        let logits = Tensor64::new(vec![n, 4], (0..n * 4).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let gamma = [0.0, 0.5, 1.0, 2.0, 3.5][trial % 5];
        let class_weights = (trial % 2 == 1).then(|| category_balancing_weights(&[7, 3, 11, 2]).unwrap());
        let focal = FocalConfig { gamma, class_weights };
        let mut store = ParamStore64::new();
        let report = check(&[logits], &mut store, &cfg, |g, xs, _| {
            let p = g.activation(xs[0], Activation::Softmax)?;
            Ok(focal_loss_var(g, p, &labels, &focal).map_err(|e| cedg_core::CoreError::Arch(e.to_string()))?)
        })
        .unwrap();
        assert!(report.passed() && report.max_rel_err < 1e-3, "trial {trial}: {report:?}");
    }
}

#[test]
fn mimic_gradient_and_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = Tensor64::new(vec![3, 5], (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let t = Tensor64::new(vec![3, 5], (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let oracle: f64 = s.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 6.0;
    assert!((mimic_loss(&s, &t).unwrap() - oracle).abs() < 1e-12);
    assert_eq!(mimic_loss(&s, &s).unwrap(), 0.0);
    let mut store = ParamStore64::new();
    let report = check(&[s], &mut store, &GradCheckConfig::default(), |g, xs, _| {
        Ok(mimic_loss_var(g, xs[0], &t).map_err(|e| cedg_core::CoreError::Arch(e.to_string()))?)
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}
