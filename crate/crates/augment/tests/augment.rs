use cedg_augment::augs::{
    apply_mask_lines, crop_offsets, disk_kernel, draw_mask_lines, flip_horizontal, flip_vertical, flip_vh, graying,
    masking, random_crop, smooth, smooth_with,
};
use cedg_augment::pipeline::{apply_pipeline_traced, preprocess};
use cedg_augment::{
    apply_pipeline, augment_batch, bilinear_resize, color_normalize, denormalize, hist_equalize, AugmentConfig,
    ImageF32, ImageU8, Normalization,
};
use cedg_core::rng::stream;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn noise_u8(seed: u64, side: usize) -> ImageU8 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageU8::from_fn(side, side, |_, _, _| rng.gen())
}

fn noise_f32(seed: u64) -> ImageF32 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageF32::from_fn(32, 32, |_, _, _| rng.gen_range(-2.0..2.0))
}

#[test]
fn constant_images_survive_every_operation() {
    let c8 = ImageU8::filled(32, 32, [40, 90, 200]);
    let cf = ImageF32::filled(32, 32, [0.25, -1.0, 0.75]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(hist_equalize(&c8), c8);
    assert_eq!(bilinear_resize(&cf, 17, 9).unwrap().data().iter().filter(|&&v| v == 0.25).count(), 17 * 9);
    assert_eq!(random_crop(&cf, 24, &mut rng).unwrap(), cf);
    for k in [3, 5] {
        let s = smooth_with(&cf, k);
        assert!(s.data().iter().zip(cf.data()).all(|(a, b)| (a - b).abs() < 1e-6));
    }
    assert_eq!(masking(&cf, 10, &mut rng).unwrap(), cf);
    assert_eq!(bilinear_resize(&cf, 32, 32).unwrap(), cf);
}

#[test]
fn normalize_round_trip() {
    let img = noise_u8(2, 32);
    let norm = Normalization::default();
    let back = denormalize(&color_normalize(&img, &norm).unwrap(), &norm);
    assert_eq!(back, img);
    let f = color_normalize(&img, &norm).unwrap();
    for c in 0..3 {
        for (v, &u) in f.plane(c).iter().zip(img.plane(c)) {
            assert!((v * norm.stds[c] + norm.means[c] - u as f32).abs() < 1e-4);
        }
    }
}

#[test]
fn random_crop_rejects_wrong_size_and_is_reproducible() {
    let img = noise_f32(3);
    let a = random_crop(&img, 24, &mut stream(9, "t", 0, 0)).unwrap();
    let b = random_crop(&img, 24, &mut stream(9, "t", 0, 0)).unwrap();
    assert_eq!(a, b);
    let small = ImageF32::filled(16, 16, [0.0; 3]);
    assert!(random_crop(&small, 24, &mut stream(9, "t", 0, 0)).is_err());
}

#[test]
fn crop_offsets_are_uniform() {
    let mut rng = stream(11, "crop-uniformity", 0, 0);
    let mut counts = [0u32; 81];
    let draws = 10_000;
    for _ in 0..draws {
        let (x, y) = crop_offsets(&mut rng, 24);
        counts[y * 9 + x] += 1;
    }
    assert!(counts.iter().all(|&c| c > 0), "every position observed");
    let expected = draws as f64 / 81.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(80.0).unwrap().cdf(chi2);
    assert!(p > 0.001, "chi2 {chi2} p {p}");
}

#[test]
fn flips() {
    let img = noise_f32(4);
    assert_eq!(flip_vertical(&flip_vertical(&img)), img);
    assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
    let sym = ImageF32::from_fn(32, 32, |c, y, x| {
        let (dy, dx) = (y.min(31 - y), x.min(31 - x));
        (c + dy * 3 + dx) as f32
    });
    let mut rng = stream(1, "flip", 0, 0);
    for _ in 0..8 {
        assert_eq!(flip_vh(&sym, &mut rng), sym);
    }
    let seq = |seed| {
        let mut rng = stream(seed, "flip", 0, 0);
        (0..16).map(|_| flip_vh(&img, &mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(seq(5), seq(5));
}

#[test]
fn graying_properties() {
    let gray = ImageF32::from_fn(32, 32, |_, y, x| (y * 32 + x) as f32 / 100.0);
    let g = graying(&gray);
    assert!(g.data().iter().zip(gray.data()).all(|(a, b)| (a - b).abs() < 1e-5));
    let out = graying(&noise_f32(6));
    assert_eq!(out.plane(0), out.plane(1));
    assert_eq!(out.plane(1), out.plane(2));
}

#[test]
fn smoothing_preserves_mean_and_picks_both_sizes() {
    // Periodic pattern whose edges match the interior: clamp effects cancel.
    let img = ImageF32::from_fn(32, 32, |c, y, x| ((x + 2 * y + c) % 4) as f32);
    for k in [3, 5] {
        let out = smooth_with(&img, k);
        let m_in: f32 = img.data().iter().sum::<f32>() / img.data().len() as f32;
        let m_out: f32 = out.data().iter().sum::<f32>() / out.data().len() as f32;
        assert!((m_in - m_out).abs() < 0.02, "k={k}: {m_in} vs {m_out}");
    }
    let big = ImageF32::from_fn(32, 32, |_, y, x| if (8..24).contains(&x) && (8..24).contains(&y) { 1.0 } else { 0.0 });
    for k in [3, 5] {
        let out = smooth_with(&big, k);
        let d = (out.data().iter().sum::<f32>() - big.data().iter().sum::<f32>()).abs();
        assert!(d < 1e-3, "interior-dominated mean drift {d}");
    }
    let mut rng = stream(3, "smooth", 0, 0);
    let img = noise_f32(8);
    let (s3, s5) = (smooth_with(&img, 3), smooth_with(&img, 5));
    let mut seen = (false, false);
    for _ in 0..50 {
        let out = smooth(&img, &[3, 5], &mut rng).unwrap();
        seen.0 |= out == s3;
        seen.1 |= out == s5;
    }
    assert!(seen.0 && seen.1);
    assert!((disk_kernel(5).iter().sum::<f32>() - 1.0).abs() < 1e-6);
}

#[test]
fn mask_line_fill_is_column_mean() {
    let img = noise_f32(9);
    let lines = draw_mask_lines(32, 10, &mut stream(1, "mask", 0, 0));
    let out = apply_mask_lines(&img, &lines);
    for l in &lines {
        for c in 0..3 {
            let mut sum = 0.0f64;
            for y in 0..32 {
                for x in l.start..l.start + l.width {
                    sum += img.get(c, y, x) as f64;
                }
            }
            let mean = sum / (32 * l.width) as f64;
            assert!((out.get(c, 5, l.start) as f64 - mean).abs() < 1e-5);
        }
    }
}

#[test]
fn pipeline_with_all_skips_is_preprocessing() {
    let img = noise_u8(10, 32);
    let cfg = AugmentConfig { skip_probability: 1.0, ..AugmentConfig::default() };
    let out = apply_pipeline(&img, &cfg, &mut stream(1, "p", 0, 0)).unwrap();
    assert_eq!(out, preprocess(&img, &cfg.normalization).unwrap());
    let none = apply_pipeline(&img, &AugmentConfig::none(), &mut stream(1, "p", 0, 0)).unwrap();
    assert_eq!(none, out);
    let traced = apply_pipeline_traced(&img, &cfg, &mut stream(1, "p", 0, 0)).unwrap();
    assert_eq!(traced.len(), 1);
}

#[test]
fn pipeline_is_thread_count_independent() {
    let images: Vec<ImageU8> = (0..24).map(|i| noise_u8(100 + i, 32)).collect();
    let refs: Vec<&ImageU8> = images.iter().collect();
    let keys: Vec<u64> = (0..24).collect();
    let cfg = AugmentConfig::default();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| augment_batch(&refs, &keys, &cfg, 77, 3).unwrap())
    };
    let one = run(1);
    assert_eq!(one.shape(), &[24, 3, 32, 32]);
    assert_eq!(one, run(2));
    assert_eq!(one, run(8));
    assert_ne!(one, rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| augment_batch(
        &refs, &keys, &cfg, 77, 4
    )
    .unwrap()));
}

#[test]
fn ppm_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ppm");
    let img = noise_u8(12, 20);
    img.save(&path).unwrap();
    assert_eq!(&std::fs::read(&path).unwrap()[..2], b"P6");
    assert_eq!(ImageU8::load(&path).unwrap(), img);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mask_lines_disjoint_in_bounds_and_total(seed in any::<u64>(), width in 10usize..40) {
        let lines = draw_mask_lines(width, 10, &mut stream(seed, "mask", 0, 0));
        for (i, a) in lines.iter().enumerate() {
            prop_assert!(a.width >= 1 && a.start + a.width <= width);
            for b in &lines[i + 1..] {
                prop_assert!(a.start + a.width <= b.start || b.start + b.width <= a.start);
            }
        }
        let total: usize = lines.iter().map(|l| l.width).sum();
        prop_assert!(total <= 10);
        if width >= 32 {
            prop_assert_eq!(total, 10);
        }
    }

    #[test]
    fn equalization_monotone_and_nearly_idempotent(seed in any::<u64>(), levels in 2u8..=255) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = ImageU8::from_fn(32, 32, |_, _, _| rng.gen_range(0..levels));
        let eq = hist_equalize(&img);
        for c in 0..3 {
            let mut pairs: Vec<(u8, u8)> = img.plane(c).iter().copied().zip(eq.plane(c).iter().copied()).collect();
            pairs.sort();
            prop_assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
        }
        let twice = hist_equalize(&eq);
        prop_assert!(twice.data().iter().zip(eq.data()).all(|(a, b)| a.abs_diff(*b) <= 1));
    }

    #[test]
    fn pipeline_output_is_finite_and_32(seed in any::<u64>(), side in 8usize..48) {
        let img = noise_u8(seed, side);
        let out = apply_pipeline(&img, &AugmentConfig::default(), &mut stream(seed, "p", 1, 2)).unwrap();
        prop_assert_eq!((out.width(), out.height()), (32, 32));
        prop_assert!(out.data().iter().all(|v| v.is_finite()));
    }
}
