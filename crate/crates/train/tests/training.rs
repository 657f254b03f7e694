use cedg_augment::{AugmentConfig, ImageU8, Normalization};
use cedg_core::nn::{build_resnet, build_spearnet, HeadKind, SpearConfig};
use cedg_core::{ModelBundle32, SgdConfig};
use cedg_forge::LabeledDataset;
use cedg_train::records::{read_csv, write_csv};
use cedg_train::{
    baseline_no_cedg, distill_stage1, train_stage3, BaselineConfig, DistillConfig, EvalSet, Stage3Config, TrainError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Class `k` of `classes`: a bright bar whose orientation and colour depend
/// on `k`, on a noisy background.
fn toy_dataset(n: usize, classes: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = LabeledDataset::new((0..classes).map(|k| format!("c{k}")).collect());
    for i in 0..n {
        let k = i % classes;
        let offset = rng.gen_range(8..24usize);
        let img = ImageU8::from_fn(32, 32, |c, y, x| {
            let on = match k % 4 {
                0 => y.abs_diff(offset) < 3,
                1 => x.abs_diff(offset) < 3,
                2 => (x + y).abs_diff(2 * offset) < 4,
                _ => x.abs_diff(offset) < 3 && y.abs_diff(offset) < 3,
            };
            let tint = if c == (k / 4 + k) % 3 { 80 } else { 0 };
            if on { 200 } else { (tint + rng.gen_range(0..60)) as u8 }
        });
        ds.push(k, img).unwrap();
    }
    ds
}

fn quick_stage3(seed: u64) -> Stage3Config {
    Stage3Config {
        head: HeadKind::A1,
        hidden: 16,
        enlarged_hidden: (64, 16),
        epochs: [2, 2, 3],
        sgd: SgdConfig { batch_size: 25, ..SgdConfig::constant(0.05) },
        seed,
        eval_batch: 100,
        ..Stage3Config::default()
    }
}

#[test]
fn distillation_lowers_heldout_loss() {
    let common = toy_dataset(200, 10, 1);
    let mut teacher: ModelBundle32 = build_resnet(1, 3).unwrap();
    let mut student: ModelBundle32 = build_spearnet(&SpearConfig::default(), 4).unwrap();
    let cfg = DistillConfig {
        epochs: 20,
        sgd: SgdConfig { batch_size: 30, momentum: 0.9, ..SgdConfig::constant(0.01) },
        seed: 9,
        holdout: 0.2,
        eval_batch: 64,
        finetune: None,
    };
    let out = distill_stage1(&mut teacher, &mut student, &common, &Normalization::default(), &cfg).unwrap();
    assert_eq!(out.records.len(), 21);
    let first = out.records[0].heldout_lrp;
    let last = out.records[20].heldout_lrp;
    assert!(last < first, "held-out {first} -> {last}");
    assert!(out.best_heldout <= last);
    // Stem and readout are the teacher's and stay frozen.
    for (name, p) in student.params.params() {
        if name.starts_with("base.") || name.starts_with("re.") {
            assert_eq!(p.value, teacher.params.param(name).unwrap().value, "{name}");
            assert!(!p.trainable);
        }
    }
}

#[test]
fn identical_student_has_zero_mimic_loss() {
    let common = toy_dataset(40, 10, 2);
    let mut teacher: ModelBundle32 = build_resnet(1, 3).unwrap();
    let mut student = teacher.clone();
    let cfg = DistillConfig {
        epochs: 1,
        sgd: SgdConfig { batch_size: 16, ..SgdConfig::constant(0.01) },
        holdout: 0.25,
        eval_batch: 64,
        ..DistillConfig::default()
    };
    let out = distill_stage1(&mut teacher, &mut student, &common, &Normalization::default(), &cfg).unwrap();
    assert_eq!(out.records[0].heldout_lrp, 0.0);
}

#[test]
fn mismatched_stem_is_rejected() {
    let common = toy_dataset(20, 10, 2);
    let mut teacher: ModelBundle32 = build_resnet(1, 3).unwrap();
    let mut arch = build_spearnet::<f32>(&SpearConfig::default(), 4).unwrap().arch;
    if let cedg_core::nn::Layer::Conv { bn, .. } = &mut arch.base.layers[0] {
        *bn = false;
    }
    let mut student = ModelBundle32::new(arch, 4).unwrap();
    let cfg = DistillConfig { epochs: 1, ..DistillConfig::default() };
    let err = distill_stage1(&mut teacher, &mut student, &common, &Normalization::default(), &cfg).unwrap_err();
    assert!(matches!(err, TrainError::Config(_)), "{err}");
}

#[test]
fn stage3_is_deterministic_and_beats_chance() {
    let train = toy_dataset(200, 4, 3);
    let val = EvalSet::from_dataset(&toy_dataset(100, 4, 4), &Normalization::default()).unwrap();
    let run = || {
        let mut b: ModelBundle32 = build_spearnet(&SpearConfig::default(), 7).unwrap();
        let out = train_stage3(&mut b, &train, &val, &quick_stage3(11)).unwrap();
        (out, b)
    };
    let (a, bundle_a) = run();
    let (b, bundle_b) = run();
    assert_eq!(a, b);
    assert_eq!(
        cedg_core::checkpoint::to_bytes(&bundle_a).unwrap(),
        cedg_core::checkpoint::to_bytes(&bundle_b).unwrap()
    );
    assert_eq!(a.steps.len(), 3);
    assert_eq!(a.steps[0].records.len(), 2);
    assert_eq!(a.class_weights.as_ref().unwrap(), &vec![0.25; 4]);
    let last = a.final_step();
    assert!(last.selection.best_ave < 0.75, "{:?}", last.records);
    assert_eq!(last.best.ave, last.selection.best_ave);
    // Compact head is attached at the end.
    assert!(bundle_a.params.param("hc.g0.fc1.weight").unwrap().value.shape() == [16, 1024]);
}

#[test]
fn empty_validation_is_an_error() {
    let train = toy_dataset(8, 4, 3);
    let val = EvalSet { inputs: cedg_core::Tensor32::zeros([0, 3, 32, 32]), labels: vec![] };
    let mut b: ModelBundle32 = build_spearnet(&SpearConfig::default(), 7).unwrap();
    assert!(matches!(train_stage3(&mut b, &train, &val, &quick_stage3(1)), Err(TrainError::EmptyData(_))));
}

#[test]
fn baseline_emits_comparable_records() {
    let train = toy_dataset(100, 4, 5);
    let val = EvalSet::from_dataset(&toy_dataset(40, 4, 6), &Normalization::default()).unwrap();
    let mut b: ModelBundle32 = build_spearnet(&SpearConfig::default(), 8).unwrap();
    let cfg = BaselineConfig {
        stage: Stage3Config { augment: AugmentConfig::none(), ..quick_stage3(2) },
        first_sgd: SgdConfig { batch_size: 25, ..SgdConfig::constant(0.05) },
        max_first_epochs: 6,
        patience: 2,
    };
    let steps = baseline_no_cedg(&mut b, &train, &val, &cfg).unwrap();
    assert_eq!(steps.len(), 2);
    let first = &steps[0];
    assert!(first.records.len() <= 6);
    if first.records.len() < 6 {
        assert_eq!(first.records.len() - first.selection.best_epoch, 2);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("baseline.csv");
    write_csv(&steps[1].records, &path).unwrap();
    assert_eq!(read_csv(&path).unwrap(), steps[1].records);
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("epoch,train_fl,val_ave,val_er\n"));
}
