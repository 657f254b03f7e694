//! The pipeline stages as plain functions over a [`RunConfig`]. Commands
//! wrap them with file output and reports; tests call them directly.

use serde::{Deserialize, Serialize};

use cedg_core::nn::{build_resnet, build_spearnet};
use cedg_core::{checkpoint, Cut, ModelBundle32};
use cedg_forge::{
    forge, load_corpus, read_dataset, write_dataset, ForgeConfig, ForgeReport, HierarchyMap, LabeledDataset,
    PrecomputedProposals, TopicTable,
};
use cedg_train::{
    baseline_no_cedg, distill_stage1, evaluate, pretrain_teacher, train_stage3, DistillOutcome, EvalSet, EvalSummary,
    FitConfig, FocalConfig, Stage3Outcome, StepReport,
};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

const TEACHER_INIT: u64 = 0x7EAC;
const STUDENT_INIT: u64 = 0x5737;
const BASELINE_INIT: u64 = 0xBA5E;

pub fn read(path: &std::path::Path) -> Result<LabeledDataset> {
    Ok(read_dataset(path)?)
}

/// Forges the training set from the weak corpus and its proposals.
pub fn run_forge(cfg: &RunConfig) -> Result<(LabeledDataset, ForgeReport)> {
    let p = &cfg.paths;
    cfg.require(&[&p.manifest, &p.proposals])?;
    let table = TopicTable::default();
    let corpus = load_corpus(&p.manifest, &table)?;
    let proposals = PrecomputedProposals::load(&p.proposals)?;
    let fc = ForgeConfig { lambda: cfg.lambda as f32, ..ForgeConfig::default() };
    let (ds, report) = forge(&corpus, &proposals, &table, &HierarchyMap::default(), &fc)?;
    if ds.is_empty() {
        return Err(CliError::Data(format!("no region passed the filter at lambda {}", cfg.lambda)));
    }
    Ok((ds, report))
}

/// Trains the teacher from scratch on the common-domain split.
pub fn run_pretrain(cfg: &RunConfig) -> Result<(ModelBundle32, StepReport)> {
    let p = &cfg.paths;
    cfg.require(&[&p.common_train, &p.common_val])?;
    let train = read(&p.common_train)?;
    let val = EvalSet::from_dataset(&read(&p.common_val)?, &cfg.augment.normalization)?;
    let mut teacher = build_resnet(cfg.teacher.blocks_per_group, cfg.seed ^ TEACHER_INIT)?;
    let fit = FitConfig {
        epochs: cfg.teacher.epochs,
        sgd: cfg.teacher.sgd.resolve()?,
        augment: cfg.teacher_augment(),
        focal: FocalConfig::cross_entropy(),
        seed: cfg.seed,
        eval_batch: cfg.eval_batch,
        patience: None,
        freeze_bn: false,
    };
    let report = pretrain_teacher(&mut teacher, &train, &val, &fit)?;
    Ok((teacher, report))
}

/// Builds the student and distills the teacher's features into it.
pub fn run_distill(cfg: &RunConfig, teacher: &mut ModelBundle32) -> Result<(ModelBundle32, DistillOutcome)> {
    cfg.require(&[&cfg.paths.common_train])?;
    let common = read(&cfg.paths.common_train)?;
    let mut student = build_spearnet(&cfg.student, cfg.seed ^ STUDENT_INIT)?;
    let outcome = distill_stage1(teacher, &mut student, &common, &cfg.augment.normalization, &cfg.distill_config()?)?;
    Ok((student, outcome))
}

fn target_sets(cfg: &RunConfig, train: Option<LabeledDataset>) -> Result<(LabeledDataset, EvalSet)> {
    let p = &cfg.paths;
    let train = match train {
        Some(ds) => ds,
        None => {
            cfg.require(&[&p.forged])?;
            read(&p.forged)?
        }
    };
    cfg.require(&[&p.val])?;
    let val = EvalSet::from_dataset(&read(&p.val)?, &cfg.augment.normalization)?;
    Ok((train, val))
}

/// Three-step target training of a distilled student. `train` defaults to
/// the forged dataset on disk.
pub fn run_train(cfg: &RunConfig, student: &mut ModelBundle32, train: Option<LabeledDataset>) -> Result<Stage3Outcome> {
    let (train, val) = target_sets(cfg, train)?;
    Ok(train_stage3(student, &train, &val, &cfg.stage3_config()?)?)
}

/// The same student architecture trained on the target data from a random
/// initialization.
pub fn run_baseline(cfg: &RunConfig, train: Option<LabeledDataset>) -> Result<(ModelBundle32, Vec<StepReport>)> {
    let (train, val) = target_sets(cfg, train)?;
    let mut bundle = build_spearnet(&cfg.student, cfg.seed ^ BASELINE_INIT)?;
    let steps = baseline_no_cedg(&mut bundle, &train, &val, &cfg.baseline_config()?)?;
    Ok((bundle, steps))
}

/// Scores `bundle` on `ds` at the classifier head when present, otherwise at
/// the common-domain readout.
pub fn run_eval(cfg: &RunConfig, bundle: &mut ModelBundle32, ds: &LabeledDataset) -> Result<EvalSummary> {
    let set = EvalSet::from_dataset(ds, &cfg.augment.normalization)?;
    let cut = if bundle.arch.hc.is_some() { Cut::Hc } else { Cut::Re };
    let classes = match cut {
        Cut::Hc => 4,
        _ => 10,
    };
    if ds.categories.len() != classes {
        return Err(CliError::Config(format!(
            "dataset has {} categories but the checkpoint predicts {classes}",
            ds.categories.len()
        )));
    }
    Ok(evaluate(bundle, &set.inputs, &set.labels, cut, cfg.eval_batch)?)
}

pub fn save_checkpoint(bundle: &ModelBundle32, path: &std::path::Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(checkpoint::save(bundle, path)?)
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<ModelBundle32> {
    if !path.exists() {
        return Err(CliError::Config(format!("{} does not exist", path.display())));
    }
    Ok(checkpoint::load(path)?)
}

pub fn save_dataset(ds: &LabeledDataset, path: &std::path::Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(write_dataset(ds, path)?)
}

/// Summary of one complete forge, distill, train and baseline pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeskOutcome {
    pub seed: u64,
    pub forge: ForgeReport,
    pub teacher: StepReport,
    pub distill: DistillOutcome,
    pub stage3: Stage3Outcome,
    pub baseline: Vec<StepReport>,
    pub cedg_val_ave: f64,
    pub baseline_val_ave: f64,
    pub seconds: f64,
}

/// Every stage in order, in memory, writing nothing.
pub fn desk_run(cfg: &RunConfig) -> Result<DeskOutcome> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let (forged, forge_report) = run_forge(cfg)?;
    let (mut teacher, teacher_report) = run_pretrain(cfg)?;
    let (mut student, distill) = run_distill(cfg, &mut teacher)?;
    let stage3 = run_train(cfg, &mut student, Some(forged.clone()))?;
    let (_, baseline) = run_baseline(cfg, Some(forged))?;
    let cedg_val_ave = stage3.final_step().best.ave;
    let baseline_val_ave = baseline.iter().map(|s| s.best.ave).fold(f64::INFINITY, f64::min);
    Ok(DeskOutcome {
        seed: cfg.seed,
        forge: forge_report,
        teacher: teacher_report,
        distill,
        stage3,
        baseline,
        cedg_val_ave,
        baseline_val_ave,
        seconds: start.elapsed().as_secs_f64(),
    })
}
