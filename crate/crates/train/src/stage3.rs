//! Target-domain training: the three-step schedule and the from-scratch
//! baseline it is compared against.

use serde::{Deserialize, Serialize};

use cedg_augment::AugmentConfig;
use cedg_core::nn::{build_classifier, ClassifierVariant, HeadKind};
use cedg_core::{ModelBundle32, Preset, SgdConfig};
use cedg_forge::LabeledDataset;

use crate::cbw::category_balancing_weights;
use crate::error::{Result, TrainError};
use crate::fit::{fit, EvalSet, FitConfig, Objective};
use crate::loss::FocalConfig;
use crate::records::StepReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage3Config {
    pub head: HeadKind,
    pub hidden: usize,
    /// Hidden widths of the large head trained in steps 1 and 2.
    pub enlarged_hidden: (usize, usize),
    pub epochs: [usize; 3],
    pub sgd: SgdConfig,
    /// Optimizer for step 2 only; `sgd` when absent.
    pub backbone_sgd: Option<SgdConfig>,
    /// Step 2 keeps the backbone's batch-norm layers, running statistics
    /// included, as they came out of distillation.
    pub freeze_backbone_bn: bool,
    pub gamma: f64,
    pub cbw: bool,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub eval_batch: usize,
}

impl Default for Stage3Config {
    fn default() -> Self {
        let v = ClassifierVariant::new(HeadKind::A1);
        Self {
            head: v.kind,
            hidden: v.hidden,
            enlarged_hidden: v.enlarged_hidden,
            epochs: [200; 3],
            sgd: SgdConfig::preset(Preset::Stage3),
            backbone_sgd: None,
            freeze_backbone_bn: true,
            gamma: 2.0,
            cbw: true,
            augment: AugmentConfig::default(),
            seed: 0,
            eval_batch: 256,
        }
    }
}

impl Stage3Config {
    pub fn compact_head(&self) -> ClassifierVariant {
        ClassifierVariant { hidden: self.hidden, enlarged_hidden: self.enlarged_hidden, ..ClassifierVariant::new(self.head) }
    }

    /// The step-1/2 head. A4 has no groups to widen, so it keeps its
    /// compact form.
    pub fn large_head(&self) -> ClassifierVariant {
        let compact = self.compact_head();
        ClassifierVariant { enlarged: self.head != HeadKind::A4, ..compact }
    }

    /// Focal settings for `ds`, with balancing weights when enabled.
    pub fn focal_for(&self, ds: &LabeledDataset) -> Result<FocalConfig> {
        let class_weights = if self.cbw { Some(category_balancing_weights(&ds.counts())?) } else { None };
        Ok(FocalConfig { gamma: self.gamma, class_weights })
    }

    fn fit_config(&self, epochs: usize, focal: &FocalConfig, sgd: &SgdConfig) -> FitConfig {
        FitConfig {
            epochs,
            sgd: sgd.clone(),
            augment: self.augment.clone(),
            focal: focal.clone(),
            seed: self.seed,
            eval_batch: self.eval_batch,
            patience: None,
            freeze_bn: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage3Outcome {
    pub steps: Vec<StepReport>,
    pub class_weights: Option<Vec<f64>>,
}

impl Stage3Outcome {
    pub fn final_step(&self) -> &StepReport {
        self.steps.last().expect("at least one step")
    }
}

/// 1. large head on the frozen backbone; 2. backbone under the frozen best
/// large head; 3. fresh compact head on the frozen backbone. Each step
/// restores its best validation-AVE epoch before the next begins.
pub fn train_stage3(
    bundle: &mut ModelBundle32,
    ds: &LabeledDataset,
    val: &EvalSet,
    cfg: &Stage3Config,
) -> Result<Stage3Outcome> {
    if val.is_empty() {
        return Err(TrainError::EmptyData("validation"));
    }
    let focal = cfg.focal_for(ds)?;
    let mut steps = Vec::new();

    bundle.attach_head(build_classifier(&cfg.large_head())?, cfg.seed ^ 0x51)?;
    let c1 = cfg.fit_config(cfg.epochs[0], &focal, &cfg.sgd);
    steps.push(fit(bundle, ds, val, &["hc."], Objective::HEAD, &c1, "step1")?);

    let mut c2 = cfg.fit_config(cfg.epochs[1], &focal, cfg.backbone_sgd.as_ref().unwrap_or(&cfg.sgd));
    c2.freeze_bn = cfg.freeze_backbone_bn;
    steps.push(fit(bundle, ds, val, &["base.", "mid."], Objective::HEAD, &c2, "step2")?);

    bundle.attach_head(build_classifier(&cfg.compact_head())?, cfg.seed ^ 0x53)?;
    let c3 = cfg.fit_config(cfg.epochs[2], &focal, &cfg.sgd);
    steps.push(fit(bundle, ds, val, &["hc."], Objective::HEAD, &c3, "step3")?);

    Ok(Stage3Outcome { steps, class_weights: focal.class_weights })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Head, loss, augmentation and seed settings shared with the full run;
    /// `stage.sgd` and `stage.epochs[2]` drive the second phase.
    pub stage: Stage3Config,
    pub first_sgd: SgdConfig,
    pub max_first_epochs: usize,
    /// Epochs without a new best validation AVE that count as converged.
    pub patience: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            stage: Stage3Config::default(),
            first_sgd: SgdConfig::preset(Preset::Stage1),
            max_first_epochs: 200,
            patience: 50,
        }
    }
}

/// End-to-end training of a randomly initialized network with the compact
/// head: first-stage preset until convergence, then the target-stage preset
/// from the best checkpoint. Nothing is frozen.
pub fn baseline_no_cedg(
    bundle: &mut ModelBundle32,
    ds: &LabeledDataset,
    val: &EvalSet,
    cfg: &BaselineConfig,
) -> Result<Vec<StepReport>> {
    let s = &cfg.stage;
    let focal = s.focal_for(ds)?;
    if bundle.arch.hc.is_none() {
        bundle.attach_head(build_classifier(&s.compact_head())?, s.seed ^ 0x53)?;
    }
    let mut first = s.fit_config(cfg.max_first_epochs, &focal, &cfg.first_sgd);
    first.patience = Some(cfg.patience);
    let a = fit(bundle, ds, val, &[""], Objective::HEAD, &first, "baseline-first")?;
    let second = s.fit_config(s.epochs[2], &focal, &s.sgd);
    let b = fit(bundle, ds, val, &[""], Objective::HEAD, &second, "baseline-second")?;
    Ok(vec![a, b])
}
