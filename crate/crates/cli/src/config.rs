//! Declarative run configuration, read from JSON and overridable by flags.
//!
//! Every section has full-scale defaults. [`RunConfig::desk`] is the reduced
//! profile that finishes on one CPU core in about a minute.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cedg_augment::{AugmentConfig, Augmentation};
use cedg_core::nn::{HeadKind, SpearConfig};
use cedg_core::optim::LrPhase;
use cedg_core::{Preset, SgdConfig};
use cedg_train::{BaselineConfig, DistillConfig, FinetuneConfig, Stage3Config};

use crate::error::{CliError, Result};

/// Optimizer settings: a named preset plus optional field overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSgd {
    pub preset: Preset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Replaces the preset's schedule with one constant rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// Replaces the preset's schedule with explicit phases.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_schedule: Option<Vec<LrPhase>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nesterov: Option<bool>,
}

impl StageSgd {
    pub fn preset(preset: Preset) -> Self {
        Self { preset, batch_size: None, lr: None, lr_schedule: None, momentum: None, weight_decay: None, nesterov: None }
    }

    pub fn resolve(&self) -> Result<SgdConfig> {
        let mut s = SgdConfig::preset(self.preset);
        if let Some(b) = self.batch_size {
            s.batch_size = b;
        }
        match (self.lr, &self.lr_schedule) {
            (Some(_), Some(_)) => return Err(CliError::Config("set either lr or lr_schedule, not both".into())),
            (Some(lr), None) => s = s.with_constant_lr(lr),
            (None, Some(phases)) => s.lr_schedule = phases.clone(),
            (None, None) => {}
        }
        if let Some(m) = self.momentum {
            s.momentum = m;
        }
        if let Some(w) = self.weight_decay {
            s.weight_decay = w;
        }
        if let Some(n) = self.nesterov {
            s.nesterov = n;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub common_train: PathBuf,
    pub common_val: PathBuf,
    pub manifest: PathBuf,
    pub proposals: PathBuf,
    /// Output of `forge`, training input of `train` and `baseline`.
    pub forged: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub teacher: PathBuf,
    pub student: PathBuf,
    pub classifier: PathBuf,
    pub baseline: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            common_train: "common_train.bin".into(),
            common_val: "common_val.bin".into(),
            manifest: "corpus/manifest.jsonl".into(),
            proposals: "corpus/proposals.jsonl".into(),
            forged: "forged.bin".into(),
            val: "target_val.bin".into(),
            test: "target_test.bin".into(),
            teacher: "teacher.ckpt".into(),
            student: "student.ckpt".into(),
            classifier: "classifier.ckpt".into(),
            baseline: "baseline.ckpt".into(),
            reports: "reports".into(),
        }
    }
}

impl Paths {
    fn each_mut(&mut self) -> [&mut PathBuf; 12] {
        [
            &mut self.common_train,
            &mut self.common_val,
            &mut self.manifest,
            &mut self.proposals,
            &mut self.forged,
            &mut self.val,
            &mut self.test,
            &mut self.teacher,
            &mut self.student,
            &mut self.classifier,
            &mut self.baseline,
            &mut self.reports,
        ]
    }

    /// Makes relative paths relative to `dir`.
    pub fn resolve_against(&mut self, dir: &Path) {
        for p in self.each_mut() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    /// Residual blocks per stage; 3 gives ResNet-20.
    pub blocks_per_group: usize,
    pub epochs: usize,
    pub sgd: StageSgd,
    /// Augmentations used while pretraining; the remaining settings come
    /// from the top-level `augment` section.
    pub augmentations: Vec<Augmentation>,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self { blocks_per_group: 3, epochs: 200, sgd: StageSgd::preset(Preset::Pretrain), augmentations: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub epochs: usize,
    pub sgd: StageSgd,
    pub holdout: f64,
    pub finetune: Option<FinetuneConfig>,
}

impl Default for DistillSection {
    fn default() -> Self {
        Self { epochs: 200, sgd: StageSgd::preset(Preset::Stage1), holdout: 0.1, finetune: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage3Section {
    pub epochs: [usize; 3],
    pub sgd: StageSgd,
    /// Step-2 optimizer; `sgd` when absent.
    pub backbone_sgd: Option<StageSgd>,
    pub freeze_backbone_bn: bool,
}

impl Default for Stage3Section {
    fn default() -> Self {
        Self { epochs: [200; 3], sgd: StageSgd::preset(Preset::Stage3), backbone_sgd: None, freeze_backbone_bn: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub max_first_epochs: usize,
    pub patience: usize,
    pub first_sgd: StageSgd,
    /// Second phase; defaults to the target-stage optimizer when absent.
    pub second_sgd: Option<StageSgd>,
    /// Second-phase epochs; defaults to the final target step's count.
    pub second_epochs: Option<usize>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            max_first_epochs: 200,
            patience: 50,
            first_sgd: StageSgd::preset(Preset::Stage1),
            second_sgd: None,
            second_epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub head: HeadKind,
    pub hidden: usize,
    pub enlarged_hidden: (usize, usize),
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self { head: HeadKind::A1, hidden: 64, enlarged_hidden: (10240, 64) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub teacher: TeacherConfig,
    pub student: SpearConfig,
    pub distill: DistillSection,
    pub stage3: Stage3Section,
    pub baseline: BaselineSection,
    pub classifier: ClassifierSection,
    pub augment: AugmentConfig,
    pub lambda: f64,
    pub gamma: f64,
    pub cbw: bool,
    pub eval_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            teacher: TeacherConfig::default(),
            student: SpearConfig::default(),
            distill: DistillSection::default(),
            stage3: Stage3Section::default(),
            baseline: BaselineSection::default(),
            classifier: ClassifierSection::default(),
            augment: AugmentConfig::default(),
            lambda: 0.7,
            gamma: 2.0,
            cbw: true,
            eval_batch: 256,
        }
    }
}

impl RunConfig {
    /// Reduced profile for the generated fixtures: a one-block-per-stage
    /// teacher, a few epochs per stage, narrower heads, and a larger
    /// constant rate with momentum for the target steps, since the
    /// full-scale rate barely moves in a handful of epochs. The backbone
    /// gets a tenth of the head rate with its normalization statistics
    /// frozen.
    pub fn desk() -> Self {
        let fast = |preset, lr| StageSgd {
            batch_size: Some(32),
            lr: Some(lr),
            momentum: Some(0.9),
            nesterov: Some(true),
            ..StageSgd::preset(preset)
        };
        Self {
            teacher: TeacherConfig {
                blocks_per_group: 1,
                epochs: 3,
                sgd: StageSgd { batch_size: Some(16), ..fast(Preset::Pretrain, 0.05) },
                augmentations: Vec::new(),
            },
            distill: DistillSection {
                epochs: 10,
                sgd: StageSgd {
                    lr: None,
                    lr_schedule: Some(vec![
                        LrPhase { start: 0, end: Some(3), lr: 0.01 },
                        LrPhase { start: 4, end: Some(6), lr: 0.003 },
                        LrPhase { start: 7, end: None, lr: 0.001 },
                    ]),
                    ..fast(Preset::Stage1, 0.01)
                },
                holdout: 0.1,
                finetune: None,
            },
            stage3: Stage3Section {
                epochs: [8, 6, 14],
                sgd: fast(Preset::Stage3, 0.2),
                backbone_sgd: Some(fast(Preset::Stage3, 0.02)),
                freeze_backbone_bn: true,
            },
            baseline: BaselineSection {
                max_first_epochs: 20,
                patience: 8,
                first_sgd: fast(Preset::Stage1, 0.2),
                second_sgd: None,
                second_epochs: None,
            },
            classifier: ClassifierSection { head: HeadKind::A1, hidden: 32, enlarged_hidden: (128, 32) },
            ..Self::default()
        }
    }

    /// Reads `path`; relative paths inside are taken from its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.paths.resolve_against(&dir);
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    /// Checks every value that does not depend on which files exist.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(CliError::Config(m));
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return cfg_err(format!("lambda must lie in (0, 1], got {}", self.lambda));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return cfg_err(format!("gamma must be finite and >= 0, got {}", self.gamma));
        }
        if self.eval_batch == 0 || self.teacher.blocks_per_group == 0 {
            return cfg_err("eval_batch and teacher.blocks_per_group must be positive".into());
        }
        if !(self.distill.holdout > 0.0 && self.distill.holdout < 1.0) {
            return cfg_err(format!("distill.holdout must lie in (0, 1), got {}", self.distill.holdout));
        }
        for (name, sgd) in [
            ("teacher", &self.teacher.sgd),
            ("distill", &self.distill.sgd),
            ("stage3", &self.stage3.sgd),
            ("baseline.first", &self.baseline.first_sgd),
        ] {
            sgd.resolve().map_err(|e| CliError::Config(format!("{name}.sgd: {e}")))?;
        }
        for (name, sgd) in [("stage3.backbone", &self.stage3.backbone_sgd), ("baseline.second", &self.baseline.second_sgd)] {
            if let Some(sgd) = sgd {
                sgd.resolve().map_err(|e| CliError::Config(format!("{name}_sgd: {e}")))?;
            }
        }
        self.augment.validate()?;
        self.teacher_augment().validate()?;
        Ok(())
    }

    /// Fails with a config error naming the first path that does not exist.
    pub fn require(&self, paths: &[&Path]) -> Result<()> {
        match paths.iter().find(|p| !p.exists()) {
            Some(p) => Err(CliError::Config(format!("{} does not exist", p.display()))),
            None => Ok(()),
        }
    }

    pub fn teacher_augment(&self) -> AugmentConfig {
        AugmentConfig { enabled: self.teacher.augmentations.clone(), ..self.augment.clone() }
    }

    pub fn distill_config(&self) -> Result<DistillConfig> {
        Ok(DistillConfig {
            epochs: self.distill.epochs,
            sgd: self.distill.sgd.resolve()?,
            seed: self.seed,
            holdout: self.distill.holdout,
            eval_batch: self.eval_batch,
            finetune: self.distill.finetune.clone(),
        })
    }

    pub fn stage3_config(&self) -> Result<Stage3Config> {
        Ok(Stage3Config {
            head: self.classifier.head,
            hidden: self.classifier.hidden,
            enlarged_hidden: self.classifier.enlarged_hidden,
            epochs: self.stage3.epochs,
            sgd: self.stage3.sgd.resolve()?,
            backbone_sgd: self.stage3.backbone_sgd.as_ref().map(StageSgd::resolve).transpose()?,
            freeze_backbone_bn: self.stage3.freeze_backbone_bn,
            gamma: self.gamma,
            cbw: self.cbw,
            augment: self.augment.clone(),
            seed: self.seed,
            eval_batch: self.eval_batch,
        })
    }

    pub fn baseline_config(&self) -> Result<BaselineConfig> {
        let mut stage = self.stage3_config()?;
        if let Some(s) = &self.baseline.second_sgd {
            stage.sgd = s.resolve()?;
        }
        if let Some(e) = self.baseline.second_epochs {
            stage.epochs[2] = e;
        }
        Ok(BaselineConfig {
            stage,
            first_sgd: self.baseline.first_sgd.resolve()?,
            max_first_epochs: self.baseline.max_first_epochs,
            patience: self.baseline.patience,
        })
    }
}
