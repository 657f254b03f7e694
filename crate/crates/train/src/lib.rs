//! Losses, metrics, category balancing and the training procedures:
//! teacher pretraining, feature distillation, the three-step target-domain
//! schedule and the from-scratch baseline.

pub mod cbw;
pub mod distill;
pub mod error;
pub mod fit;
pub mod loss;
pub mod metrics;
pub mod records;
pub mod stage3;

pub use cbw::category_balancing_weights;
pub use distill::{distill_stage1, pretrain_teacher, DistillConfig, DistillOutcome, DistillRecord, FinetuneConfig};
pub use error::{Result, TrainError};
pub use fit::{fit, freeze_batch_norm, EvalSet, FitConfig, Objective};
pub use loss::{cross_entropy, focal_loss, focal_loss_var, per_sample_focal, FocalConfig};
pub use metrics::{evaluate, ConfusionMatrix, EvalSummary};
pub use records::{select_best, sum_metric, EpochRecord, SelectionState, StepReport};
pub use stage3::{baseline_no_cedg, train_stage3, BaselineConfig, Stage3Config, Stage3Outcome};
