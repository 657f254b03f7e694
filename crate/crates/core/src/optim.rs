//! Stochastic gradient descent with momentum, dampening, Nesterov and L2
//! weight decay, plus the three hyperparameter presets used by the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::param::ParamStore;
use crate::scalar::Scalar;

/// One learning-rate phase covering epochs `start..=end` (0-based). An open
/// `end` extends to the end of training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrPhase {
    pub start: usize,
    pub end: Option<usize>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub batch_size: usize,
    pub lr_schedule: Vec<LrPhase>,
    pub weight_decay: f64,
    pub momentum: f64,
    pub dampening: f64,
    pub nesterov: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Pretrain,
    Stage1,
    Stage3,
}

impl std::str::FromStr for Preset {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Self::Pretrain),
            "stage1" => Ok(Self::Stage1),
            "stage3" => Ok(Self::Stage3),
            other => Err(CoreError::Optimizer(format!("unknown preset `{other}`"))),
        }
    }
}

const fn phase(start: usize, end: Option<usize>, lr: f64) -> LrPhase {
    LrPhase { start, end, lr }
}

impl SgdConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Pretrain => Self {
                batch_size: 128,
                lr_schedule: vec![phase(0, Some(80), 0.1), phase(81, Some(119), 0.01), phase(120, None, 0.001)],
                weight_decay: 1e-4,
                momentum: 0.9,
                dampening: 0.0,
                nesterov: true,
            },
            Preset::Stage1 => Self {
                batch_size: 128,
                lr_schedule: vec![phase(0, Some(74), 0.1), phase(75, Some(124), 0.01), phase(125, None, 0.001)],
                weight_decay: 1e-5,
                momentum: 0.9,
                dampening: 0.0,
                nesterov: true,
            },
            Preset::Stage3 => Self {
                batch_size: 128,
                lr_schedule: vec![phase(0, None, 0.0005)],
                weight_decay: 0.0,
                momentum: 0.0,
                dampening: 0.0,
                nesterov: false,
            },
        }
    }

    /// Single-phase schedule at a fixed rate.
    pub fn constant(lr: f64) -> Self {
        Self {
            batch_size: 128,
            lr_schedule: vec![phase(0, None, lr)],
            weight_decay: 0.0,
            momentum: 0.0,
            dampening: 0.0,
            nesterov: false,
        }
    }

    pub fn with_constant_lr(mut self, lr: f64) -> Self {
        self.lr_schedule = vec![phase(0, None, lr)];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Optimizer(m));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        for (name, v) in [("weight_decay", self.weight_decay), ("momentum", self.momentum), ("dampening", self.dampening)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if self.nesterov && self.dampening != 0.0 {
            return bad("nesterov requires zero dampening".into());
        }
        let mut expect = 0usize;
        for (i, p) in self.lr_schedule.iter().enumerate() {
            if !(p.lr > 0.0 && p.lr.is_finite()) {
                return bad(format!("phase {i} has invalid learning rate {}", p.lr));
            }
            if p.start != expect {
                return bad(format!("phase {i} starts at epoch {} but epoch {expect} is next", p.start));
            }
            match p.end {
                Some(end) if end < p.start => return bad(format!("phase {i} ends before it starts")),
                Some(end) => expect = end + 1,
                None if i + 1 != self.lr_schedule.len() => {
                    return bad(format!("open-ended phase {i} is not the last phase"))
                }
                None => expect = usize::MAX,
            }
        }
        if self.lr_schedule.is_empty() {
            return bad("empty learning-rate schedule".into());
        }
        Ok(())
    }

    /// Checks that the schedule covers epochs `0..epochs`.
    pub fn validate_horizon(&self, epochs: usize) -> Result<()> {
        self.validate()?;
        if epochs > 0 {
            self.lr(epochs - 1)?;
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> Result<f64> {
        self.lr_schedule
            .iter()
            .find(|p| epoch >= p.start && p.end.map_or(true, |e| epoch <= e))
            .map(|p| p.lr)
            .ok_or(CoreError::NoLrForEpoch(epoch))
    }
}

/// One update of every trainable parameter:
///
/// ```text
/// g <- grad + weight_decay * w
/// v <- momentum * v + (1 - dampening) * g      (first step: v = g)
/// step = nesterov ? g + momentum * v : v
/// w <- w - lr(epoch) * step
/// ```
pub fn sgd_step<T: Scalar>(params: &mut ParamStore<T>, cfg: &SgdConfig, epoch: usize) -> Result<()> {
    let lr = cfg.lr(epoch)?;
    let (lr_t, wd, mom, damp) = (
        T::from_f64_lossy(lr),
        T::from_f64_lossy(cfg.weight_decay),
        T::from_f64_lossy(cfg.momentum),
        T::from_f64_lossy(1.0 - cfg.dampening),
    );
    for (_, p) in params.params_mut().filter(|(_, p)| p.trainable) {
        let mut g = p.grad.clone();
        if cfg.weight_decay != 0.0 {
            for (gi, &wi) in g.data_mut().iter_mut().zip(p.value.data()) {
                *gi += wd * wi;
            }
        }
        let v = match p.momentum_buffer.take() {
            None => g.clone(),
            Some(mut v) => {
                for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
                    *vi = mom * *vi + damp * gi;
                }
                v
            }
        };
        let w = p.value_mut();
        if cfg.nesterov {
            for ((wi, &gi), &vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data()) {
                *wi -= lr_t * (gi + mom * vi);
            }
        } else {
            for (wi, &vi) in w.data_mut().iter_mut().zip(v.data()) {
                *wi -= lr_t * vi;
            }
        }
        p.momentum_buffer = Some(v);
    }
    Ok(())
}
