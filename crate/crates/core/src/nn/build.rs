//! Builders for the teacher, the compact student family and the parallel
//! classification heads.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ArchSpec, BundleArch, FeatureShape, Layer, ModelBundle, Shortcut};
use crate::error::{CoreError, Result};
use crate::ops::Activation;
use crate::scalar::Scalar;

/// Number of coarse target categories emitted by a classification head.
pub const HEAD_OUTPUTS: usize = 4;
const COMMON_CLASSES: usize = 10;
const FEATURE_WIDTH: usize = 64;

fn conv(name: String, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Layer {
    Layer::Conv { name, in_ch, out_ch, kernel, stride, padding: kernel / 2, bn: true }
}

fn stem() -> ArchSpec {
    ArchSpec {
        name: "base".into(),
        input: FeatureShape::Image { c: 3, h: 32, w: 32 },
        layers: vec![conv("base.stem".into(), 3, 16, 3, 1), Layer::Relu],
    }
}

fn common_readout() -> ArchSpec {
    ArchSpec {
        name: "re".into(),
        input: FeatureShape::Vector { n: FEATURE_WIDTH },
        layers: vec![Layer::Linear { name: "re.fc".into(), inputs: FEATURE_WIDTH, outputs: COMMON_CLASSES }],
    }
}

/// Residual network of depth `6n + 2` on 32×32 inputs (three groups of `n`
/// basic blocks with 16, 32 and 64 filters).
pub fn build_resnet<T: Scalar>(blocks_per_group: usize, seed: u64) -> Result<ModelBundle<T>> {
    if blocks_per_group == 0 {
        return Err(CoreError::Arch("resnet needs at least one block per group".into()));
    }
    let mut layers = Vec::new();
    let mut in_ch = 16;
    for (gi, &width) in [16usize, 32, 64].iter().enumerate() {
        for bi in 0..blocks_per_group {
            let stride = if gi > 0 && bi == 0 { 2 } else { 1 };
            let p = format!("mid.g{gi}.b{bi}");
            let body = vec![
                conv(format!("{p}.conv1"), in_ch, width, 3, stride),
                Layer::Relu,
                conv(format!("{p}.conv2"), width, width, 3, 1),
            ];
            let shortcut = if stride != 1 || in_ch != width {
                Shortcut::Projection { name: format!("{p}.proj"), in_ch, out_ch: width, stride }
            } else {
                Shortcut::Identity
            };
            layers.push(Layer::Residual { body, shortcut });
            layers.push(Layer::Relu);
            in_ch = width;
        }
    }
    layers.push(Layer::AvgPool { k: 8 });
    layers.push(Layer::Flatten);
    let arch = BundleArch {
        name: format!("resnet{}", 6 * blocks_per_group + 2),
        base: stem(),
        mid: ArchSpec { name: "mid".into(), input: FeatureShape::Image { c: 16, h: 32, w: 32 }, layers },
        re: common_readout(),
        hc: None,
    };
    ModelBundle::new(arch, seed)
}

pub fn build_resnet20<T: Scalar>(seed: u64) -> Result<ModelBundle<T>> {
    build_resnet(3, seed)
}

/// One stage of the student: a stride-2 transition conv to `out_channels`,
/// then `blocks` bottleneck blocks squeezing to `bottleneck` channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpearStage {
    pub out_channels: usize,
    pub blocks: usize,
    pub bottleneck: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpearConfig {
    pub stages: Vec<SpearStage>,
}

impl Default for SpearConfig {
    fn default() -> Self {
        Self {
            stages: vec![
                SpearStage { out_channels: 16, blocks: 5, bottleneck: 8 },
                SpearStage { out_channels: 32, blocks: 5, bottleneck: 16 },
                SpearStage { out_channels: 64, blocks: 4, bottleneck: 32 },
            ],
        }
    }
}

/// The compact student. The stem and readout match the teacher's shapes; the
/// middle must end at 64 channels on a 4×4 grid.
pub fn build_spearnet<T: Scalar>(cfg: &SpearConfig, seed: u64) -> Result<ModelBundle<T>> {
    if cfg.stages.is_empty() {
        return Err(CoreError::Arch("spearnet config has no stages".into()));
    }
    let mut layers = Vec::new();
    let mut in_ch = 16;
    for (si, st) in cfg.stages.iter().enumerate() {
        if st.out_channels == 0 || st.bottleneck == 0 {
            return Err(CoreError::Arch(format!("stage {si}: zero width")));
        }
        layers.push(conv(format!("mid.s{si}.down"), in_ch, st.out_channels, 3, 2));
        layers.push(Layer::Relu);
        for bi in 0..st.blocks {
            let p = format!("mid.s{si}.b{bi}");
            let body = vec![
                conv(format!("{p}.reduce"), st.out_channels, st.bottleneck, 1, 1),
                Layer::Relu,
                conv(format!("{p}.conv"), st.bottleneck, st.bottleneck, 3, 1),
                Layer::Relu,
                conv(format!("{p}.expand"), st.bottleneck, st.out_channels, 1, 1),
            ];
            layers.push(Layer::Residual { body, shortcut: Shortcut::Identity });
            layers.push(Layer::Relu);
        }
        in_ch = st.out_channels;
    }
    let mid_in = FeatureShape::Image { c: 16, h: 32, w: 32 };
    let want = FeatureShape::Image { c: FEATURE_WIDTH, h: 4, w: 4 };
    let got = super::sequence_output(&layers, mid_in)?;
    if got != want {
        return Err(CoreError::Arch(format!("spearnet config ends at {got:?}, need 64 channels on a 4x4 grid")));
    }
    layers.push(Layer::AvgPool { k: 4 });
    layers.push(Layer::Flatten);
    let arch = BundleArch {
        name: "spearnet".into(),
        base: stem(),
        mid: ArchSpec { name: "mid".into(), input: mid_in, layers },
        re: common_readout(),
        hc: None,
    };
    ModelBundle::new(arch, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadKind {
    A1,
    A2,
    A3,
    A4,
}

impl FromStr for HeadKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A1" => Ok(Self::A1),
            "A2" => Ok(Self::A2),
            "A3" => Ok(Self::A3),
            "A4" => Ok(Self::A4),
            _ => Err(CoreError::Arch(format!("unknown classifier variant {s:?} (expected A1..A4)"))),
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierVariant {
    pub kind: HeadKind,
    pub enlarged: bool,
    /// Hidden widths of an enlarged group.
    pub enlarged_hidden: (usize, usize),
    /// Hidden width of a regular group.
    pub hidden: usize,
}

impl ClassifierVariant {
    pub fn new(kind: HeadKind) -> Self {
        Self { kind, enlarged: false, enlarged_hidden: (10240, 64), hidden: 64 }
    }

    pub fn enlarged(kind: HeadKind) -> Self {
        Self { enlarged: true, ..Self::new(kind) }
    }
}

/// Classification head consuming the unpooled 64×4×4 student feature.
pub fn build_classifier(v: &ClassifierVariant) -> Result<ArchSpec> {
    let input = FeatureShape::Image { c: FEATURE_WIDTH, h: 4, w: 4 };
    let flat = input.numel();
    let layers = match v.kind {
        HeadKind::A4 => {
            if v.enlarged {
                return Err(CoreError::Arch("A4 has no parallel groups to enlarge".into()));
            }
            vec![
                Layer::AvgPool { k: 4 },
                Layer::Flatten,
                Layer::Linear { name: "hc.fc".into(), inputs: FEATURE_WIDTH, outputs: HEAD_OUTPUTS },
                Layer::Normalize { op: Activation::L1Normalize },
                Layer::Normalize { op: Activation::Softmax },
            ]
        }
        kind => {
            let widths: Vec<usize> = if v.enlarged {
                vec![flat, v.enlarged_hidden.0, v.enlarged_hidden.1, 1]
            } else {
                vec![flat, v.hidden, 1]
            };
            if widths.contains(&0) {
                return Err(CoreError::Arch("classifier hidden width is zero".into()));
            }
            let branches = (0..HEAD_OUTPUTS)
                .map(|gi| {
                    let mut b = Vec::new();
                    for (li, pair) in widths.windows(2).enumerate() {
                        if li > 0 {
                            b.push(Layer::Relu);
                        }
                        b.push(Layer::Linear {
                            name: format!("hc.g{gi}.fc{}", li + 1),
                            inputs: pair[0],
                            outputs: pair[1],
                        });
                    }
                    b
                })
                .collect();
            let norm = match kind {
                HeadKind::A1 => Activation::L1Normalize,
                HeadKind::A2 => Activation::L2Normalize,
                _ => Activation::Softmax,
            };
            vec![
                Layer::Flatten,
                Layer::Parallel { branches },
                Layer::Normalize { op: norm },
                Layer::Normalize { op: Activation::Softmax },
            ]
        }
    };
    let name = format!("{}{}", v.kind, if v.enlarged { "-enlarged" } else { "" });
    let spec = ArchSpec { name, input, layers };
    spec.validate()?;
    Ok(spec)
}
