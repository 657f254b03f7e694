//! Declarative network descriptions and the interpreter that runs them on a
//! [`Graph`].

mod build;
mod bundle;

pub use build::{
    build_classifier, build_resnet, build_resnet20, build_spearnet, ClassifierVariant, HeadKind, SpearConfig,
    SpearStage,
};
pub use bundle::{BundleArch, Cut, ModelBundle};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::ops::{Activation, Mode};
use crate::param::{he_uniform, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-sample feature shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureShape {
    Image { c: usize, h: usize, w: usize },
    Vector { n: usize },
}

impl FeatureShape {
    pub fn numel(&self) -> usize {
        match *self {
            Self::Image { c, h, w } => c * h * w,
            Self::Vector { n } => n,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Self::Image { c, h, w } => vec![c, h, w],
            Self::Vector { n } => vec![n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shortcut {
    Identity,
    /// 1×1 convolution (+ batch norm) matching the body's stride and width.
    Projection { name: String, in_ch: usize, out_ch: usize, stride: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    /// Convolution, followed by batch norm when `bn` (the conv then has no bias).
    Conv { name: String, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, bn: bool },
    Relu,
    AvgPool { k: usize },
    Flatten,
    Linear { name: String, inputs: usize, outputs: usize },
    /// `body(x) + shortcut(x)`.
    Residual { body: Vec<Layer>, shortcut: Shortcut },
    /// Runs every branch on the same input and concatenates the outputs.
    Parallel { branches: Vec<Vec<Layer>> },
    Normalize { op: Activation },
}

/// An ordered layer list with a declared per-sample input shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub input: FeatureShape,
    pub layers: Vec<Layer>,
}

fn arch_err(msg: String) -> CoreError {
    CoreError::Arch(msg)
}

/// Output shape of a single layer, or a composition error.
pub fn layer_output(layer: &Layer, input: FeatureShape) -> Result<FeatureShape> {
    use FeatureShape::*;
    match (layer, input) {
        (Layer::Conv { name, in_ch, out_ch, kernel, stride, padding, .. }, Image { c, h, w }) => {
            if *in_ch != c {
                return Err(arch_err(format!("{name}: expects {in_ch} channels, receives {c}")));
            }
            if *stride == 0 || h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                return Err(arch_err(format!("{name}: kernel {kernel} does not fit {h}x{w} (pad {padding})")));
            }
            Ok(Image {
                c: *out_ch,
                h: (h + 2 * padding - kernel) / stride + 1,
                w: (w + 2 * padding - kernel) / stride + 1,
            })
        }
        (Layer::Relu, s) => Ok(s),
        (Layer::AvgPool { k }, Image { c, h, w }) => {
            if *k == 0 || h % k != 0 || w % k != 0 {
                return Err(arch_err(format!("avg_pool {k}: {h}x{w} not divisible")));
            }
            Ok(Image { c, h: h / k, w: w / k })
        }
        (Layer::Flatten, s) => Ok(Vector { n: s.numel() }),
        (Layer::Linear { name, inputs, outputs }, Vector { n }) => {
            if *inputs != n {
                return Err(arch_err(format!("{name}: expects {inputs} inputs, receives {n}")));
            }
            Ok(Vector { n: *outputs })
        }
        (Layer::Residual { body, shortcut }, s) => {
            let out = sequence_output(body, s)?;
            let short = match shortcut {
                Shortcut::Identity => s,
                Shortcut::Projection { name, in_ch, out_ch, stride } => layer_output(
                    &Layer::Conv {
                        name: name.clone(),
                        in_ch: *in_ch,
                        out_ch: *out_ch,
                        kernel: 1,
                        stride: *stride,
                        padding: 0,
                        bn: true,
                    },
                    s,
                )?,
            };
            if out != short {
                return Err(arch_err(format!("residual body yields {out:?} but shortcut yields {short:?}")));
            }
            Ok(out)
        }
        (Layer::Parallel { branches }, s) => {
            if branches.is_empty() {
                return Err(arch_err("parallel layer without branches".into()));
            }
            let mut total = 0;
            for b in branches {
                match sequence_output(b, s)? {
                    Vector { n } => total += n,
                    other => return Err(arch_err(format!("parallel branch must end in a vector, got {other:?}"))),
                }
            }
            Ok(Vector { n: total })
        }
        (Layer::Normalize { .. }, Vector { n }) => Ok(Vector { n }),
        (layer, s) => Err(arch_err(format!("{} cannot consume {s:?}", layer_kind(layer)))),
    }
}

fn layer_kind(layer: &Layer) -> &'static str {
    match layer {
        Layer::Conv { .. } => "conv",
        Layer::Relu => "relu",
        Layer::AvgPool { .. } => "avg_pool",
        Layer::Flatten => "flatten",
        Layer::Linear { .. } => "linear",
        Layer::Residual { .. } => "residual",
        Layer::Parallel { .. } => "parallel",
        Layer::Normalize { .. } => "normalize",
    }
}

pub fn sequence_output(layers: &[Layer], input: FeatureShape) -> Result<FeatureShape> {
    layers.iter().try_fold(input, |s, l| layer_output(l, s))
}

impl ArchSpec {
    /// Shape-composition check; returns the output shape.
    pub fn validate(&self) -> Result<FeatureShape> {
        sequence_output(&self.layers, self.input).map_err(|e| match e {
            CoreError::Arch(m) => CoreError::Arch(format!("{}: {m}", self.name)),
            other => other,
        })
    }

    pub fn output(&self) -> Result<FeatureShape> {
        self.validate()
    }

    /// Convolutions on the main path. Shortcut projections are not counted,
    /// matching the usual depth convention for residual networks.
    pub fn conv_layers(&self) -> usize {
        fn count(layers: &[Layer]) -> usize {
            layers
                .iter()
                .map(|l| match l {
                    Layer::Conv { .. } => 1,
                    Layer::Residual { body, .. } => count(body),
                    Layer::Parallel { branches } => branches.iter().map(|b| count(b)).sum(),
                    _ => 0,
                })
                .sum()
        }
        count(&self.layers)
    }

    /// Parameters and buffers in creation order.
    pub fn declarations(&self) -> Vec<Decl> {
        let mut out = Vec::new();
        declare_layers(&self.layers, &mut out);
        out
    }

    /// Adds freshly initialized parameters and buffers for every layer.
    /// Weights are He-uniform, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`,
    /// drawn from a stream keyed by the parameter name; biases and batch-norm
    /// shifts start at zero and scales at one.
    pub fn init_params<T: Scalar>(&self, store: &mut ParamStore<T>, seed: u64) {
        for d in self.declarations() {
            let t = d.materialize(seed);
            if d.buffer {
                store.insert_buffer(d.name, t);
            } else {
                store.insert(d.name, t);
            }
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        run_layers(&self.layers, g, store, x, mode)
    }
}

/// How a declared tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// He-uniform with the given fan-in.
    HeUniform(usize),
    Zeros,
    Ones,
}

/// A parameter or buffer an architecture declares.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub buffer: bool,
}

fn decl(out: &mut Vec<Decl>, name: String, shape: Vec<usize>, init: Init, buffer: bool) {
    out.push(Decl { name, shape, init, buffer });
}

fn declare_conv(out: &mut Vec<Decl>, name: &str, in_ch: usize, out_ch: usize, k: usize, bn: bool) {
    decl(out, format!("{name}.weight"), vec![out_ch, in_ch, k, k], Init::HeUniform(in_ch * k * k), false);
    if bn {
        decl(out, format!("{name}.bn.gamma"), vec![out_ch], Init::Ones, false);
        decl(out, format!("{name}.bn.beta"), vec![out_ch], Init::Zeros, false);
        decl(out, format!("{name}.bn.running_mean"), vec![out_ch], Init::Zeros, true);
        decl(out, format!("{name}.bn.running_var"), vec![out_ch], Init::Ones, true);
    } else {
        decl(out, format!("{name}.bias"), vec![out_ch], Init::Zeros, false);
    }
}

fn declare_layers(layers: &[Layer], out: &mut Vec<Decl>) {
    for layer in layers {
        match layer {
            Layer::Conv { name, in_ch, out_ch, kernel, bn, .. } => declare_conv(out, name, *in_ch, *out_ch, *kernel, *bn),
            Layer::Linear { name, inputs, outputs } => {
                decl(out, format!("{name}.weight"), vec![*outputs, *inputs], Init::HeUniform(*inputs), false);
                decl(out, format!("{name}.bias"), vec![*outputs], Init::Zeros, false);
            }
            Layer::Residual { body, shortcut } => {
                declare_layers(body, out);
                if let Shortcut::Projection { name, in_ch, out_ch, .. } = shortcut {
                    declare_conv(out, name, *in_ch, *out_ch, 1, true);
                }
            }
            Layer::Parallel { branches } => {
                for b in branches {
                    declare_layers(b, out);
                }
            }
            Layer::Relu | Layer::AvgPool { .. } | Layer::Flatten | Layer::Normalize { .. } => {}
        }
    }
}

impl Decl {
    pub fn materialize<T: Scalar>(&self, seed: u64) -> Tensor<T> {
        match self.init {
            Init::HeUniform(fan_in) => he_uniform(&self.shape, fan_in, seed, &self.name),
            Init::Zeros => Tensor::zeros(self.shape.clone()),
            Init::Ones => Tensor::ones(self.shape.clone()),
        }
    }
}

fn bn_mode<T: Scalar>(store: &ParamStore<T>, prefix: &str, mode: Mode) -> Mode {
    if mode == Mode::Train && store.is_trainable(&format!("{prefix}.gamma")) {
        Mode::Train
    } else {
        Mode::Infer
    }
}

#[allow(clippy::too_many_arguments)]
fn run_conv<T: Scalar>(
    g: &mut Graph<T>,
    store: &mut ParamStore<T>,
    x: Var,
    name: &str,
    stride: usize,
    padding: usize,
    bn: bool,
    mode: Mode,
) -> Result<Var> {
    let w = g.param_by_name(store, &format!("{name}.weight"))?;
    if bn {
        let y = g.conv2d(x, w, None, stride, padding)?;
        let prefix = format!("{name}.bn");
        let m = bn_mode(store, &prefix, mode);
        g.batch_norm(y, store, &prefix, m)
    } else {
        let b = g.param_by_name(store, &format!("{name}.bias"))?;
        g.conv2d(x, w, Some(b), stride, padding)
    }
}

/// Runs `layers` on a batched input `[N, ...]`. Batch-norm layers whose
/// parameters are frozen always use running statistics.
pub fn run_layers<T: Scalar>(
    layers: &[Layer],
    g: &mut Graph<T>,
    store: &mut ParamStore<T>,
    mut x: Var,
    mode: Mode,
) -> Result<Var> {
    for layer in layers {
        x = match layer {
            Layer::Conv { name, stride, padding, bn, .. } => run_conv(g, store, x, name, *stride, *padding, *bn, mode)?,
            Layer::Relu => g.relu(x)?,
            Layer::AvgPool { k } => g.avg_pool(x, *k)?,
            Layer::Flatten => g.flatten_batch(x)?,
            Layer::Linear { name, .. } => {
                let w = g.param_by_name(store, &format!("{name}.weight"))?;
                let b = g.param_by_name(store, &format!("{name}.bias"))?;
                g.linear(x, w, b)?
            }
            Layer::Residual { body, shortcut } => {
                let out = run_layers(body, g, store, x, mode)?;
                let short = match shortcut {
                    Shortcut::Identity => x,
                    Shortcut::Projection { name, stride, .. } => run_conv(g, store, x, name, *stride, 0, true, mode)?,
                };
                g.add(out, short)?
            }
            Layer::Parallel { branches } => {
                let outs = branches
                    .iter()
                    .map(|b| run_layers(b, g, store, x, mode))
                    .collect::<Result<Vec<_>>>()?;
                g.concat(&outs)?
            }
            Layer::Normalize { op } => g.activation(x, *op)?,
        };
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_errors_name_the_layer() {
        let spec = ArchSpec {
            name: "toy".into(),
            input: FeatureShape::Image { c: 3, h: 8, w: 8 },
            layers: vec![
                Layer::Conv { name: "c1".into(), in_ch: 3, out_ch: 4, kernel: 3, stride: 1, padding: 1, bn: true },
                Layer::Conv { name: "c2".into(), in_ch: 5, out_ch: 4, kernel: 3, stride: 1, padding: 1, bn: true },
            ],
        };
        let msg = spec.validate().unwrap_err().to_string();
        assert!(msg.contains("c2") && msg.contains("toy"), "{msg}");
    }

    #[test]
    fn residual_shapes_must_agree() {
        let body = vec![Layer::Conv { name: "b".into(), in_ch: 4, out_ch: 8, kernel: 3, stride: 2, padding: 1, bn: true }];
        let input = FeatureShape::Image { c: 4, h: 8, w: 8 };
        let bad = Layer::Residual { body: body.clone(), shortcut: Shortcut::Identity };
        assert!(layer_output(&bad, input).is_err());
        let good = Layer::Residual {
            body,
            shortcut: Shortcut::Projection { name: "p".into(), in_ch: 4, out_ch: 8, stride: 2 },
        };
        assert_eq!(layer_output(&good, input).unwrap(), FeatureShape::Image { c: 8, h: 4, w: 4 });
    }
}
