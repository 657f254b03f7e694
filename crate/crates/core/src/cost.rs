//! Static multiplication and parameter counting over architecture specs.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::{layer_output, ArchSpec, BundleArch, FeatureShape, Layer, Shortcut};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub id: String,
    pub macs: u64,
    pub params: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub total_macs: u64,
    pub total_params: u64,
    pub per_layer: Vec<LayerCost>,
}

impl CostReport {
    fn push(&mut self, id: String, macs: u64, params: u64) {
        self.total_macs += macs;
        self.total_params += params;
        self.per_layer.push(LayerCost { id, macs, params });
    }

    /// Concatenates reports of consecutive sections.
    pub fn merge(mut self, other: CostReport) -> Self {
        self.total_macs += other.total_macs;
        self.total_params += other.total_params;
        self.per_layer.extend(other.per_layer);
        self
    }
}

fn conv_cost(
    r: &mut CostReport,
    id: &str,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    bn: bool,
    out: FeatureShape,
) {
    let FeatureShape::Image { h, w, .. } = out else { unreachable!("conv output is an image") };
    let macs = (in_ch * out_ch * k * k * h * w) as u64;
    let weights = (in_ch * out_ch * k * k) as u64;
    if bn {
        r.push(id.to_string(), macs, weights);
        r.push(format!("{id}.bn"), 0, 2 * out_ch as u64);
    } else {
        r.push(id.to_string(), macs, weights + out_ch as u64);
    }
}

fn walk(layers: &[Layer], mut shape: FeatureShape, r: &mut CostReport) -> Result<FeatureShape> {
    for layer in layers {
        let out = layer_output(layer, shape)?;
        match layer {
            Layer::Conv { name, in_ch, out_ch, kernel, bn, .. } => conv_cost(r, name, *in_ch, *out_ch, *kernel, *bn, out),
            Layer::Linear { name, inputs, outputs } => {
                r.push(name.clone(), (inputs * outputs) as u64, (inputs * outputs + outputs) as u64)
            }
            Layer::Residual { body, shortcut } => {
                walk(body, shape, r)?;
                if let Shortcut::Projection { name, in_ch, out_ch, .. } = shortcut {
                    conv_cost(r, name, *in_ch, *out_ch, 1, true, out);
                }
            }
            Layer::Parallel { branches } => {
                for b in branches {
                    walk(b, shape, r)?;
                }
            }
            Layer::Relu | Layer::AvgPool { .. } | Layer::Flatten | Layer::Normalize { .. } => {}
        }
        shape = out;
    }
    Ok(shape)
}

/// Multiplications for one prediction of `input` shape plus the parameter
/// count. Batch norm is assumed folded at inference, so it costs no
/// multiplications but its affine parameters are counted.
pub fn count_macs(arch: &ArchSpec, input: FeatureShape) -> Result<CostReport> {
    let mut r = CostReport::default();
    walk(&arch.layers, input, &mut r).map_err(|e| match e {
        CoreError::Arch(m) => CoreError::Arch(format!("{}: {m}", arch.name)),
        other => other,
    })?;
    Ok(r)
}

pub fn count_params(arch: &ArchSpec) -> Result<CostReport> {
    count_macs(arch, arch.input)
}

/// Cost of a whole network up to and including `hc` or `re`.
pub fn count_bundle(arch: &BundleArch, with_head: bool) -> Result<CostReport> {
    let base = count_params(&arch.base)?;
    if with_head {
        let hc = arch.hc.as_ref().ok_or(CoreError::MissingStage("hc"))?;
        let unpooled = ArchSpec {
            name: arch.mid.name.clone(),
            input: arch.mid.input,
            layers: arch.mid_unpooled_layers()?.to_vec(),
        };
        Ok(base.merge(count_params(&unpooled)?).merge(count_params(hc)?))
    } else {
        Ok(base.merge(count_params(&arch.mid)?).merge(count_params(&arch.re)?))
    }
}

/// `a.total_macs / b.total_macs` rounded to two decimals.
pub fn compare(a: &CostReport, b: &CostReport) -> Result<f64> {
    if b.total_macs == 0 {
        return Err(CoreError::ZeroDenominator("compare"));
    }
    let ratio = a.total_macs as f64 / b.total_macs as f64;
    Ok((ratio * 100.0).round() / 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(name: &str, i: usize, o: usize) -> Layer {
        Layer::Linear { name: name.into(), inputs: i, outputs: o }
    }

    #[test]
    fn linear_costs() {
        let spec = ArchSpec { name: "l".into(), input: FeatureShape::Vector { n: 64 }, layers: vec![linear("fc", 64, 10)] };
        let r = count_params(&spec).unwrap();
        assert_eq!((r.total_macs, r.total_params), (640, 650));
        let spec = ArchSpec { name: "l".into(), input: FeatureShape::Vector { n: 1024 }, layers: vec![linear("fc", 1024, 64)] };
        assert_eq!(count_params(&spec).unwrap().total_params, 65_600);
    }

    #[test]
    fn stem_macs() {
        let spec = ArchSpec {
            name: "s".into(),
            input: FeatureShape::Image { c: 3, h: 32, w: 32 },
            layers: vec![Layer::Conv { name: "c".into(), in_ch: 3, out_ch: 16, kernel: 3, stride: 1, padding: 1, bn: true }],
        };
        let r = count_params(&spec).unwrap();
        assert_eq!(r.total_macs, 442_368);
        assert_eq!(r.total_params, 432 + 32);
    }

    #[test]
    fn compare_ratios() {
        let a = CostReport { total_macs: 41_000_000, ..Default::default() };
        let b = CostReport { total_macs: 7_000_000, ..Default::default() };
        assert_eq!(compare(&a, &a).unwrap(), 1.0);
        assert_eq!(compare(&a, &b).unwrap(), 5.86);
        assert!(compare(&a, &CostReport::default()).is_err());
    }
}
