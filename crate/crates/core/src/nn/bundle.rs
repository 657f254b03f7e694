use serde::{Deserialize, Serialize};

use super::{run_layers, ArchSpec, FeatureShape, Layer};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::ops::Mode;
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Cut points at which a bundle can be read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cut {
    Base,
    MidPooled,
    /// Middle section without its trailing pool, flattened.
    MidUnpooled,
    Re,
    Hc,
}

/// The four sections of a network: shared stem, middle feature extractor
/// (trailing pool included), common-domain readout and optional target head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleArch {
    pub name: String,
    pub base: ArchSpec,
    pub mid: ArchSpec,
    pub re: ArchSpec,
    pub hc: Option<ArchSpec>,
}

impl BundleArch {
    fn pool_index(&self) -> Result<usize> {
        self.mid
            .layers
            .iter()
            .rposition(|l| matches!(l, Layer::AvgPool { .. }))
            .ok_or_else(|| CoreError::Arch(format!("{}: middle section has no trailing pool", self.name)))
    }

    pub fn mid_unpooled_layers(&self) -> Result<&[Layer]> {
        Ok(&self.mid.layers[..self.pool_index()?])
    }

    /// Per-sample shape of the middle section before its pool.
    pub fn unpooled_shape(&self) -> Result<FeatureShape> {
        super::sequence_output(self.mid_unpooled_layers()?, self.mid.input)
    }

    pub fn validate(&self) -> Result<()> {
        let base_out = self.base.validate()?;
        if base_out != self.mid.input {
            return Err(CoreError::Arch(format!(
                "{}: base yields {base_out:?} but middle expects {:?}",
                self.name, self.mid.input
            )));
        }
        let pooled = self.mid.validate()?;
        if pooled != (FeatureShape::Vector { n: 64 }) {
            return Err(CoreError::Arch(format!("{}: pooled middle output is {pooled:?}, need 64", self.name)));
        }
        self.unpooled_shape()?;
        if self.re.input != pooled {
            return Err(CoreError::Arch(format!("{}: readout expects {:?}", self.name, self.re.input)));
        }
        self.re.validate()?;
        if let Some(hc) = &self.hc {
            self.check_head(hc)?;
        }
        Ok(())
    }

    fn check_head(&self, hc: &ArchSpec) -> Result<()> {
        let unpooled = self.unpooled_shape()?;
        if hc.input != unpooled {
            return Err(CoreError::Arch(format!(
                "head {} expects {:?} but the middle section yields {unpooled:?}",
                hc.name, hc.input
            )));
        }
        hc.validate()?;
        Ok(())
    }

    pub fn sections(&self) -> impl Iterator<Item = &ArchSpec> {
        [&self.base, &self.mid, &self.re].into_iter().chain(self.hc.as_ref())
    }

    pub fn declarations(&self) -> Vec<super::Decl> {
        self.sections().flat_map(|s| s.declarations()).collect()
    }

    /// Conv layers on the main path of base and middle sections.
    pub fn conv_layers(&self) -> usize {
        self.base.conv_layers() + self.mid.conv_layers()
    }
}

#[derive(Debug, Clone)]
pub struct ModelBundle<T> {
    pub arch: BundleArch,
    pub params: ParamStore<T>,
}

impl<T: Scalar> ModelBundle<T> {
    pub fn new(arch: BundleArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamStore::new();
        for s in arch.sections() {
            s.init_params(&mut params, seed);
        }
        Ok(Self { arch, params })
    }

    /// Replaces the target head (if any) with a freshly initialized `hc`.
    pub fn attach_head(&mut self, hc: ArchSpec, seed: u64) -> Result<()> {
        self.arch.check_head(&hc)?;
        self.params.remove_prefix("hc.");
        hc.init_params(&mut self.params, seed);
        self.arch.hc = Some(hc);
        Ok(())
    }

    pub fn detach_head(&mut self) {
        self.params.remove_prefix("hc.");
        self.arch.hc = None;
    }

    /// Records the network on `g` up to `cut`; `x` is a batch `[N, 3, 32, 32]`.
    pub fn forward_split(&mut self, g: &mut Graph<T>, x: Var, cut: Cut, mode: Mode) -> Result<Var> {
        let arch = &self.arch;
        let store = &mut self.params;
        if cut == Cut::Hc && arch.hc.is_none() {
            return Err(CoreError::MissingStage("hc"));
        }
        let b = run_layers(&arch.base.layers, g, store, x, mode)?;
        if cut == Cut::Base {
            return Ok(b);
        }
        let split = arch.pool_index()?;
        let unpooled = run_layers(&arch.mid.layers[..split], g, store, b, mode)?;
        match cut {
            Cut::MidUnpooled => g.flatten_batch(unpooled),
            Cut::Hc => run_layers(&arch.hc.as_ref().expect("checked").layers, g, store, unpooled, mode),
            Cut::MidPooled | Cut::Re => {
                let pooled = run_layers(&arch.mid.layers[split..], g, store, unpooled, mode)?;
                if cut == Cut::MidPooled {
                    Ok(pooled)
                } else {
                    run_layers(&arch.re.layers, g, store, pooled, mode)
                }
            }
            Cut::Base => unreachable!(),
        }
    }

    /// Inference-mode readout without keeping the graph.
    pub fn infer(&mut self, images: Tensor<T>, cut: Cut) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(images);
        let y = self.forward_split(&mut g, x, cut, Mode::Infer)?;
        Ok(g.value(y).clone())
    }
}
