//! Tensors, reverse-mode autodiff, layer kernels, SGD, network descriptions,
//! checkpoints and static cost analysis.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the training pipeline (`f32`) and by
//! gradient checks (`f64`).

pub mod checkpoint;
pub mod cost;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod param;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{CoreError, Result};
pub use graph::{Gradients, Graph, Var};
pub use nn::{ArchSpec, BundleArch, Cut, ModelBundle};
pub use ops::{Activation, Mode};
pub use optim::{sgd_step, Preset, SgdConfig};
pub use param::{ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type ModelBundle32 = ModelBundle<f32>;
pub type ModelBundle64 = ModelBundle<f64>;
