use std::sync::Arc;

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::rng::stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A trainable tensor with its gradient and optimizer state.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub value: Arc<Tensor<T>>,
    pub grad: Tensor<T>,
    /// Created by the first optimizer step.
    pub momentum_buffer: Option<Tensor<T>>,
    pub trainable: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self { value: Arc::new(value), grad, momentum_buffer: None, trainable: true }
    }

    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.value)
    }
}

/// Named parameters plus non-trainable buffers (batch-norm running stats).
/// Insertion order is preserved and is the serialization order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: IndexMap<String, Parameter<T>>,
    buffers: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: IndexMap::new(), buffers: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let (idx, _) = self.params.insert_full(name.into(), Parameter::new(value));
        ParamId(idx)
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.buffers.insert(name.into(), value);
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.params.get_index_of(name).map(ParamId).ok_or_else(|| CoreError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.params.get_index(id.0).map(|(k, _)| k.as_str()).expect("valid id")
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<T>> {
        self.buffers.get(name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.buffers.get_mut(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Parameter<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars (buffers excluded).
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor<T>) -> Result<()> {
        self.params[id.0].grad.add_assign(grad)
    }

    /// Sets the trainable flag on every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) -> usize {
        let mut n = 0;
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = trainable;
                n += 1;
            }
        }
        n
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.params.get(name).is_some_and(|p| p.trainable)
    }

    /// Copies values (not optimizer state) of every parameter and buffer under
    /// `prefix` from `other`. Shapes must agree.
    pub fn copy_from(&mut self, other: &ParamStore<T>, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (name, p) in self.params.iter_mut().filter(|(k, _)| k.starts_with(prefix)) {
            let src = other.params.get(name).ok_or_else(|| CoreError::UnknownParam(name.clone()))?;
            if src.value.shape() != p.value.shape() {
                return Err(CoreError::Shape {
                    op: "copy_from",
                    detail: format!("{name}: {:?} vs {:?}", src.value.shape(), p.value.shape()),
                });
            }
            p.value = Arc::clone(&src.value);
            n += 1;
        }
        for (name, b) in self.buffers.iter_mut().filter(|(k, _)| k.starts_with(prefix)) {
            let src = other.buffers.get(name).ok_or_else(|| CoreError::UnknownParam(name.clone()))?;
            *b = src.clone();
        }
        Ok(n)
    }

    /// Drops every parameter and buffer under `prefix`.
    pub fn remove_prefix(&mut self, prefix: &str) {
        self.params.retain(|k, _| !k.starts_with(prefix));
        self.buffers.retain(|k, _| !k.starts_with(prefix));
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|p| p.value.all_finite()) && self.buffers.values().all(|b| b.all_finite())
    }
}

/// He-uniform: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, drawn from a stream keyed
/// by the parameter name so that initialization does not depend on build order.
pub fn he_uniform<T: Scalar>(shape: &[usize], fan_in: usize, seed: u64, name: &str) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut rng = stream(seed, name, 0, 0);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trainable_prefix_and_copy() {
        let mut a = ParamStore::<f32>::new();
        a.insert("base.conv.weight", Tensor::ones([2, 2]));
        a.insert("mid.fc.weight", Tensor::ones([3]));
        let mut b = ParamStore::<f32>::new();
        b.insert("base.conv.weight", Tensor::full([2, 2], 5.0));
        b.insert("mid.fc.weight", Tensor::full([3], 5.0));
        assert_eq!(a.copy_from(&b, "base.").unwrap(), 1);
        assert_eq!(a.param("base.conv.weight").unwrap().value.data(), &[5.0; 4]);
        assert_eq!(a.param("mid.fc.weight").unwrap().value.data(), &[1.0; 3]);
        assert_eq!(a.set_trainable("base.", false), 1);
        assert!(!a.is_trainable("base.conv.weight"));
        assert!(a.is_trainable("mid.fc.weight"));
    }

    #[test]
    fn init_is_name_keyed() {
        let x = he_uniform::<f32>(&[4, 4], 4, 1, "a");
        let y = he_uniform::<f32>(&[4, 4], 4, 1, "a");
        let z = he_uniform::<f32>(&[4, 4], 4, 1, "b");
        assert_eq!(x, y);
        assert_ne!(x, z);
        let bound = (6.0f32 / 4.0).sqrt();
        assert!(x.data().iter().all(|v| v.abs() <= bound));
    }
}
