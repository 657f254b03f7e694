//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every op in execution order, so the tape is already a
//! topological order and backward is a single reverse sweep. Parameter leaves
//! hold an `Arc` of the stored value; gradients are accumulated (`+=`) into
//! the [`ParamStore`] until it is explicitly zeroed.

use std::sync::Arc;

use crate::error::{shape_err, CoreError, Result};
use crate::ops::{self, Activation, Mode};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an op defined outside this crate: maps the output
/// gradient and the input values to one optional gradient per input.
pub type CustomBackward<T> = Box<dyn Fn(&Tensor<T>, &[&Tensor<T>]) -> Vec<Option<Tensor<T>>>>;

enum Op<T> {
    Input,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Linear { x: Var, w: Var, b: Var },
    AvgPool { x: Var, k: usize },
    Act { x: Var, kind: Activation },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, inv_std: Vec<T>, train: bool },
    Add { a: Var, b: Var },
    Reshape { x: Var },
    Concat { xs: Vec<Var> },
    Sum { x: Var },
    Custom { inputs: Vec<Var>, backward: CustomBackward<T> },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a loss with respect to every leaf on the tape.
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Arc::new(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// A leaf whose gradient is reported by [`Graph::gradients`].
    pub fn input_with_grad(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.nodes.push(Node { value: Arc::clone(&p.value), op: Op::Param(id), requires_grad: p.trainable });
        Var(self.nodes.len() - 1)
    }

    pub fn param_by_name(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let id = store.id(name)?;
        Ok(self.param(store, id))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let out = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::linear(self.value(x), self.value(w), self.value(b))?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let out = ops::avg_pool(self.value(x), k)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::AvgPool { x, k }, rg))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let out = ops::activation(self.value(x), kind)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Act { x, kind }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    /// Batch normalization. In [`Mode::Train`] the running statistics in
    /// `store` (buffers `{prefix}.running_mean` / `{prefix}.running_var`) are
    /// updated with momentum 0.1.
    pub fn batch_norm(&mut self, x: Var, store: &mut ParamStore<T>, prefix: &str, mode: Mode) -> Result<Var> {
        let gamma = self.param_by_name(store, &format!("{prefix}.gamma"))?;
        let beta = self.param_by_name(store, &format!("{prefix}.beta"))?;
        let mean_name = format!("{prefix}.running_mean");
        let var_name = format!("{prefix}.running_var");
        let missing = || CoreError::UnknownParam(format!("{prefix}.running_*"));
        let (out, stats) = ops::batch_norm_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            store.buffer(&mean_name).ok_or_else(missing)?,
            store.buffer(&var_name).ok_or_else(missing)?,
            mode,
        )?;
        let (mean, inv_std, train) = match stats {
            Some(stats) => {
                let (m, v) = (stats.mean.clone(), stats.inv_std.clone());
                let mut rm = store.buffer(&mean_name).cloned().ok_or_else(missing)?;
                let mut rv = store.buffer(&var_name).cloned().ok_or_else(missing)?;
                ops::update_running(&mut rm, &mut rv, &stats);
                *store.buffer_mut(&mean_name).expect("checked") = rm;
                *store.buffer_mut(&var_name).expect("checked") = rv;
                (m, v, true)
            }
            None => {
                let rv = store.buffer(&var_name).expect("checked");
                let inv = rv.data().iter().map(|&v| T::one() / (v + T::from_f64_lossy(ops::BN_EPS)).sqrt()).collect();
                (store.buffer(&mean_name).expect("checked").data().to_vec(), inv, false)
            }
        };
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(out, Op::BatchNorm { x, gamma, beta, mean, inv_std, train }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Reshape { x }, rg))
    }

    /// Flattens everything after the batch axis: `[N, ...] -> [N, prod(...)]`.
    pub fn flatten_batch(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let n = shape[0];
        self.reshape(x, [n, shape[1..].iter().product()])
    }

    /// Concatenates along the last axis. All inputs share the leading shape.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
        let lead = {
            let s = self.value(*first).shape();
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.value(v).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(shape_err("concat", format!("leading dims {:?} vs {:?}", &s[..s.len() - 1], lead)));
            }
            widths.push(*s.last().expect("rank >= 1"));
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(v).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(shape, data)?;
        let rg = self.any_grad(xs);
        Ok(self.push(out, Op::Concat { xs: xs.to_vec() }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Sum { x }, rg)
    }

    /// Records an externally defined op. `value` must already be computed
    /// from the inputs' values.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: CustomBackward<T>) -> Result<Var> {
        let value = value.check_finite("custom op")?;
        let rg = self.any_grad(inputs);
        Ok(self.push(value, Op::Custom { inputs: inputs.to_vec(), backward }, rg))
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are added into
    /// `store`; gradients of leaves created with [`Graph::input_with_grad`]
    /// are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.leaves) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.accumulate_grad(*id, g)?;
            }
        }
        Ok(grads)
    }

    /// Like [`Graph::backward`] but leaves the parameter store untouched.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(CoreError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape().to_vec()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Input | Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let send = |v: Var, d: Tensor<T>, grads: &mut Vec<Option<Tensor<T>>>| -> Result<()> {
                if !self.nodes[v.0].requires_grad {
                    return Ok(());
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot @ None => {
                        *slot = Some(d);
                        Ok(())
                    }
                }
            };
            let rg = |v: Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Input | Op::Param(_) => unreachable!(),
                Op::Conv2d { x, w, b, stride, pad } => {
                    let need = (rg(*x), rg(*w), b.is_some_and(rg));
                    let cg = ops::conv2d_backward(self.value(*x), self.value(*w), &g, *stride, *pad, need)?;
                    if let Some(d) = cg.input {
                        send(*x, d, &mut grads)?;
                    }
                    if let Some(d) = cg.weight {
                        send(*w, d, &mut grads)?;
                    }
                    if let (Some(b), Some(d)) = (b, cg.bias) {
                        send(*b, d, &mut grads)?;
                    }
                }
                Op::Linear { x, w, b } => {
                    let lg = ops::linear_backward(self.value(*x), self.value(*w), &g, (rg(*x), rg(*w), rg(*b)))?;
                    if let Some(d) = lg.input {
                        send(*x, d, &mut grads)?;
                    }
                    if let Some(d) = lg.weight {
                        send(*w, d, &mut grads)?;
                    }
                    if let Some(d) = lg.bias {
                        send(*b, d, &mut grads)?;
                    }
                }
                Op::AvgPool { x, k } => {
                    let d = ops::avg_pool_backward(self.value(*x).shape(), &g, *k);
                    send(*x, d, &mut grads)?;
                }
                Op::Act { x, kind } => {
                    let d = ops::activation_backward(self.value(*x), &node.value, &g, *kind);
                    send(*x, d, &mut grads)?;
                }
                Op::BatchNorm { x, gamma, beta, mean, inv_std, train } => {
                    let (dx, dg, db) =
                        ops::batch_norm_backward(self.value(*x), self.value(*gamma), &g, mean, inv_std, *train);
                    send(*x, dx, &mut grads)?;
                    send(*gamma, dg, &mut grads)?;
                    send(*beta, db, &mut grads)?;
                }
                Op::Add { a, b } => {
                    send(*a, g.clone(), &mut grads)?;
                    send(*b, g, &mut grads)?;
                }
                Op::Reshape { x } => {
                    let d = g.reshape(self.value(*x).shape().to_vec())?;
                    send(*x, d, &mut grads)?;
                }
                Op::Concat { xs } => {
                    let total = *node.value.shape().last().expect("rank >= 1");
                    let rows = node.value.numel() / total;
                    let mut offset = 0;
                    for &v in xs {
                        let w = *self.value(v).shape().last().expect("rank >= 1");
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..][..w]);
                        }
                        offset += w;
                        send(v, Tensor::new(self.value(v).shape().to_vec(), d)?, &mut grads)?;
                    }
                }
                Op::Sum { x } => {
                    let d = Tensor::full(self.value(*x).shape().to_vec(), g.item());
                    send(*x, d, &mut grads)?;
                }
                Op::Custom { inputs, backward } => {
                    let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                    let ds = backward(&g, &vals);
                    for (&v, d) in inputs.iter().zip(ds) {
                        if let Some(d) = d {
                            if d.shape() != self.value(v).shape() {
                                return Err(shape_err(
                                    "custom backward",
                                    format!("gradient {:?} for input {:?}", d.shape(), self.value(v).shape()),
                                ));
                            }
                            send(v, d, &mut grads)?;
                        }
                    }
                }
            }
        }
        if grads.iter().flatten().any(|g| !g.all_finite()) {
            return Err(CoreError::NonFinite { op: "backward" });
        }
        Ok(Gradients { leaves: grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_weights_has_unit_gradient() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", Tensor::from_f64([3], &[1.0, -2.0, 0.5]).unwrap());
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let loss = g.sum(w);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut store = ParamStore::<f64>::new();
        let wid = store.insert("w", Tensor::from_f64([2, 2], &[0.3, -0.1, 0.2, 0.7]).unwrap());
        let bid = store.insert("b", Tensor::from_f64([2], &[0.0, 0.1]).unwrap());
        let mut g = Graph::new();
        let x = g.input(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
        let (w, b) = (g.param(&store, wid), g.param(&store, bid));
        let y = g.linear(x, w, b).unwrap();
        let y = g.activation(y, Activation::Softmax).unwrap();
        let loss = g.sum(y);
        g.backward(loss, &mut store).unwrap();
        let once = store.get(wid).grad.clone();
        g.backward(loss, &mut store).unwrap();
        let twice = store.get(wid).grad.clone();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = ParamStore::<f32>::new();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros([3]));
        assert!(matches!(g.backward(x, &mut store), Err(CoreError::NonScalarLoss(_))));
    }

    #[test]
    fn frozen_params_receive_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", Tensor::ones([2]));
        store.set_trainable("w", false);
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let loss = g.sum(w);
        assert!(!g.requires_grad(loss));
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &[0.0, 0.0]);
    }
}
