//! Forward kernels and their vector-Jacobian products.
//!
//! Image-shaped ops accept either a single item (`[C,H,W]`) or a batch
//! (`[N,C,H,W]`); vector ops accept `[K]` or `[N,K]`. Outputs keep the
//! rank of the input.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::{matmul_into, Scalar};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softmax,
    L1Normalize,
    L2Normalize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

// ---------------------------------------------------------------------------
// convolution

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
    pub batched: bool,
}

impl ConvGeom {
    pub fn new<T: Scalar>(
        input: &Tensor<T>,
        weight: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (n, item) = input.batch_view(3).ok_or_else(|| {
            shape_err("conv2d", format!("input must be [C,H,W] or [N,C,H,W], got {:?}", input.shape()))
        })?;
        let &[c_in, h, w] = item else { unreachable!() };
        let &[c_out, wc_in, kh, kw] = weight.shape() else {
            return Err(shape_err(
                "conv2d",
                format!("weight must be [C_out,C_in,Kh,Kw], got {:?}", weight.shape()),
            ));
        };
        if wc_in != c_in {
            return Err(shape_err(
                "conv2d",
                format!("input channels {c_in} do not match weight C_in {wc_in}"),
            ));
        }
        if stride == 0 {
            return Err(shape_err("conv2d", "stride must be positive"));
        }
        let out_dim = |len: usize, k: usize, axis: &str| -> Result<usize> {
            let padded = len + 2 * pad;
            if padded < k {
                return Err(shape_err(
                    "conv2d",
                    format!("kernel {axis} {k} exceeds padded input {axis} {padded}"),
                ));
            }
            Ok((padded - k) / stride + 1)
        };
        let ho = out_dim(h, kh, "height")?;
        let wo = out_dim(w, kw, "width")?;
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
            batched: input.ndim() == 4,
        })
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }

    pub fn out_shape(&self) -> Vec<usize> {
        if self.batched {
            vec![self.n, self.c_out, self.ho, self.wo]
        } else {
            vec![self.c_out, self.ho, self.wo]
        }
    }
}

/// Unfold into a `[C_in*Kh*Kw, N*Ho*Wo]` matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let plane = g.ho * g.wo;
    let ncols = g.cols();
    let mut cols = vec![T::zero(); g.patch() * ncols];
    for ci in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for img in 0..g.n {
                    let src = &x[(img * g.c_in + ci) * g.h * g.w..][..g.h * g.w];
                    let dst = &mut dst_row[img * plane..(img + 1) * plane];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..][..g.w];
                        let dst_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let plane = g.ho * g.wo;
    let ncols = g.cols();
    for ci in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for img in 0..g.n {
                    let dst = &mut dx[(img * g.c_in + ci) * g.h * g.w..][..g.h * g.w];
                    let src = &src_row[img * plane..(img + 1) * plane];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.w..][..g.w];
                        for (ox, &s) in src[oy * g.wo..(oy + 1) * g.wo].iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input, weight, stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [g.c_out] {
            return Err(shape_err(
                "conv2d",
                format!("bias must be [{}], got {:?}", g.c_out, b.shape()),
            ));
        }
    }
    let cols = im2col(input.data(), &g);
    let ncols = g.cols();
    let mut mat = vec![T::zero(); g.c_out * ncols];
    matmul_into(weight.data(), &cols, &mut mat, g.c_out, g.patch(), ncols, false, false, false);

    let plane = g.ho * g.wo;
    let mut out = vec![T::zero(); g.n * g.c_out * plane];
    for co in 0..g.c_out {
        let b = bias.map_or(T::zero(), |b| b.data()[co]);
        for img in 0..g.n {
            let src = &mat[co * ncols + img * plane..][..plane];
            let dst = &mut out[(img * g.c_out + co) * plane..][..plane];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + b;
            }
        }
    }
    Tensor::new(g.out_shape(), out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
    need: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::new(input, weight, stride, padding)?;
    let plane = g.ho * g.wo;
    let ncols = g.cols();
    let mut dmat = vec![T::zero(); g.c_out * ncols];
    for co in 0..g.c_out {
        for img in 0..g.n {
            dmat[co * ncols + img * plane..][..plane]
                .copy_from_slice(&grad_out.data()[(img * g.c_out + co) * plane..][..plane]);
        }
    }

    let weight_grad = if need.1 {
        let cols = im2col(input.data(), &g);
        let mut dw = vec![T::zero(); g.c_out * g.patch()];
        matmul_into(&dmat, &cols, &mut dw, g.c_out, ncols, g.patch(), false, true, false);
        Some(Tensor::new(weight.shape().to_vec(), dw)?)
    } else {
        None
    };

    let bias_grad = if need.2 {
        let db = (0..g.c_out).map(|co| dmat[co * ncols..(co + 1) * ncols].iter().copied().sum()).collect();
        Some(Tensor::new([g.c_out], db)?)
    } else {
        None
    };

    let input_grad = if need.0 {
        let mut dcols = vec![T::zero(); g.patch() * ncols];
        matmul_into(weight.data(), &dmat, &mut dcols, g.patch(), g.c_out, ncols, true, false, false);
        let mut dx = vec![T::zero(); input.numel()];
        col2im(&dcols, &g, &mut dx);
        Some(Tensor::new(input.shape().to_vec(), dx)?)
    } else {
        None
    };

    Ok(ConvGrads { input: input_grad, weight: weight_grad, bias: bias_grad })
}

// ---------------------------------------------------------------------------
// fully connected

fn linear_dims<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let &[n_out, n_in] = weight.shape() else {
        return Err(shape_err("linear", format!("weight must be [n_out,n_in], got {:?}", weight.shape())));
    };
    let (rows, item) = input
        .batch_view(1)
        .ok_or_else(|| shape_err("linear", format!("input must be [n_in] or [N,n_in], got {:?}", input.shape())))?;
    if item[0] != n_in {
        return Err(shape_err("linear", format!("input length {} does not match n_in {n_in}", item[0])));
    }
    Ok((rows, n_in, n_out))
}

/// Affine map `weight · input + bias`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, n_in, n_out) = linear_dims(input, weight)?;
    if bias.shape() != [n_out] {
        return Err(shape_err("linear", format!("bias must be [{n_out}], got {:?}", bias.shape())));
    }
    let mut out = Vec::with_capacity(rows * n_out);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    matmul_into(input.data(), weight.data(), &mut out, rows, n_in, n_out, false, true, true);
    let shape = if input.ndim() == 2 { vec![rows, n_out] } else { vec![n_out] };
    Tensor::new(shape, out)
}

pub(crate) fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let (rows, n_in, n_out) = linear_dims(input, weight)?;
    let dy = grad_out.data();
    let input_grad = if need.0 {
        let mut dx = vec![T::zero(); rows * n_in];
        matmul_into(dy, weight.data(), &mut dx, rows, n_out, n_in, false, false, false);
        Some(Tensor::new(input.shape().to_vec(), dx)?)
    } else {
        None
    };
    let weight_grad = if need.1 {
        let mut dw = vec![T::zero(); n_out * n_in];
        matmul_into(dy, input.data(), &mut dw, n_out, rows, n_in, true, false, false);
        Some(Tensor::new([n_out, n_in], dw)?)
    } else {
        None
    };
    let bias_grad = if need.2 {
        let mut db = vec![T::zero(); n_out];
        for r in 0..rows {
            for (d, &g) in db.iter_mut().zip(&dy[r * n_out..(r + 1) * n_out]) {
                *d += g;
            }
        }
        Some(Tensor::new([n_out], db)?)
    } else {
        None
    };
    Ok(ConvGrads { input: input_grad, weight: weight_grad, bias: bias_grad })
}

// ---------------------------------------------------------------------------
// pooling

fn pool_dims<T: Scalar>(input: &Tensor<T>, k: usize) -> Result<(usize, usize, usize, usize)> {
    let (n, item) = input
        .batch_view(3)
        .ok_or_else(|| shape_err("avg_pool", format!("input must be [C,H,W] or [N,C,H,W], got {:?}", input.shape())))?;
    let &[c, h, w] = item else { unreachable!() };
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(shape_err("avg_pool", format!("spatial dims {h}x{w} not divisible by k={k}")));
    }
    Ok((n * c, h, w, k))
}

/// Non-overlapping `k×k` mean pooling.
pub fn avg_pool<T: Scalar>(input: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (planes, h, w, k) = pool_dims(input, k)?;
    let (oh, ow) = (h / k, w / k);
    let inv = T::one() / T::from_f64_lossy((k * k) as f64);
    let mut out = vec![T::zero(); planes * oh * ow];
    let x = input.data();
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..h {
            for xx in 0..w {
                dst[(y / k) * ow + xx / k] += src[y * w + xx];
            }
        }
        for d in dst.iter_mut() {
            *d *= inv;
        }
    }
    let mut shape = input.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Tensor::new(shape, out)
}

pub(crate) fn avg_pool_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>, k: usize) -> Tensor<T> {
    let r = input_shape.len();
    let (h, w) = (input_shape[r - 2], input_shape[r - 1]);
    let planes: usize = input_shape[..r - 2].iter().product();
    let (oh, ow) = (h / k, w / k);
    let inv = T::one() / T::from_f64_lossy((k * k) as f64);
    let dy = grad_out.data();
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for y in 0..h {
            for xx in 0..w {
                dx[p * h * w + y * w + xx] = dy[p * oh * ow + (y / k) * ow + xx / k] * inv;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx).expect("pool grad shape")
}

// ---------------------------------------------------------------------------
// activations

fn row_len<T: Scalar>(input: &Tensor<T>) -> usize {
    *input.shape().last().expect("tensors have rank >= 1")
}

/// Elementwise ReLU, or a row-wise (last axis) softmax / L1 / L2 normalization.
///
/// An all-zero row passed to L1/L2 normalization yields the zero row.
pub fn activation<T: Scalar>(input: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    let out = match kind {
        Activation::Relu => input.map(|v| if v > T::zero() { v } else { T::zero() }),
        _ => {
            let k = row_len(input);
            let mut out = input.clone();
            for row in out.data_mut().chunks_mut(k) {
                match kind {
                    Activation::Softmax => {
                        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                        let mut s = T::zero();
                        for v in row.iter_mut() {
                            *v = (*v - max).exp();
                            s += *v;
                        }
                        for v in row.iter_mut() {
                            *v /= s;
                        }
                    }
                    Activation::L1Normalize | Activation::L2Normalize => {
                        let norm = norm_of(row, kind);
                        if norm > T::zero() {
                            for v in row.iter_mut() {
                                *v /= norm;
                            }
                        }
                    }
                    Activation::Relu => unreachable!(),
                }
            }
            out
        }
    };
    out.check_finite("activation")
}

fn norm_of<T: Scalar>(row: &[T], kind: Activation) -> T {
    match kind {
        Activation::L1Normalize => row.iter().map(|v| v.abs()).sum(),
        _ => row.iter().map(|&v| v * v).sum::<T>().sqrt(),
    }
}

pub(crate) fn activation_backward<T: Scalar>(
    input: &Tensor<T>,
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
    kind: Activation,
) -> Tensor<T> {
    let mut dx = grad_out.clone();
    match kind {
        Activation::Relu => {
            for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
                if x <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        Activation::Softmax => {
            let k = row_len(input);
            for (d, y) in dx.data_mut().chunks_mut(k).zip(output.data().chunks(k)) {
                let dot: T = d.iter().zip(y).map(|(&g, &p)| g * p).sum();
                for (g, &p) in d.iter_mut().zip(y) {
                    *g = p * (*g - dot);
                }
            }
        }
        Activation::L1Normalize | Activation::L2Normalize => {
            let k = row_len(input);
            for ((d, x), y) in dx.data_mut().chunks_mut(k).zip(input.data().chunks(k)).zip(output.data().chunks(k)) {
                let norm = norm_of(x, kind);
                if norm <= T::zero() {
                    // zero row maps to zero row; treat the map as identity-scaled by 0
                    d.iter_mut().for_each(|g| *g = T::zero());
                    continue;
                }
                let dot: T = d.iter().zip(y).map(|(&g, &v)| g * v).sum();
                for ((g, &xi), &yi) in d.iter_mut().zip(x).zip(y) {
                    *g = match kind {
                        // d(x/|x|_1) = (g - sign(x) <g,y>) / |x|_1
                        Activation::L1Normalize => (*g - xi.signum() * dot) / norm,
                        // d(x/|x|_2) = (g - y <g,y>) / |x|_2
                        _ => (*g - yi * dot) / norm,
                    };
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// batch normalization

/// Per-channel affine parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones([channels]),
            beta: Tensor::zeros([channels]),
            running_mean: Tensor::zeros([channels]),
            running_var: Tensor::ones([channels]),
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (out, stats) = batch_norm_forward(
            input,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            mode,
        )?;
        if let Some(stats) = stats {
            update_running(&mut self.running_mean, &mut self.running_var, &stats);
        }
        Ok(out)
    }
}

/// Batch statistics saved by a training-mode forward pass.
#[derive(Debug, Clone)]
pub(crate) struct BnBatchStats<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    pub unbiased_var: Vec<T>,
}

fn bn_dims<T: Scalar>(input: &Tensor<T>, channels: usize) -> Result<(usize, usize)> {
    let (n, item) = input
        .batch_view(3)
        .ok_or_else(|| shape_err("batch_norm", format!("input must be [C,H,W] or [N,C,H,W], got {:?}", input.shape())))?;
    if item[0] != channels {
        return Err(shape_err("batch_norm", format!("input has {} channels, state has {channels}", item[0])));
    }
    Ok((n, item[1] * item[2]))
}

pub(crate) fn batch_norm_forward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Option<BnBatchStats<T>>)> {
    let c = gamma.numel();
    let (n, plane) = bn_dims(input, c)?;
    let x = input.data();
    let eps = T::from_f64_lossy(BN_EPS);
    let (mean, inv_std, stats) = match mode {
        Mode::Infer => {
            let inv: Vec<T> = running_var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            (running_mean.data().to_vec(), inv, None)
        }
        Mode::Train => {
            let m = (n * plane) as f64;
            let mut mean = Vec::with_capacity(c);
            let mut inv = Vec::with_capacity(c);
            let mut unbiased = Vec::with_capacity(c);
            for ch in 0..c {
                let mut s = 0.0f64;
                for img in 0..n {
                    s += x[(img * c + ch) * plane..][..plane].iter().map(|v| v.to_f64_lossy()).sum::<f64>();
                }
                let mu = s / m;
                let mut ss = 0.0f64;
                for img in 0..n {
                    ss += x[(img * c + ch) * plane..][..plane]
                        .iter()
                        .map(|v| {
                            let d = v.to_f64_lossy() - mu;
                            d * d
                        })
                        .sum::<f64>();
                }
                let var = ss / m;
                mean.push(T::from_f64_lossy(mu));
                inv.push(T::from_f64_lossy(1.0 / (var + BN_EPS).sqrt()));
                unbiased.push(T::from_f64_lossy(if m > 1.0 { ss / (m - 1.0) } else { var }));
            }
            let stats = BnBatchStats { mean: mean.clone(), inv_std: inv.clone(), unbiased_var: unbiased };
            (mean, inv, Some(stats))
        }
    };
    let mut out = vec![T::zero(); x.len()];
    for img in 0..n {
        for ch in 0..c {
            let scale = gamma.data()[ch] * inv_std[ch];
            let shift = beta.data()[ch] - mean[ch] * scale;
            let off = (img * c + ch) * plane;
            for (o, &v) in out[off..off + plane].iter_mut().zip(&x[off..off + plane]) {
                *o = v * scale + shift;
            }
        }
    }
    Ok((Tensor::new(input.shape().to_vec(), out)?, stats))
}

pub(crate) fn update_running<T: Scalar>(mean: &mut Tensor<T>, var: &mut Tensor<T>, stats: &BnBatchStats<T>) {
    let mom = T::from_f64_lossy(BN_MOMENTUM);
    let keep = T::one() - mom;
    for (r, &b) in mean.data_mut().iter_mut().zip(&stats.mean) {
        *r = keep * *r + mom * b;
    }
    for (r, &b) in var.data_mut().iter_mut().zip(&stats.unbiased_var) {
        *r = keep * *r + mom * b;
    }
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub(crate) fn batch_norm_backward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    train: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = gamma.numel();
    let (n, plane) = bn_dims(input, c).expect("validated in forward");
    let x = input.data();
    let dy = grad_out.data();
    let m = (n * plane) as f64;
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mu, inv) = (mean[ch].to_f64_lossy(), inv_std[ch].to_f64_lossy());
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for img in 0..n {
            let off = (img * c + ch) * plane;
            for i in off..off + plane {
                let g = dy[i].to_f64_lossy();
                sum_dy += g;
                sum_dy_xhat += g * (x[i].to_f64_lossy() - mu) * inv;
            }
        }
        dgamma[ch] = T::from_f64_lossy(sum_dy_xhat);
        dbeta[ch] = T::from_f64_lossy(sum_dy);
        let gm = gamma.data()[ch].to_f64_lossy();
        for img in 0..n {
            let off = (img * c + ch) * plane;
            for i in off..off + plane {
                let g = dy[i].to_f64_lossy();
                let v = if train {
                    let xhat = (x[i].to_f64_lossy() - mu) * inv;
                    gm * inv * (g - sum_dy / m - xhat * sum_dy_xhat / m)
                } else {
                    gm * inv * g
                };
                dx[i] = T::from_f64_lossy(v);
            }
        }
    }
    (
        Tensor::new(input.shape().to_vec(), dx).expect("bn grad"),
        Tensor::new([c], dgamma).expect("bn grad"),
        Tensor::new([c], dbeta).expect("bn grad"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn conv_scalar_kernel_scales() {
        let x = Tensor::<f32>::ones([1, 2, 2]);
        let w = Tensor::<f32>::full([1, 1, 1, 1], 2.0);
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), [1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv_stem_shape() {
        let x = Tensor::<f32>::zeros([3, 32, 32]);
        let w = Tensor::<f32>::zeros([16, 3, 3, 3]);
        assert_eq!(conv2d(&x, &w, None, 1, 1).unwrap().shape(), [16, 32, 32]);
        let xb = Tensor::<f32>::zeros([5, 3, 32, 32]);
        assert_eq!(conv2d(&xb, &w, None, 2, 1).unwrap().shape(), [5, 16, 16, 16]);
    }

    #[test]
    fn conv_reports_offending_dimension() {
        let x = Tensor::<f32>::zeros([4, 8, 8]);
        let w = Tensor::<f32>::zeros([2, 3, 3, 3]);
        let msg = conv2d(&x, &w, None, 1, 1).unwrap_err().to_string();
        assert!(msg.contains("channels"), "{msg}");
        let w = Tensor::<f32>::zeros([2, 4, 11, 3]);
        let msg = conv2d(&x, &w, None, 1, 1).unwrap_err().to_string();
        assert!(msg.contains("height"), "{msg}");
    }

    #[test]
    fn linear_hand_example() {
        let y = linear(&t(&[2], &[1.0, 2.0]), &t(&[2, 2], &[1.0, 1.0, 0.0, 1.0]), &t(&[2], &[0.0, 1.0])).unwrap();
        assert_eq!(y.data(), &[3.0, 3.0]);
        assert!(linear(&t(&[3], &[1.0; 3]), &t(&[2, 2], &[0.0; 4]), &t(&[2], &[0.0; 2])).is_err());
    }

    #[test]
    fn linear_identity_is_noop() {
        let x = t(&[3], &[0.5, -2.0, 7.0]);
        let eye = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(linear(&x, &eye, &Tensor::zeros([3])).unwrap(), x);
    }

    #[test]
    fn linear_accepts_flattened_spear_feature() {
        let x = Tensor::<f32>::zeros([64 * 4 * 4]);
        let y = linear(&x, &Tensor::zeros([64, 1024]), &Tensor::zeros([64])).unwrap();
        assert_eq!(y.shape(), [64]);
    }

    #[test]
    fn avg_pool_examples() {
        let y = avg_pool(&t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(y.data(), &[2.5]);
        let y = avg_pool(&Tensor::<f32>::full([64, 8, 8], 3.0), 8).unwrap();
        assert_eq!(y.shape(), [64, 1, 1]);
        assert!(y.data().iter().all(|&v| v == 3.0));
        assert!(avg_pool(&Tensor::<f32>::zeros([1, 6, 6]), 4).is_err());
    }

    #[test]
    fn activation_examples() {
        let s = activation(&t(&[2], &[0.0, 0.0]), Activation::Softmax).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let l1 = activation(&t(&[2], &[1.0, 3.0]), Activation::L1Normalize).unwrap();
        assert_eq!(l1.data(), &[0.25, 0.75]);
        let r = activation(&t(&[2], &[-1.0, 2.0]), Activation::Relu).unwrap();
        assert_eq!(r.data(), &[0.0, 2.0]);
        let z = activation(&t(&[3], &[0.0; 3]), Activation::L2Normalize).unwrap();
        assert_eq!(z.data(), &[0.0; 3]);
    }

    #[test]
    fn batch_norm_examples() {
        let mut bn = BatchNormState::<f64>::new(1);
        let x = t(&[1, 2, 2], &[0.3, -1.0, 2.0, 5.0]);
        let y = bn.forward(&x, Mode::Infer).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-4);

        let mut bn = BatchNormState::<f64>::new(2);
        bn.beta = t(&[2], &[0.7, -0.2]);
        let y = bn.forward(&Tensor::full([3, 2, 2, 2], 4.0), Mode::Train).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            let expect = if (i / 4) % 2 == 0 { 0.7 } else { -0.2 };
            assert!((v - expect).abs() < 1e-9);
        }
        // running stats moved 10% toward the batch mean of 4
        assert!((bn.running_mean.data()[0] - 0.4).abs() < 1e-12);

        let mut bn = BatchNormState::<f64>::new(1);
        let y = bn.forward(&t(&[2, 1, 1, 1], &[1.0, 3.0]), Mode::Train).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-5 && (y.data()[1] - 1.0).abs() < 1e-5);
    }
}
