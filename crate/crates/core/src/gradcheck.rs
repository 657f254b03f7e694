//! Finite-difference gradient checking in double precision.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::ParamStore;
use crate::rng::stream;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on probed coordinates per tensor (all when smaller).
    pub max_coords: usize,
    /// Random directions probed over all parameters at once.
    pub directions: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-3, rtol: 1e-3, atol: 1e-6, max_coords: 64, directions: 3, seed: 7 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: Vec<String>,
    /// Probes skipped because the difference quotient changed between step
    /// `h` and `h / 2`, i.e. a ReLU kink lies within the probe interval.
    pub kinks: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` seen.
    pub max_rel_err: f64,
}

impl GradCheckReport {
    /// No mismatches and at most one probe in ten lost to kinks.
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures.is_empty() && self.kinks * 10 <= self.checked + self.kinks
    }

    fn record(&mut self, what: String, analytic: f64, numeric: [f64; 2], cfg: &GradCheckConfig) {
        let [numeric, half] = numeric;
        if (numeric - half).abs() > cfg.atol + cfg.rtol * numeric.abs().max(half.abs()) {
            self.kinks += 1;
            return;
        }
        self.checked += 1;
        let diff = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        if scale > 0.0 {
            self.max_rel_err = self.max_rel_err.max(diff / scale);
        }
        if diff > cfg.atol + cfg.rtol * scale {
            self.failures.push(format!("{what}: analytic {analytic:.6e} numeric {numeric:.6e}"));
        }
    }
}

fn probe_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|i| i * len / max).collect()
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences, for every input and every trainable parameter.
pub fn check<F>(inputs: &[Tensor<f64>], store: &mut ParamStore<f64>, cfg: &GradCheckConfig, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &[Var], &mut ParamStore<f64>) -> Result<Var>,
{
    store.zero_grad();
    let input_grads: Vec<Tensor<f64>> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.input_with_grad(x.clone())).collect();
        let loss = f(&mut g, &vars, store)?;
        let grads = g.backward(loss, store)?;
        vars.iter()
            .zip(inputs)
            .map(|(&v, x)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec())))
            .collect()
    };
    let param_grads: Vec<(String, Tensor<f64>)> = store
        .params()
        .filter(|(_, p)| p.trainable)
        .map(|(n, p)| (n.to_string(), p.grad.clone()))
        .collect();

    let mut eval = |xs: &[Tensor<f64>], store: &mut ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let loss = f(&mut g, &vars, store)?;
        Ok(g.value(loss).item())
    };

    let h = cfg.step;
    let mut report = GradCheckReport::default();
    let mut xs = inputs.to_vec();
    for (ti, grad) in input_grads.iter().enumerate() {
        for i in probe_indices(grad.numel(), cfg.max_coords) {
            let orig = xs[ti].data()[i];
            let mut numeric = [0.0; 2];
            for (slot, step) in numeric.iter_mut().zip([h, h / 2.0]) {
                xs[ti].data_mut()[i] = orig + step;
                let up = eval(&xs, store)?;
                xs[ti].data_mut()[i] = orig - step;
                let down = eval(&xs, store)?;
                *slot = (up - down) / (2.0 * step);
            }
            xs[ti].data_mut()[i] = orig;
            report.record(format!("input{ti}[{i}]"), grad.data()[i], numeric, cfg);
        }
    }
    for (name, grad) in &param_grads {
        for i in probe_indices(grad.numel(), cfg.max_coords) {
            let orig = store.param(name).expect("present").value.data()[i];
            let set = |store: &mut ParamStore<f64>, v: f64| {
                store.param_mut(name).expect("present").value_mut().data_mut()[i] = v;
            };
            let mut numeric = [0.0; 2];
            for (slot, step) in numeric.iter_mut().zip([h, h / 2.0]) {
                set(store, orig + step);
                let up = eval(&xs, store)?;
                set(store, orig - step);
                let down = eval(&xs, store)?;
                *slot = (up - down) / (2.0 * step);
            }
            set(store, orig);
            report.record(format!("{name}[{i}]"), grad.data()[i], numeric, cfg);
        }
    }
    for k in 0..cfg.directions {
        let mut rng = stream(cfg.seed, "gradcheck-direction", k as u64, 0);
        let dirs: Vec<Tensor<f64>> = param_grads
            .iter()
            .map(|(_, g)| {
                let data = (0..g.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Tensor::new(g.shape().to_vec(), data).expect("same shape")
            })
            .collect();
        let analytic: f64 = param_grads
            .iter()
            .zip(&dirs)
            .map(|((_, g), d)| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let originals: Vec<Tensor<f64>> =
            param_grads.iter().map(|(n, _)| (*store.param(n).expect("present").value).clone()).collect();
        let shifted = |store: &mut ParamStore<f64>, s: f64| {
            for (((name, _), d), o) in param_grads.iter().zip(&dirs).zip(&originals) {
                let v = store.param_mut(name).expect("present").value_mut();
                for ((x, &o), &d) in v.data_mut().iter_mut().zip(o.data()).zip(d.data()) {
                    *x = o + s * d;
                }
            }
        };
        let mut numeric = [0.0; 2];
        for (slot, step) in numeric.iter_mut().zip([h, h / 2.0]) {
            shifted(store, step);
            let up = eval(&xs, store)?;
            shifted(store, -step);
            let down = eval(&xs, store)?;
            *slot = (up - down) / (2.0 * step);
        }
        shifted(store, 0.0);
        report.record(format!("direction{k}"), analytic, numeric, cfg);
    }
    store.zero_grad();
    Ok(report)
}
