//! Shared numeric kernels: stable activations, cross-entropy, the
//! Adam optimizer over named parameter blocks, and a central-difference
//! gradient checker. All gradients in this crate are hand-derived, so
//! the checker is the ground truth the rest of the library is tested
//! against.

use crate::tensor::Tensor;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// softplus(x) = ln(1 + e^x), computed as max(x, 0) + ln1p(e^-|x|) so
/// large inputs neither overflow nor lose the exact identity
/// softplus(0) = ln 2.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn relu(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| x.max(0.0)).collect()
}

/// max-shifted softmax; finite for any finite input.
pub fn softmax(zs: &[f64]) -> Vec<f64> {
    debug_assert!(!zs.is_empty());
    let m = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = zs.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

pub fn log_sum_exp(zs: &[f64]) -> f64 {
    debug_assert!(!zs.is_empty());
    let m = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + zs.iter().map(|&z| (z - m).exp()).sum::<f64>().ln()
}

/// Cross-entropy of a logit vector against a hard label, evaluated as
/// logsumexp(z) - z[y] so extreme logits stay exact.
pub fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    debug_assert!(y < logits.len());
    log_sum_exp(logits) - logits[y]
}

/// Gradient of [`cross_entropy`] in the logits: softmax(z) - onehot(y).
pub fn cross_entropy_grad(logits: &[f64], y: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[y] -= 1.0;
    g
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    debug_assert!(!xs.is_empty());
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A named tensor of trainable values with its gradient accumulator
/// and Adam state. Gradients accumulate across samples until a step
/// consumes them.
#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    moment1: Tensor,
    moment2: Tensor,
    steps: u64,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let dims = value.dims().to_vec();
        ParamBlock {
            name: name.into(),
            value,
            grad: Tensor::zeros(&dims),
            moment1: Tensor::zeros(&dims),
            moment2: Tensor::zeros(&dims),
            steps: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::with_lr(1e-3)
    }
}

/// One Adam update with bias correction. Consumes the accumulated
/// gradient: the block's grad is zero afterwards.
pub fn adam_step(block: &mut ParamBlock, cfg: &AdamConfig) {
    block.steps += 1;
    let t = block.steps as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let grad = block.grad.data_mut();
    let m = block.moment1.data_mut();
    let v = block.moment2.data_mut();
    let value = block.value.data_mut();
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        grad[i] = 0.0;
    }
}

/// Flat scalar view over a set of parameter blocks, the interface the
/// gradient checker perturbs through.
pub trait ParamVector {
    fn num_blocks(&self) -> usize;
    fn block_name(&self, b: usize) -> &str;
    fn block_len(&self, b: usize) -> usize;
    fn get(&self, b: usize, i: usize) -> f64;
    fn set(&mut self, b: usize, i: usize, v: f64);
    fn grad(&self, b: usize, i: usize) -> f64;
}

impl ParamVector for Vec<ParamBlock> {
    fn num_blocks(&self) -> usize {
        self.len()
    }
    fn block_name(&self, b: usize) -> &str {
        &self[b].name
    }
    fn block_len(&self, b: usize) -> usize {
        self[b].value.len()
    }
    fn get(&self, b: usize, i: usize) -> f64 {
        self[b].value.data()[i]
    }
    fn set(&mut self, b: usize, i: usize, v: f64) {
        self[b].value.data_mut()[i] = v;
    }
    fn grad(&self, b: usize, i: usize) -> f64 {
        self[b].grad.data()[i]
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub block: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Central-difference check of analytic gradients already stored in
/// `params`. The loss closure must be a pure function of the parameter
/// values; this perturbs each scalar by ±eps, restores it, and reports
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|) per entry.
pub fn grad_check<P, L>(params: &mut P, mut loss: L, eps: f64) -> GradCheckReport
where
    P: ParamVector + ?Sized,
    L: FnMut(&P) -> f64,
{
    let mut entries = Vec::new();
    for b in 0..params.num_blocks() {
        for i in 0..params.block_len(b) {
            let saved = params.get(b, i);
            params.set(b, i, saved + eps);
            let plus = loss(params);
            params.set(b, i, saved - eps);
            let minus = loss(params);
            params.set(b, i, saved);
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = params.grad(b, i);
            let rel_err =
                (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs());
            entries.push(GradCheckEntry {
                block: params.block_name(b).to_string(),
                index: i,
                analytic,
                numeric,
                rel_err,
            });
        }
    }
    GradCheckReport { entries }
}
