//! The learnable velocity field: a small MLP over `[x_t | time embedding]`.
//!
//! The network is `d + time_embed_dim -> hidden widths -> d` with SiLU
//! (`x * sigmoid(x)`) between layers and a linear output. The final layer
//! initializes to zero, so an untrained field predicts the zero velocity;
//! hidden layers use fan-in-scaled uniform initialization. Gradients are
//! exact reverse-mode derivatives of the mean-squared regression loss,
//! written out by hand for this fixed architecture (no general autodiff).
//! Optimization is Adam with bias correction plus an exponential moving
//! average of the weights, which is what sampling should use.
//!
//! Everything is `f64` and deterministic: given the same parameters, batch
//! and optimizer state, a training step is a pure function.

use crate::flow::PathSample;
use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_distr::Uniform;
use thiserror::Error;

/// Default hidden widths of the velocity MLP.
pub const DEFAULT_HIDDEN_WIDTHS: [usize; 3] = [256, 256, 256];

/// Default sinusoidal time-embedding dimension.
pub const DEFAULT_TIME_EMBED_DIM: usize = 64;

/// Default Adam settings: the learning rate and betas used throughout, no
/// weight decay.
pub const DEFAULT_LEARNING_RATE: f64 = 2e-4;
pub const DEFAULT_ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const DEFAULT_ADAM_EPS: f64 = 1e-8;

/// Default EMA decay for the shadow weights.
pub const DEFAULT_EMA_DECAY: f64 = 0.9999;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("time embedding dimension must be even and at least 2, got {0}")]
    OddDim(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("non-finite value encountered in the network")]
    NonFiniteActivation,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("{0}")]
    BadParameter(&'static str),
}

/// Sinusoidal features of a scalar time: `dim/2` geometrically spaced
/// frequencies `omega_k = 2*pi*exp(-k*ln(1e4)/(dim/2 - 1))`, laid out as all
/// sines then all cosines.
pub fn time_embedding(t: f64, dim: usize) -> Result<Vec<f64>, ModelError> {
    if dim < 2 || dim % 2 != 0 {
        return Err(ModelError::OddDim(dim));
    }
    let m = dim / 2;
    let denom = if m > 1 { (m - 1) as f64 } else { 1.0 };
    let ln_span = 1.0e4f64.ln();
    let mut e = vec![0.0; dim];
    for k in 0..m {
        let omega = 2.0 * std::f64::consts::PI * (-(k as f64) * ln_span / denom).exp();
        e[k] = (omega * t).sin();
        e[m + k] = (omega * t).cos();
    }
    Ok(e)
}

/// One dense layer, weights stored `(out, in)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Gradients mirror the parameter layout exactly.
pub type MlpGrads = Vec<LayerParams>;

/// MLP parameters plus the shape metadata needed to rebuild inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    data_dim: usize,
    time_embed_dim: usize,
    hidden_widths: Vec<usize>,
    layers: Vec<LayerParams>,
}

impl MlpParams {
    /// Fresh network: hidden layers drawn uniformly in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, final layer all zero so the
    /// initial velocity field is identically zero.
    pub fn init<R: Rng + ?Sized>(
        data_dim: usize,
        hidden_widths: &[usize],
        time_embed_dim: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        if data_dim == 0 {
            return Err(ModelError::BadParameter("data_dim must be at least 1"));
        }
        if time_embed_dim < 2 || time_embed_dim % 2 != 0 {
            return Err(ModelError::OddDim(time_embed_dim));
        }
        if hidden_widths.iter().any(|&w| w == 0) {
            return Err(ModelError::BadParameter("hidden widths must be positive"));
        }
        let mut dims = vec![data_dim + time_embed_dim];
        dims.extend_from_slice(hidden_widths);
        dims.push(data_dim);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let last = l == dims.len() - 2;
            let layer = if last {
                LayerParams {
                    w: Array2::zeros((fan_out, fan_in)),
                    b: Array1::zeros(fan_out),
                }
            } else {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let u = Uniform::new_inclusive(-bound, bound)
                    .expect("valid uniform bounds for positive fan-in");
                LayerParams {
                    w: Array2::from_shape_fn((fan_out, fan_in), |_| u.sample(rng)),
                    b: Array1::from_shape_fn(fan_out, |_| u.sample(rng)),
                }
            };
            layers.push(layer);
        }
        Ok(MlpParams {
            data_dim,
            time_embed_dim,
            hidden_widths: hidden_widths.to_vec(),
            layers,
        })
    }

    pub(crate) fn from_parts(
        data_dim: usize,
        time_embed_dim: usize,
        hidden_widths: Vec<usize>,
        layers: Vec<LayerParams>,
    ) -> Self {
        MlpParams {
            data_dim,
            time_embed_dim,
            hidden_widths,
            layers,
        }
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn time_embed_dim(&self) -> usize {
        self.time_embed_dim
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.hidden_widths
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    /// Mutable access for optimizers and perturbation-based checks; layer
    /// shapes must be preserved.
    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn zeros_like_layers(&self) -> Vec<LayerParams> {
        self.layers
            .iter()
            .map(|l| LayerParams {
                w: Array2::zeros(l.w.dim()),
                b: Array1::zeros(l.b.len()),
            })
            .collect()
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_prime(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Stacks `[x | embedding(t)]` rows for a batch.
fn assemble_input(
    params: &MlpParams,
    xs: &Array2<f64>,
    ts: &[f64],
) -> Result<Array2<f64>, ModelError> {
    let n = xs.nrows();
    if xs.ncols() != params.data_dim {
        return Err(ModelError::ShapeMismatch("input dimension differs from data_dim"));
    }
    if ts.len() != n {
        return Err(ModelError::ShapeMismatch("one t per input row required"));
    }
    let te = params.time_embed_dim;
    let mut input = Array2::zeros((n, params.data_dim + te));
    for i in 0..n {
        for j in 0..params.data_dim {
            input[[i, j]] = xs[[i, j]];
        }
        let emb = time_embedding(ts[i], te)?;
        for (j, v) in emb.into_iter().enumerate() {
            input[[i, params.data_dim + j]] = v;
        }
    }
    Ok(input)
}

/// Runs the forward pass, keeping pre-activations and layer inputs when
/// `keep_tape` is set (needed for the backward pass).
fn forward_tape(
    params: &MlpParams,
    input: Array2<f64>,
    keep_tape: bool,
) -> (Vec<Array2<f64>>, Vec<Array2<f64>>, Array2<f64>) {
    let n_layers = params.layers.len();
    let mut inputs = Vec::new();
    let mut preacts = Vec::new();
    let mut a = input;
    for (l, layer) in params.layers.iter().enumerate() {
        let z = a.dot(&layer.w.t()) + &layer.b;
        if keep_tape {
            inputs.push(a);
        }
        if l + 1 == n_layers {
            return (inputs, preacts, z);
        }
        a = z.mapv(silu);
        if keep_tape {
            preacts.push(z);
        }
    }
    unreachable!("network always has at least the output layer");
}

/// Velocity prediction for a batch: `xs` is `n x d`, `ts` has length `n`.
pub fn forward_batch(
    params: &MlpParams,
    xs: &Array2<f64>,
    ts: &[f64],
) -> Result<Array2<f64>, ModelError> {
    let input = assemble_input(params, xs, ts)?;
    let (_, _, out) = forward_tape(params, input, false);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteActivation);
    }
    Ok(out)
}

/// Velocity prediction for a single point.
pub fn forward(params: &MlpParams, x: &[f64], t: f64) -> Result<Vec<f64>, ModelError> {
    let xs = Array2::from_shape_vec((1, x.len()), x.to_vec())
        .map_err(|_| ModelError::ShapeMismatch("input reshape failed"))?;
    let out = forward_batch(params, &xs, &[t])?;
    Ok(out.row(0).to_vec())
}

/// Mean-squared regression loss against the batch's target velocities, and
/// its exact gradient with respect to every parameter.
pub fn loss_and_grad(
    params: &MlpParams,
    batch: &[PathSample],
) -> Result<(f64, MlpGrads), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let n = batch.len();
    let d = params.data_dim;
    for s in batch {
        if s.x_t.len() != d || s.u_t.len() != d {
            return Err(ModelError::ShapeMismatch("path sample dimension differs from data_dim"));
        }
    }
    let mut xs = Array2::zeros((n, d));
    let mut us = Array2::zeros((n, d));
    let mut ts = Vec::with_capacity(n);
    for (i, s) in batch.iter().enumerate() {
        for j in 0..d {
            xs[[i, j]] = s.x_t[j];
            us[[i, j]] = s.u_t[j];
        }
        ts.push(s.t);
    }

    let input = assemble_input(params, &xs, &ts)?;
    let (inputs, preacts, out) = forward_tape(params, input, true);

    let residual = &out - &us;
    let loss = residual.iter().map(|r| r * r).sum::<f64>() / n as f64;
    if !loss.is_finite() {
        return Err(ModelError::NonFiniteActivation);
    }

    let n_layers = params.layers.len();
    let mut grads: Vec<LayerParams> = Vec::with_capacity(n_layers);
    let mut delta = residual * (2.0 / n as f64);
    for l in (0..n_layers).rev() {
        let layer_input = &inputs[l];
        let gw = delta.t().dot(layer_input);
        let gb = delta.sum_axis(Axis(0));
        grads.push(LayerParams { w: gw, b: gb });
        if l > 0 {
            let da = delta.dot(&params.layers[l].w);
            delta = da * preacts[l - 1].mapv(silu_prime);
        }
    }
    grads.reverse();
    Ok((loss, grads))
}

/// Adam hyperparameters. Weight decay is decoupled (applied to parameters
/// directly) and defaults to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: DEFAULT_LEARNING_RATE,
            beta1: DEFAULT_ADAM_BETAS.0,
            beta2: DEFAULT_ADAM_BETAS.1,
            eps: DEFAULT_ADAM_EPS,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer state: Adam moments, the step counter, and the EMA shadow of
/// the parameters.
#[derive(Debug, Clone)]
pub struct OptState {
    adam: AdamConfig,
    m: Vec<LayerParams>,
    v: Vec<LayerParams>,
    step: u64,
    ema: MlpParams,
    ema_decay: f64,
}

impl OptState {
    pub fn new(params: &MlpParams, adam: AdamConfig, ema_decay: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&ema_decay) {
            return Err(ModelError::BadParameter("ema decay must lie in [0, 1]"));
        }
        if !(adam.lr.is_finite() && adam.lr > 0.0) {
            return Err(ModelError::BadParameter("learning rate must be positive"));
        }
        Ok(OptState {
            adam,
            m: params.zeros_like_layers(),
            v: params.zeros_like_layers(),
            step: 0,
            ema: params.clone(),
            ema_decay,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn adam(&self) -> AdamConfig {
        self.adam
    }

    pub fn ema(&self) -> &MlpParams {
        &self.ema
    }

    pub fn ema_decay(&self) -> f64 {
        self.ema_decay
    }

}

/// Core Adam update over one flat tensor.
fn adam_update(
    cfg: &AdamConfig,
    step: u64,
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
) {
    let t = step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for i in 0..p.len() {
        if cfg.weight_decay != 0.0 {
            p[i] -= cfg.lr * cfg.weight_decay * p[i];
        }
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

fn shapes_match(a: &[LayerParams], b: &[LayerParams]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.w.dim() == y.w.dim() && x.b.len() == y.b.len())
}

/// One bias-corrected Adam step in place; increments the step counter.
pub fn adam_step(
    state: &mut OptState,
    params: &mut MlpParams,
    grads: &MlpGrads,
) -> Result<(), ModelError> {
    if !shapes_match(&params.layers, grads) {
        return Err(ModelError::ShapeMismatch("gradient shapes differ from parameters"));
    }
    state.step += 1;
    let cfg = state.adam;
    let step = state.step;
    for (l, grad) in grads.iter().enumerate() {
        let p = &mut params.layers[l];
        let m = &mut state.m[l];
        let v = &mut state.v[l];
        adam_update(
            &cfg,
            step,
            p.w.as_slice_mut().expect("contiguous weights"),
            grad.w.as_slice().expect("contiguous gradients"),
            m.w.as_slice_mut().expect("contiguous moments"),
            v.w.as_slice_mut().expect("contiguous moments"),
        );
        adam_update(
            &cfg,
            step,
            p.b.as_slice_mut().expect("contiguous bias"),
            grad.b.as_slice().expect("contiguous gradients"),
            m.b.as_slice_mut().expect("contiguous moments"),
            v.b.as_slice_mut().expect("contiguous moments"),
        );
    }
    Ok(())
}

/// Folds the current parameters into the EMA shadow:
/// `ema <- decay * ema + (1 - decay) * params`.
pub fn ema_update(state: &mut OptState, params: &MlpParams) -> Result<(), ModelError> {
    if !shapes_match(&state.ema.layers, &params.layers) {
        return Err(ModelError::ShapeMismatch("ema shapes differ from parameters"));
    }
    let decay = state.ema_decay;
    for (e, p) in state.ema.layers.iter_mut().zip(&params.layers) {
        e.w.zip_mut_with(&p.w, |ev, pv| *ev = decay * *ev + (1.0 - decay) * pv);
        e.b.zip_mut_with(&p.b, |ev, pv| *ev = decay * *ev + (1.0 - decay) * pv);
    }
    Ok(())
}
