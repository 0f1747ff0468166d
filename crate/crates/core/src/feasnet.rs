//! Feasibility-Net: an MLP feasibility head and a VAE over height patches,
//! trained jointly with hand-written backpropagation and Adam.
//!
//! Heights enter both branches multiplied by [`HEIGHT_SCALE`] (decimeters);
//! reconstructions and reconstruction errors are reported in those units.

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{Sample, TaskVector};
use crate::terrain::{HeightPatch, PATCH_SIDE};

pub const PATCH_DIM: usize = PATCH_SIDE * PATCH_SIDE;
pub const TASK_DIM: usize = 3;
pub const HIDDEN: usize = 64;
pub const LATENT: usize = 16;
/// Meters to network units.
pub const HEIGHT_SCALE: f64 = 10.0;

const MAGIC: &[u8; 4] = b"FNET";
const VERSION: u16 = 1;

const MLP0: usize = 0;
const MLP1: usize = 1;
const MLP2: usize = 2;
const ENC: usize = 3;
const ENC_MU: usize = 4;
const ENC_LV: usize = 5;
const DEC0: usize = 6;
const DEC1: usize = 7;

/// `(inputs, outputs)` of every dense layer, in storage order.
pub const LAYER_SHAPES: [(usize, usize); 8] = [
    (PATCH_DIM + TASK_DIM, HIDDEN),
    (HIDDEN, HIDDEN),
    (HIDDEN, 1),
    (PATCH_DIM, HIDDEN),
    (HIDDEN, LATENT),
    (HIDDEN, LATENT),
    (LATENT, HIDDEN),
    (HIDDEN, PATCH_DIM),
];

#[derive(Debug, Error)]
pub enum FeasNetError {
    #[error("patch has {actual} values, the network expects {expected}")]
    Shape { expected: usize, actual: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("noise has {actual} rows for a batch of {expected}")]
    NoiseRows { expected: usize, actual: usize },
    #[error("dataset has {have} samples, fewer than the batch size {need}")]
    DatasetTooSmall { have: usize, need: usize },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("non-finite {component} loss at epoch {epoch}")]
    NonFinite { component: &'static str, epoch: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error("unsupported weight file version {found}, expected {expected}")]
    Version { found: u16, expected: u16 },
}

/// Fully connected layer, weights stored `out x in` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, y) in out.iter_mut().enumerate() {
            *y = self.bias[o] + dot(self.row(o), x);
        }
    }

    /// Accumulates parameter gradients into `grad` and, if given, adds the
    /// input gradient into `dx`.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            axpy(&mut grad.weights[o * self.inputs..(o + 1) * self.inputs], g, x);
            grad.bias[o] += g;
        }
        if let Some(dx) = dx {
            for (o, &g) in dy.iter().enumerate() {
                if g != 0.0 {
                    axpy(dx, g, self.row(o));
                }
            }
        }
    }
}

/// Dot product with a fixed four-way summation order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// All network weights: the MLP head, the VAE encoder and the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasNetParams {
    layers: Vec<Dense>,
}

impl FeasNetParams {
    pub fn zeros() -> Self {
        Self {
            layers: LAYER_SHAPES.iter().map(|&(i, o)| Dense::zeros(i, o)).collect(),
        }
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            layers: LAYER_SHAPES
                .iter()
                .map(|&(i, o)| Dense::glorot(i, o, &mut rng))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn slot(&self, mut i: usize) -> (usize, bool, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            if i < l.weights.len() {
                return (li, false, i);
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return (li, true, i);
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter `i` in flat order (each layer's weights, then its bias).
    pub fn get(&self, i: usize) -> f64 {
        let (l, bias, j) = self.slot(i);
        if bias {
            self.layers[l].bias[j]
        } else {
            self.layers[l].weights[j]
        }
    }

    pub fn set(&mut self, i: usize, v: f64) {
        let (l, bias, j) = self.slot(i);
        if bias {
            self.layers[l].bias[j] = v;
        } else {
            self.layers[l].weights[j] = v;
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

fn patch_input(patch: &HeightPatch) -> Result<Vec<f64>, FeasNetError> {
    let v = patch.values();
    if v.len() != PATCH_DIM {
        return Err(FeasNetError::Shape {
            expected: PATCH_DIM,
            actual: v.len(),
        });
    }
    Ok(v.iter().map(|h| h * HEIGHT_SCALE).collect())
}

/// Activations of one sample, kept for backpropagation.
struct Trace {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    out: f64,
    enc: Vec<f64>,
    mu: Vec<f64>,
    logvar: Vec<f64>,
    z: Vec<f64>,
    dec: Vec<f64>,
    recon: Vec<f64>,
}

fn mlp_forward(p: &FeasNetParams, input: &[f64], h1: &mut Vec<f64>, h2: &mut Vec<f64>) -> f64 {
    let l = &p.layers;
    h1.resize(HIDDEN, 0.0);
    h2.resize(HIDDEN, 0.0);
    l[MLP0].forward(input, h1);
    h1.iter_mut().for_each(|v| *v = v.tanh());
    l[MLP1].forward(h1, h2);
    h2.iter_mut().for_each(|v| *v = v.tanh());
    let mut o = [0.0];
    l[MLP2].forward(h2, &mut o);
    sigmoid(o[0])
}

fn encode(p: &FeasNetParams, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let l = &p.layers;
    let mut enc = vec![0.0; HIDDEN];
    l[ENC].forward(x, &mut enc);
    enc.iter_mut().for_each(|v| *v = v.tanh());
    let mut mu = vec![0.0; LATENT];
    let mut logvar = vec![0.0; LATENT];
    l[ENC_MU].forward(&enc, &mut mu);
    l[ENC_LV].forward(&enc, &mut logvar);
    (enc, mu, logvar)
}

fn decode(p: &FeasNetParams, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let l = &p.layers;
    let mut dec = vec![0.0; HIDDEN];
    l[DEC0].forward(z, &mut dec);
    dec.iter_mut().for_each(|v| *v = v.tanh());
    let mut recon = vec![0.0; PATCH_DIM];
    l[DEC1].forward(&dec, &mut recon);
    (dec, recon)
}

fn trace(p: &FeasNetParams, patch: &[f64], task: &TaskVector, noise: &[f64]) -> Trace {
    let mut input = Vec::with_capacity(PATCH_DIM + TASK_DIM);
    input.extend_from_slice(patch);
    input.extend_from_slice(&task.as_array());
    let (mut h1, mut h2) = (Vec::new(), Vec::new());
    let out = mlp_forward(p, &input, &mut h1, &mut h2);
    let (enc, mu, logvar) = encode(p, patch);
    let z: Vec<f64> = (0..LATENT)
        .map(|j| mu[j] + (0.5 * logvar[j]).exp() * noise[j])
        .collect();
    let (dec, recon) = decode(p, &z);
    Trace {
        input,
        h1,
        h2,
        out,
        enc,
        mu,
        logvar,
        z,
        dec,
        recon,
    }
}

/// Feasibility prediction `f` in `(0, 1)`.
pub fn predict_feasibility(
    params: &FeasNetParams,
    patch: &HeightPatch,
    task: &TaskVector,
) -> Result<f64, FeasNetError> {
    let mut input = patch_input(patch)?;
    input.extend_from_slice(&task.as_array());
    let (mut h1, mut h2) = (Vec::new(), Vec::new());
    Ok(mlp_forward(params, &input, &mut h1, &mut h2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeOutput {
    /// Reconstruction in network units.
    pub recon: Vec<f64>,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

/// VAE pass with reparameterized latent `z = mu + exp(logvar / 2) * noise`.
pub fn vae_forward(
    params: &FeasNetParams,
    patch: &HeightPatch,
    noise: &[f64; LATENT],
) -> Result<VaeOutput, FeasNetError> {
    let x = patch_input(patch)?;
    let (_, mu, logvar) = encode(params, &x);
    let z: Vec<f64> = (0..LATENT)
        .map(|j| mu[j] + (0.5 * logvar[j]).exp() * noise[j])
        .collect();
    let (_, recon) = decode(params, &z);
    Ok(VaeOutput { recon, mu, logvar })
}

/// Per-element mean squared reconstruction error with `z = mu`.
pub fn reconstruction_error(params: &FeasNetParams, patch: &HeightPatch) -> Result<f64, FeasNetError> {
    let x = patch_input(patch)?;
    let (_, mu, _) = encode(params, &x);
    let (_, recon) = decode(params, &mu);
    Ok(mse(&recon, &x))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64
}

/// KL divergence of `N(mu, exp(logvar))` from the standard normal.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the VAE loss.
    pub alpha: f64,
    /// Weight of the KL term inside the VAE loss.
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Label datasets with simulated tracking noise.
    pub tracking_noise: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 5e-4,
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 50,
            seed: 0,
            tracking_noise: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FeasNetError> {
        let bad = |m: String| Err(FeasNetError::BadConfig(m));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub feas: f64,
    pub recon: f64,
    pub kl: f64,
}

impl LossParts {
    fn compose(feas: f64, recon: f64, kl: f64, cfg: &TrainConfig) -> Self {
        Self {
            total: feas + cfg.alpha * (recon + cfg.beta * kl),
            feas,
            recon,
            kl,
        }
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("feasibility", self.feas),
            ("reconstruction", self.recon),
            ("kl", self.kl),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

fn batch_inputs(batch: &[Sample]) -> Result<Vec<Vec<f64>>, FeasNetError> {
    batch.iter().map(|s| patch_input(&s.patch)).collect()
}

fn check_batch(batch: &[Sample], noise: &[[f64; LATENT]]) -> Result<(), FeasNetError> {
    if batch.is_empty() {
        return Err(FeasNetError::EmptyBatch);
    }
    if noise.len() != batch.len() {
        return Err(FeasNetError::NoiseRows {
            expected: batch.len(),
            actual: noise.len(),
        });
    }
    Ok(())
}

/// Joint loss `feas + alpha * (recon + beta * kl)`, each component a batch
/// mean. `noise[i]` drives the latent sample of `batch[i]`.
pub fn loss(
    params: &FeasNetParams,
    batch: &[Sample],
    noise: &[[f64; LATENT]],
    cfg: &TrainConfig,
) -> Result<LossParts, FeasNetError> {
    check_batch(batch, noise)?;
    let inputs = batch_inputs(batch)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    Ok(loss_and_grad(params, batch, &inputs, &idx, noise, cfg, None))
}

/// Loss and, if `grad` is given, its gradient accumulated into `grad`.
fn loss_and_grad(
    p: &FeasNetParams,
    batch: &[Sample],
    inputs: &[Vec<f64>],
    idx: &[usize],
    noise: &[[f64; LATENT]],
    cfg: &TrainConfig,
    mut grad: Option<&mut FeasNetParams>,
) -> LossParts {
    let n = idx.len() as f64;
    let (mut feas, mut recon, mut kl) = (0.0, 0.0, 0.0);
    let l = &p.layers;
    let mut d_h1 = vec![0.0; HIDDEN];
    let mut d_h2 = vec![0.0; HIDDEN];
    let mut d_dec = vec![0.0; HIDDEN];
    let mut d_z = vec![0.0; LATENT];
    let mut d_enc = vec![0.0; HIDDEN];
    for (&i, eps) in idx.iter().zip(noise) {
        let (s, x) = (&batch[i], &inputs[i]);
        let t = trace(p, x, &s.task, eps);
        let err = t.out - s.label;
        feas += err * err;
        let r = mse(&t.recon, x);
        recon += r;
        kl += kl_divergence(&t.mu, &t.logvar);

        let Some(g) = grad.as_deref_mut() else {
            continue;
        };
        let gl = &mut g.layers;

        // feasibility head
        let d_out = [2.0 * err / n * t.out * (1.0 - t.out)];
        d_h2.iter_mut().for_each(|v| *v = 0.0);
        l[MLP2].backward(&t.h2, &d_out, &mut gl[MLP2], Some(&mut d_h2));
        for (d, h) in d_h2.iter_mut().zip(&t.h2) {
            *d *= 1.0 - h * h;
        }
        d_h1.iter_mut().for_each(|v| *v = 0.0);
        l[MLP1].backward(&t.h1, &d_h2, &mut gl[MLP1], Some(&mut d_h1));
        for (d, h) in d_h1.iter_mut().zip(&t.h1) {
            *d *= 1.0 - h * h;
        }
        l[MLP0].backward(&t.input, &d_h1, &mut gl[MLP0], None);

        // decoder
        let scale = cfg.alpha * 2.0 / (PATCH_DIM as f64 * n);
        let d_recon: Vec<f64> = t.recon.iter().zip(x).map(|(r, x)| scale * (r - x)).collect();
        d_dec.iter_mut().for_each(|v| *v = 0.0);
        l[DEC1].backward(&t.dec, &d_recon, &mut gl[DEC1], Some(&mut d_dec));
        for (d, h) in d_dec.iter_mut().zip(&t.dec) {
            *d *= 1.0 - h * h;
        }
        d_z.iter_mut().for_each(|v| *v = 0.0);
        l[DEC0].backward(&t.z, &d_dec, &mut gl[DEC0], Some(&mut d_z));

        // reparameterization and KL
        let kw = cfg.alpha * cfg.beta / n;
        let mut d_mu = vec![0.0; LATENT];
        let mut d_lv = vec![0.0; LATENT];
        for j in 0..LATENT {
            let sd = (0.5 * t.logvar[j]).exp();
            d_mu[j] = d_z[j] + kw * t.mu[j];
            d_lv[j] = d_z[j] * eps[j] * 0.5 * sd + kw * 0.5 * (t.logvar[j].exp() - 1.0);
        }

        // encoder
        d_enc.iter_mut().for_each(|v| *v = 0.0);
        l[ENC_MU].backward(&t.enc, &d_mu, &mut gl[ENC_MU], Some(&mut d_enc));
        l[ENC_LV].backward(&t.enc, &d_lv, &mut gl[ENC_LV], Some(&mut d_enc));
        for (d, h) in d_enc.iter_mut().zip(&t.enc) {
            *d *= 1.0 - h * h;
        }
        l[ENC].backward(x, &d_enc, &mut gl[ENC], None);
    }
    LossParts::compose(feas / n, recon / n, kl / n, cfg)
}

/// Analytic gradient of the joint loss.
pub fn gradient(
    params: &FeasNetParams,
    batch: &[Sample],
    noise: &[[f64; LATENT]],
    cfg: &TrainConfig,
) -> Result<(LossParts, FeasNetParams), FeasNetError> {
    check_batch(batch, noise)?;
    let inputs = batch_inputs(batch)?;
    let mut g = FeasNetParams::zeros();
    let idx: Vec<usize> = (0..batch.len()).collect();
    let parts = loss_and_grad(params, batch, &inputs, &idx, noise, cfg, Some(&mut g));
    Ok((parts, g))
}

/// Adam state over the flat parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut FeasNetParams, grad: &FeasNetParams) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((w, g), m), v) in params
            .values_mut()
            .zip(grad.values())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

fn draw_noise<R: Rng>(rng: &mut R) -> [f64; LATENT] {
    let mut e = [0.0; LATENT];
    for v in &mut e {
        *v = rng.sample(StandardNormal);
    }
    e
}

/// `n` rows of standard-normal latent noise drawn with `seed`.
pub fn noise_rows(n: usize, seed: u64) -> Vec<[f64; LATENT]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| draw_noise(&mut rng)).collect()
}

/// Minibatch Adam on the joint loss with seeded shuffling and latent noise.
///
/// `history[e]` is the loss over the whole dataset after epoch `e`, with
/// `z = mu` so the curve carries no sampling noise.
pub fn train(
    params: &FeasNetParams,
    dataset: &[Sample],
    cfg: &TrainConfig,
) -> Result<(FeasNetParams, Vec<LossParts>), FeasNetError> {
    train_with_progress(params, dataset, cfg, |_, _| {})
}

pub fn train_with_progress(
    params: &FeasNetParams,
    dataset: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &LossParts),
) -> Result<(FeasNetParams, Vec<LossParts>), FeasNetError> {
    cfg.validate()?;
    if dataset.len() < cfg.batch_size {
        return Err(FeasNetError::DatasetTooSmall {
            have: dataset.len(),
            need: cfg.batch_size,
        });
    }
    let inputs = batch_inputs(dataset)?;
    let mut params = params.clone();
    let mut adam = Adam::new(params.param_count(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let all: Vec<usize> = (0..dataset.len()).collect();
    let zero_noise = vec![[0.0; LATENT]; dataset.len()];
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut grad = FeasNetParams::zeros();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let noise: Vec<[f64; LATENT]> = idx.iter().map(|_| draw_noise(&mut rng)).collect();
            grad.values_mut().for_each(|g| *g = 0.0);
            let parts = loss_and_grad(&params, dataset, &inputs, idx, &noise, cfg, Some(&mut grad));
            if let Some(component) = parts.first_non_finite() {
                return Err(FeasNetError::NonFinite { component, epoch });
            }
            adam.step(&mut params, &grad);
        }
        let parts = loss_and_grad(&params, dataset, &inputs, &all, &zero_noise, cfg, None);
        if let Some(component) = parts.first_non_finite() {
            return Err(FeasNetError::NonFinite { component, epoch });
        }
        on_epoch(epoch, &parts);
        history.push(parts);
    }
    Ok((params, history))
}

/// Largest relative error between the analytic gradient and central finite
/// differences (step `1e-5`) over `count` parameters drawn with `seed`.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(
    params: &FeasNetParams,
    batch: &[Sample],
    noise: &[[f64; LATENT]],
    cfg: &TrainConfig,
    count: usize,
    seed: u64,
) -> Result<f64, FeasNetError> {
    const H: f64 = 1e-5;
    let (_, analytic) = gradient(params, batch, noise, cfg)?;
    let total = params.param_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, count.min(total));
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for i in picks.iter() {
        let w = params.get(i);
        probe.set(i, w + H);
        let up = loss(&probe, batch, noise, cfg)?.total;
        probe.set(i, w - H);
        let down = loss(&probe, batch, noise, cfg)?.total;
        probe.set(i, w);
        let numeric = (up - down) / (2.0 * H);
        let a = analytic.get(i);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Serializes weights: magic, version, layer-shape table, then each layer's
/// weights and bias as little-endian `f64`.
pub fn params_to_bytes(params: &FeasNetParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * params.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.layers.len() as u16).to_le_bytes());
    for l in &params.layers {
        out.extend_from_slice(&(l.inputs as u32).to_le_bytes());
        out.extend_from_slice(&(l.outputs as u32).to_le_bytes());
    }
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FeasNetError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(FeasNetError::Format(format!(
                "truncated at byte {} while reading {what}",
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, FeasNetError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, FeasNetError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, FeasNetError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn params_from_bytes(buf: &[u8]) -> Result<FeasNetParams, FeasNetError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(FeasNetError::Format("missing FNET magic".into()));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(FeasNetError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u16("layer count")? as usize;
    if count != LAYER_SHAPES.len() {
        return Err(FeasNetError::Format(format!(
            "{count} layers, expected {}",
            LAYER_SHAPES.len()
        )));
    }
    for (k, &(i, o)) in LAYER_SHAPES.iter().enumerate() {
        let shape = (r.u32("layer shape")? as usize, r.u32("layer shape")? as usize);
        if shape != (i, o) {
            return Err(FeasNetError::Format(format!(
                "layer {k} is {}x{}, expected {i}x{o}",
                shape.0, shape.1
            )));
        }
    }
    let mut params = FeasNetParams::zeros();
    for v in params.values_mut() {
        *v = r.f64("parameters")?;
        if !v.is_finite() {
            return Err(FeasNetError::Format("non-finite parameter".into()));
        }
    }
    if r.pos != buf.len() {
        return Err(FeasNetError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(params)
}

pub fn save_params(params: &FeasNetParams, path: impl AsRef<Path>) -> Result<(), FeasNetError> {
    let path = path.as_ref();
    fs::write(path, params_to_bytes(params)).map_err(|source| FeasNetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_params(path: impl AsRef<Path>) -> Result<FeasNetParams, FeasNetError> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|source| FeasNetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    params_from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{sample_dataset, ArchetypeKind, LabelConfig, PolicyArchetype};
    use crate::terrain::{TerrainFamily, TerrainSpec, DEFAULT_RESOLUTION};

    fn bumpy(seed: u64) -> HeightPatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..PATCH_DIM).map(|_| rng.random_range(-0.1..0.1)).collect();
        HeightPatch::from_values(DEFAULT_RESOLUTION, 0.0, v)
    }

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                patch: bumpy(i as u64),
                task: TaskVector::forward(),
                label: 0.2 + 0.15 * i as f64,
            })
            .collect()
    }

    #[test]
    fn zero_network_predicts_one_half() {
        let p = FeasNetParams::zeros();
        assert_eq!(predict_feasibility(&p, &bumpy(1), &TaskVector::forward()).unwrap(), 0.5);
    }

    #[test]
    fn prediction_is_deterministic() {
        let p = FeasNetParams::init(4);
        let a = predict_feasibility(&p, &bumpy(2), &TaskVector::forward()).unwrap();
        let b = predict_feasibility(&p, &bumpy(2), &TaskVector::forward()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn zero_noise_gives_mu_and_zero_decoder_gives_bias() {
        let mut p = FeasNetParams::init(5);
        let out = vae_forward(&p, &bumpy(3), &[0.0; LATENT]).unwrap();
        let (_, recon) = decode(&p, &out.mu);
        assert_eq!(out.recon, recon);

        for l in [DEC0, DEC1] {
            p.layers[l].weights.iter_mut().for_each(|w| *w = 0.0);
        }
        p.layers[DEC1].bias.iter_mut().enumerate().for_each(|(i, b)| *b = i as f64 * 0.01);
        let out = vae_forward(&p, &bumpy(3), &[0.7; LATENT]).unwrap();
        assert_eq!(out.recon, p.layers[DEC1].bias);
    }

    #[test]
    fn kl_closed_form() {
        assert_eq!(kl_divergence(&[0.0; LATENT], &[0.0; LATENT]), 0.0);
        let mut mu = [0.0; LATENT];
        mu[0] = 1.0;
        assert_eq!(kl_divergence(&mu, &[0.0; LATENT]), 0.5);
    }

    #[test]
    fn single_sample_kl_loss() {
        // encoder emits mu = e0, logvar = 0; decoder and head reproduce targets
        let mut p = FeasNetParams::zeros();
        p.layers[ENC_MU].bias[0] = 1.0;
        let flat = HeightPatch::flat(DEFAULT_RESOLUTION);
        let batch = [Sample {
            patch: flat,
            task: TaskVector::forward(),
            label: 0.5,
        }];
        let parts = loss(&p, &batch, &[[0.0; LATENT]], &TrainConfig::default()).unwrap();
        assert_eq!(parts.kl, 0.5);
        assert_eq!(parts.feas, 0.0);
        assert_eq!(parts.recon, 0.0);
        assert!((parts.total - 2.5e-4).abs() < 1e-18);

        p.layers[ENC_MU].bias[0] = 0.0;
        let parts = loss(&p, &batch, &[[0.0; LATENT]], &TrainConfig::default()).unwrap();
        assert_eq!(parts.total, 0.0);
    }

    #[test]
    fn loss_bookkeeping() {
        let cfg = TrainConfig {
            alpha: 0.7,
            beta: 0.3,
            ..Default::default()
        };
        let p = FeasNetParams::init(6);
        let batch = samples(4);
        let noise: Vec<_> = (0..4).map(|i| [0.1 * i as f64; LATENT]).collect();
        let l = loss(&p, &batch, &noise, &cfg).unwrap();
        assert_eq!(l.total, l.feas + cfg.alpha * (l.recon + cfg.beta * l.kl));
        assert!(l.total >= l.feas && l.kl >= 0.0);
        assert!(matches!(loss(&p, &[], &[], &cfg), Err(FeasNetError::EmptyBatch)));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let batch = samples(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise: Vec<_> = (0..3).map(|_| draw_noise(&mut rng)).collect();
        let err = grad_check(&FeasNetParams::init(1), &batch, &noise, &TrainConfig::default(), 300, 2).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_network_grad_check() {
        let batch: Vec<Sample> = samples(2)
            .into_iter()
            .map(|s| Sample { label: 0.0, ..s })
            .collect();
        let noise = vec![[0.0; LATENT]; 2];
        let err = grad_check(&FeasNetParams::zeros(), &batch, &noise, &TrainConfig::default(), 200, 3).unwrap();
        assert!(err.is_finite() && err < 1e-4, "{err}");
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let data = samples(8);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 4,
            epochs: 3,
            ..Default::default()
        };
        let p0 = FeasNetParams::init(2);
        let (p1, hist) = train(&p0, &data, &cfg).unwrap();
        assert_eq!(p0, p1);
        assert!(hist.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let arch = PolicyArchetype::new(0, ArchetypeKind::StepsExpert);
        let spec = TerrainSpec::new(TerrainFamily::Steps, (3.0, 1.5));
        let data = sample_dataset(&arch, &[spec], 256, 1, &LabelConfig::default()).unwrap();
        let cfg = TrainConfig {
            batch_size: 64,
            epochs: 4,
            seed: 3,
            ..Default::default()
        };
        let p0 = FeasNetParams::init(7);
        let (a, ha) = train(&p0, &data, &cfg).unwrap();
        let (b, hb) = train(&p0, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!(ha.last().unwrap().total < ha[0].total);
        assert!(train(&p0, &data[..10], &cfg).is_err());
    }

    #[test]
    fn non_finite_loss_names_component() {
        let mut p = FeasNetParams::init(1);
        p.layers[ENC_LV].bias[0] = 1e6;
        let cfg = TrainConfig {
            batch_size: 2,
            epochs: 1,
            ..Default::default()
        };
        match train(&p, &samples(2), &cfg) {
            Err(FeasNetError::NonFinite { component, epoch: 0 }) => assert_eq!(component, "kl"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weight_file_round_trip_and_errors() {
        let p = FeasNetParams::init(8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.fnet");
        save_params(&p, &path).unwrap();
        assert_eq!(load_params(&path).unwrap(), p);

        let bytes = params_to_bytes(&p);
        assert!(matches!(params_from_bytes(&bytes[..bytes.len() - 3]), Err(FeasNetError::Format(_))));
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        let err = params_from_bytes(&wrong).unwrap_err();
        assert!(matches!(err, FeasNetError::Version { found: 9, expected: 1 }));
        assert!(err.to_string().contains('9') && err.to_string().contains('1'));
        let mut shape = bytes;
        shape[10] = 7;
        assert!(matches!(params_from_bytes(&shape), Err(FeasNetError::Format(_))));
    }

    #[test]
    fn reconstruction_error_is_deterministic_and_non_negative() {
        let p = FeasNetParams::init(3);
        let a = reconstruction_error(&p, &bumpy(4)).unwrap();
        assert_eq!(a.to_bits(), reconstruction_error(&p, &bumpy(4)).unwrap().to_bits());
        assert!(a >= 0.0);
        assert_eq!(reconstruction_error(&FeasNetParams::zeros(), &HeightPatch::flat(DEFAULT_RESOLUTION)).unwrap(), 0.0);
    }
}
