//! Fall-detection recurrent network.
//!
//! Per time step: dense (18→16) → batch norm → dropout → LSTM → dropout →
//! LSTM → dropout → dense (16→2) → softmax. Dropout is active only in
//! training. Batch norm uses batch statistics over every valid (sequence,
//! step) pair while training and frozen running moments at inference.
//!
//! Training minimises the mean per-step cross-entropy with backpropagation
//! through time over whole sequences. Per-sequence work runs in parallel;
//! gradient reduction happens in batch order so results are bit-identical
//! regardless of thread count.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{invalid, Error, Result};
use crate::features::{StandardizationStats, FDNN_WIDTH};

pub const CLASSES: usize = 2;
const CHECKPOINT_MAGIC: &[u8; 8] = b"FDNNCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub name: String,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            name: "adam".into(),
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdnnConfig {
    pub input_dim: usize,
    pub fc1_units: usize,
    pub inner_dim: usize,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub threshold: f64,
    pub seed: u64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for FdnnConfig {
    fn default() -> Self {
        Self {
            input_dim: FDNN_WIDTH,
            fc1_units: 16,
            inner_dim: 16,
            dropout_rate: 0.5,
            batch_size: 128,
            epochs: 64,
            threshold: 0.5,
            seed: 0,
            bn_momentum: 0.9,
            bn_epsilon: 1e-5,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl FdnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.fc1_units == 0 || self.inner_dim == 0 {
            return Err(invalid("layer sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(invalid("threshold must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_epsilon > 0.0) {
            return Err(invalid("bad batch-norm settings"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.w.chunks_exact(self.inputs).zip(&self.b)) {
            *o = b + dot(row, x);
        }
    }

    /// Accumulates parameter gradients and, if given, the input gradient.
    fn backward(&self, grad: &mut Dense, x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        for (o, &g) in dy.iter().enumerate() {
            grad.b[o] += g;
            let row = &mut grad.w[o * self.inputs..(o + 1) * self.inputs];
            for (r, xi) in row.iter_mut().zip(x) {
                *r += g * xi;
            }
        }
        if let Some(dx) = dx {
            dx.fill(0.0);
            for (o, &g) in dy.iter().enumerate() {
                let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// LSTM layer; gate blocks ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub inputs: usize,
    pub hidden: usize,
    /// `4·hidden × inputs`
    pub w_x: Vec<f64>,
    /// `4·hidden × hidden`
    pub w_h: Vec<f64>,
    pub b: Vec<f64>,
}

impl Lstm {
    fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            inputs,
            hidden,
            w_x: vec![0.0; 4 * hidden * inputs],
            w_h: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
        }
    }

    /// One step. `gates` receives the activated gate values (i, f, g, o).
    fn step(&self, x: &[f64], h: &mut [f64], c: &mut [f64], gates: &mut [f64]) {
        let hd = self.hidden;
        for k in 0..4 * hd {
            let wx = &self.w_x[k * self.inputs..(k + 1) * self.inputs];
            let wh = &self.w_h[k * hd..(k + 1) * hd];
            gates[k] = self.b[k] + dot(wx, x) + dot(wh, h);
        }
        for j in 0..hd {
            let i = sigmoid(gates[j]);
            let f = sigmoid(gates[hd + j]);
            let g = gates[2 * hd + j].tanh();
            let o = sigmoid(gates[3 * hd + j]);
            gates[j] = i;
            gates[hd + j] = f;
            gates[2 * hd + j] = g;
            gates[3 * hd + j] = o;
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdnnParams {
    pub fc1: Dense,
    pub bn: BatchNorm,
    pub lstm1: Lstm,
    pub lstm2: Lstm,
    pub fc2: Dense,
}

pub const TENSOR_NAMES: [&str; 12] = [
    "fc1.w", "fc1.b", "bn.gamma", "bn.beta", "lstm1.w_x", "lstm1.w_h", "lstm1.b", "lstm2.w_x", "lstm2.w_h",
    "lstm2.b", "fc2.w", "fc2.b",
];

impl FdnnParams {
    pub fn zeros(cfg: &FdnnConfig) -> Self {
        let u = cfg.fc1_units;
        Self {
            fc1: Dense::zeros(cfg.input_dim, u),
            bn: BatchNorm {
                gamma: vec![0.0; u],
                beta: vec![0.0; u],
                running_mean: vec![0.0; u],
                running_var: vec![1.0; u],
            },
            lstm1: Lstm::zeros(u, cfg.inner_dim),
            lstm2: Lstm::zeros(cfg.inner_dim, cfg.inner_dim),
            fc2: Dense::zeros(cfg.inner_dim, CLASSES),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc1.inputs
    }

    /// Trainable tensors in `TENSOR_NAMES` order.
    pub fn tensors(&self) -> [&Vec<f64>; 12] {
        [
            &self.fc1.w,
            &self.fc1.b,
            &self.bn.gamma,
            &self.bn.beta,
            &self.lstm1.w_x,
            &self.lstm1.w_h,
            &self.lstm1.b,
            &self.lstm2.w_x,
            &self.lstm2.w_h,
            &self.lstm2.b,
            &self.fc2.w,
            &self.fc2.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 12] {
        [
            &mut self.fc1.w,
            &mut self.fc1.b,
            &mut self.bn.gamma,
            &mut self.bn.beta,
            &mut self.lstm1.w_x,
            &mut self.lstm1.w_h,
            &mut self.lstm1.b,
            &mut self.lstm2.w_x,
            &mut self.lstm2.w_h,
            &mut self.lstm2.b,
            &mut self.fc2.w,
            &mut self.fc2.b,
        ]
    }

    fn add_assign(&mut self, other: &FdnnParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Everything, including running moments, flattened for checkpoints.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.tensors().iter().flat_map(|t| t.iter().copied()).collect();
        out.extend_from_slice(&self.bn.running_mean);
        out.extend_from_slice(&self.bn.running_var);
        out
    }

    pub fn unflatten(cfg: &FdnnConfig, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(cfg);
        let expected = p.flatten().len();
        if flat.len() != expected {
            return Err(Error::Checkpoint(format!(
                "payload holds {} values, shapes need {expected}",
                flat.len()
            )));
        }
        let mut at = 0;
        for t in p.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        let u = p.bn.running_mean.len();
        p.bn.running_mean.copy_from_slice(&flat[at..at + u]);
        p.bn.running_var.copy_from_slice(&flat[at + u..at + 2 * u]);
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Two-class softmax.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Uniform fan-in scaled weights in `±1/√fan_in`, zero biases, LSTM
/// forget-gate bias 1, identity batch norm.
pub fn init_params(cfg: &FdnnConfig, seed: u64) -> FdnnParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = FdnnParams::zeros(cfg);
    let fill = |w: &mut [f64], fan_in: usize, rng: &mut ChaCha8Rng| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        w.iter_mut().for_each(|v| *v = rng.random_range(-bound..=bound));
    };
    fill(&mut p.fc1.w, cfg.input_dim, &mut rng);
    let l1_fan = cfg.fc1_units + cfg.inner_dim;
    fill(&mut p.lstm1.w_x, l1_fan, &mut rng);
    fill(&mut p.lstm1.w_h, l1_fan, &mut rng);
    let l2_fan = 2 * cfg.inner_dim;
    fill(&mut p.lstm2.w_x, l2_fan, &mut rng);
    fill(&mut p.lstm2.w_h, l2_fan, &mut rng);
    fill(&mut p.fc2.w, cfg.inner_dim, &mut rng);
    p.bn.gamma.fill(1.0);
    let h = cfg.inner_dim;
    p.lstm1.b[h..2 * h].fill(1.0);
    p.lstm2.b[h..2 * h].fill(1.0);
    p
}

/// Probability of falling at each step plus thresholded decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrace {
    pub p_falling: Vec<f64>,
    pub decisions: Vec<bool>,
}

/// Strictly greater than the threshold counts as falling.
pub fn classify(p_falling: &[f64], threshold: f64) -> Vec<bool> {
    p_falling.iter().map(|p| *p > threshold).collect()
}

/// Recurrent state of both LSTM layers, zero at sequence start.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h1: Vec<f64>,
    pub c1: Vec<f64>,
    pub h2: Vec<f64>,
    pub c2: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h1: vec![0.0; hidden],
            c1: vec![0.0; hidden],
            h2: vec![0.0; hidden],
            c2: vec![0.0; hidden],
        }
    }
}

/// Inference one step at a time. Offline inference runs through the same
/// code path, so streamed and batch outputs agree bit for bit.
#[derive(Debug, Clone)]
pub struct FdnnStepper<'a> {
    params: &'a FdnnParams,
    epsilon: f64,
    pub state: LstmState,
    z: Vec<f64>,
    gates: Vec<f64>,
}

impl<'a> FdnnStepper<'a> {
    pub fn new(params: &'a FdnnParams, bn_epsilon: f64) -> Self {
        let h = params.lstm1.hidden;
        Self {
            params,
            epsilon: bn_epsilon,
            state: LstmState::zeros(h),
            z: vec![0.0; params.fc1.outputs],
            gates: vec![0.0; 4 * h],
        }
    }

    pub fn reset(&mut self) {
        self.state = LstmState::zeros(self.params.lstm1.hidden);
    }

    /// Returns both class probabilities for one standardized input vector.
    pub fn step(&mut self, x: &[f64]) -> Result<[f64; 2]> {
        let p = self.params;
        if x.len() != p.input_dim() {
            return Err(invalid(format!("input width {} != {}", x.len(), p.input_dim())));
        }
        p.fc1.forward(x, &mut self.z);
        for j in 0..self.z.len() {
            let inv = 1.0 / (p.bn.running_var[j] + self.epsilon).sqrt();
            self.z[j] = p.bn.gamma[j] * (self.z[j] - p.bn.running_mean[j]) * inv + p.bn.beta[j];
        }
        let s = &mut self.state;
        p.lstm1.step(&self.z, &mut s.h1, &mut s.c1, &mut self.gates);
        p.lstm2.step(&s.h1, &mut s.h2, &mut s.c2, &mut self.gates);
        let mut logits = [0.0; 2];
        p.fc2.forward(&s.h2, &mut logits);
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("detector logits"));
        }
        Ok(softmax2(logits))
    }
}

/// Inference-mode forward over one sequence.
pub fn forward_infer(params: &FdnnParams, cfg: &FdnnConfig, sequence: &[Vec<f64>]) -> Result<PredictionTrace> {
    let mut stepper = FdnnStepper::new(params, cfg.bn_epsilon);
    let mut p_falling = Vec::with_capacity(sequence.len());
    for x in sequence {
        p_falling.push(stepper.step(x)?[1]);
    }
    let decisions = classify(&p_falling, cfg.threshold);
    Ok(PredictionTrace { p_falling, decisions })
}

/// Concatenates the four static inputs onto each 14-channel step.
pub fn assemble_inputs(statics: &[f64], sequence: &[Vec<f64>]) -> Vec<Vec<f64>> {
    sequence
        .iter()
        .map(|d| statics.iter().chain(d.iter()).copied().collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub id: String,
    /// Standardized inputs, one row per step.
    pub inputs: Vec<Vec<f64>>,
    /// `true` where the step is labelled FALL.
    pub labels: Vec<bool>,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Sequences padded to the batch's longest length. Each mask row must be a
/// run of `true` followed only by `false`.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub inputs: Vec<Vec<Vec<f64>>>,
    pub labels: Vec<Vec<bool>>,
    pub mask: Vec<Vec<bool>>,
}

impl PaddedBatch {
    pub fn from_sequences(seqs: &[&LabeledSequence], width: usize) -> Self {
        let t = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut b = PaddedBatch {
            inputs: Vec::with_capacity(seqs.len()),
            labels: Vec::with_capacity(seqs.len()),
            mask: Vec::with_capacity(seqs.len()),
        };
        for s in seqs {
            let mut x = s.inputs.clone();
            x.resize(t, vec![0.0; width]);
            let mut y = s.labels.clone();
            y.resize(t, false);
            let mut m = vec![true; s.len()];
            m.resize(t, false);
            b.inputs.push(x);
            b.labels.push(y);
            b.mask.push(m);
        }
        b
    }

    fn valid_lengths(&self) -> Result<Vec<usize>> {
        self.mask
            .iter()
            .map(|m| {
                let len = m.iter().take_while(|v| **v).count();
                if m[len..].iter().any(|v| *v) {
                    return Err(invalid("mask must be a valid prefix followed by padding"));
                }
                Ok(len)
            })
            .collect()
    }
}

/// Forward/backward products of one training batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub grads: FdnnParams,
    pub valid_steps: usize,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

struct SequencePass {
    loss: f64,
    d_bn_out: Vec<Vec<f64>>,
    lstm1: Lstm,
    lstm2: Lstm,
    fc2: Dense,
}

fn dropout_mask(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<f64> {
    if rate == 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

struct LstmCache {
    x: Vec<Vec<f64>>,
    gates: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

fn lstm_forward_seq(l: &Lstm, xs: Vec<Vec<f64>>) -> LstmCache {
    let hd = l.hidden;
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut cache = LstmCache {
        gates: Vec::with_capacity(xs.len()),
        c: Vec::with_capacity(xs.len()),
        h: Vec::with_capacity(xs.len()),
        x: xs,
    };
    for x in &cache.x {
        let mut g = vec![0.0; 4 * hd];
        l.step(x, &mut h, &mut c, &mut g);
        cache.gates.push(g);
        cache.c.push(c.clone());
        cache.h.push(h.clone());
    }
    cache
}

/// BPTT through one LSTM layer; returns input gradients.
fn lstm_backward_seq(l: &Lstm, grad: &mut Lstm, cache: &LstmCache, dh_out: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let hd = l.hidden;
    let n = cache.x.len();
    let zeros = vec![0.0; hd];
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut dx_all = vec![vec![0.0; l.inputs]; n];
    let mut da = vec![0.0; 4 * hd];
    for t in (0..n).rev() {
        let g = &cache.gates[t];
        let c = &cache.c[t];
        let c_prev = if t > 0 { &cache.c[t - 1] } else { &zeros };
        let h_prev = if t > 0 { &cache.h[t - 1] } else { &zeros };
        for j in 0..hd {
            let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
            let tc = c[j].tanh();
            let dh = dh_out[t][j] + dh_next[j];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            da[j] = dc * gg * i * (1.0 - i);
            da[hd + j] = dc * c_prev[j] * f * (1.0 - f);
            da[2 * hd + j] = dc * i * (1.0 - gg * gg);
            da[3 * hd + j] = d_o * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        let x = &cache.x[t];
        dh_next.fill(0.0);
        let dx = &mut dx_all[t];
        for (k, &d) in da.iter().enumerate() {
            grad.b[k] += d;
            let wx_row = &l.w_x[k * l.inputs..(k + 1) * l.inputs];
            let gx_row = &mut grad.w_x[k * l.inputs..(k + 1) * l.inputs];
            for ((gw, xi), (dxi, w)) in gx_row.iter_mut().zip(x).zip(dx.iter_mut().zip(wx_row)) {
                *gw += d * xi;
                *dxi += d * w;
            }
            let wh_row = &l.w_h[k * hd..(k + 1) * hd];
            let gh_row = &mut grad.w_h[k * hd..(k + 1) * hd];
            for ((gw, hp), (dhn, w)) in gh_row.iter_mut().zip(h_prev).zip(dh_next.iter_mut().zip(wh_row)) {
                *gw += d * hp;
                *dhn += d * w;
            }
        }
    }
    dx_all
}

fn sequence_pass(
    p: &FdnnParams,
    bn_out: &[Vec<f64>],
    labels: &[bool],
    rate: f64,
    rng: &mut ChaCha8Rng,
    inv_n: f64,
) -> Result<SequencePass> {
    let hd = p.lstm1.hidden;
    let t_len = bn_out.len();
    let m1: Vec<Vec<f64>> = (0..t_len).map(|_| dropout_mask(rng, bn_out[0].len(), rate)).collect();
    let m2: Vec<Vec<f64>> = (0..t_len).map(|_| dropout_mask(rng, hd, rate)).collect();
    let m3: Vec<Vec<f64>> = (0..t_len).map(|_| dropout_mask(rng, hd, rate)).collect();
    let apply = |v: &[f64], m: &[f64]| -> Vec<f64> { v.iter().zip(m).map(|(a, b)| a * b).collect() };

    let x1: Vec<Vec<f64>> = bn_out.iter().zip(&m1).map(|(v, m)| apply(v, m)).collect();
    let c1 = lstm_forward_seq(&p.lstm1, x1);
    let x2: Vec<Vec<f64>> = c1.h.iter().zip(&m2).map(|(v, m)| apply(v, m)).collect();
    let c2 = lstm_forward_seq(&p.lstm2, x2);
    let x3: Vec<Vec<f64>> = c2.h.iter().zip(&m3).map(|(v, m)| apply(v, m)).collect();

    let mut fc2 = Dense::zeros(hd, CLASSES);
    let mut loss = 0.0;
    let mut dh2 = vec![vec![0.0; hd]; t_len];
    let mut logits = [0.0; 2];
    for t in 0..t_len {
        p.fc2.forward(&x3[t], &mut logits);
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("detector logits"));
        }
        let prob = softmax2(logits);
        let y = labels[t] as usize;
        loss -= prob[y].max(f64::MIN_POSITIVE).ln();
        let mut dl = [prob[0] * inv_n, prob[1] * inv_n];
        dl[y] -= inv_n;
        let mut dx3 = vec![0.0; hd];
        p.fc2.backward(&mut fc2, &x3[t], &dl, Some(&mut dx3));
        for j in 0..hd {
            dh2[t][j] = dx3[j] * m3[t][j];
        }
    }
    let mut lstm2 = Lstm::zeros(p.lstm2.inputs, hd);
    let dx2 = lstm_backward_seq(&p.lstm2, &mut lstm2, &c2, &dh2);
    let dh1: Vec<Vec<f64>> = dx2.iter().zip(&m2).map(|(v, m)| apply(v, m)).collect();
    let mut lstm1 = Lstm::zeros(p.lstm1.inputs, hd);
    let dx1 = lstm_backward_seq(&p.lstm1, &mut lstm1, &c1, &dh1);
    let d_bn_out = dx1.iter().zip(&m1).map(|(v, m)| apply(v, m)).collect();
    Ok(SequencePass {
        loss,
        d_bn_out,
        lstm1,
        lstm2,
        fc2,
    })
}

/// Mean per-step cross-entropy over all unmasked steps and its gradient
/// with respect to every trainable tensor (train mode: batch statistics and
/// dropout drawn from `dropout_seed`, one RNG stream per sequence).
pub fn loss_and_gradients(
    params: &FdnnParams,
    cfg: &FdnnConfig,
    batch: &PaddedBatch,
    dropout_seed: u64,
) -> Result<BatchGradients> {
    let lens = batch.valid_lengths()?;
    let n: usize = lens.iter().sum();
    if n == 0 {
        return Err(invalid("batch has no valid steps"));
    }
    let width = params.input_dim();
    let u = params.fc1.outputs;
    for (b, &len) in lens.iter().enumerate() {
        if batch.inputs[b][..len].iter().any(|x| x.len() != width) {
            return Err(invalid(format!("input width != {width}")));
        }
    }

    // dense layer and batch statistics over every valid step
    let mut z: Vec<Vec<Vec<f64>>> = Vec::with_capacity(lens.len());
    let mut mean = vec![0.0; u];
    for (b, &len) in lens.iter().enumerate() {
        let mut zs = Vec::with_capacity(len);
        for t in 0..len {
            let mut out = vec![0.0; u];
            params.fc1.forward(&batch.inputs[b][t], &mut out);
            for (m, v) in mean.iter_mut().zip(&out) {
                *m += v;
            }
            zs.push(out);
        }
        z.push(zs);
    }
    let nf = n as f64;
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![0.0; u];
    for zs in &z {
        for v in zs {
            for j in 0..u {
                var[j] += (v[j] - mean[j]) * (v[j] - mean[j]);
            }
        }
    }
    var.iter_mut().for_each(|v| *v /= nf);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + cfg.bn_epsilon).sqrt()).collect();
    let xhat: Vec<Vec<Vec<f64>>> = z
        .iter()
        .map(|zs| {
            zs.iter()
                .map(|v| (0..u).map(|j| (v[j] - mean[j]) * inv_std[j]).collect())
                .collect()
        })
        .collect();
    let bn_out: Vec<Vec<Vec<f64>>> = xhat
        .iter()
        .map(|xs| {
            xs.iter()
                .map(|v| (0..u).map(|j| params.bn.gamma[j] * v[j] + params.bn.beta[j]).collect())
                .collect()
        })
        .collect();

    let passes: Vec<Result<SequencePass>> = (0..lens.len())
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            rng.set_stream(b as u64);
            sequence_pass(params, &bn_out[b], &batch.labels[b][..lens[b]], cfg.dropout_rate, &mut rng, 1.0 / nf)
        })
        .collect();

    let mut grads = FdnnParams::zeros(&FdnnConfig {
        input_dim: width,
        fc1_units: u,
        inner_dim: params.lstm1.hidden,
        ..cfg.clone()
    });
    let mut loss = 0.0;
    let mut d_bn: Vec<Vec<Vec<f64>>> = Vec::with_capacity(lens.len());
    for pass in passes {
        let pass = pass?;
        loss += pass.loss;
        let mut partial = FdnnParams::zeros(&FdnnConfig {
            input_dim: width,
            fc1_units: u,
            inner_dim: params.lstm1.hidden,
            ..cfg.clone()
        });
        partial.lstm1 = pass.lstm1;
        partial.lstm2 = pass.lstm2;
        partial.fc2 = pass.fc2;
        grads.add_assign(&partial);
        d_bn.push(pass.d_bn_out);
    }

    // batch-norm backward over all valid steps
    let mut sum_dxhat = vec![0.0; u];
    let mut sum_dxhat_xhat = vec![0.0; u];
    for (b, ds) in d_bn.iter().enumerate() {
        for (t, dy) in ds.iter().enumerate() {
            for j in 0..u {
                grads.bn.gamma[j] += dy[j] * xhat[b][t][j];
                grads.bn.beta[j] += dy[j];
                let dxh = dy[j] * params.bn.gamma[j];
                sum_dxhat[j] += dxh;
                sum_dxhat_xhat[j] += dxh * xhat[b][t][j];
            }
        }
    }
    let mut dz = vec![0.0; u];
    for (b, ds) in d_bn.iter().enumerate() {
        for (t, dy) in ds.iter().enumerate() {
            for j in 0..u {
                let dxh = dy[j] * params.bn.gamma[j];
                dz[j] = inv_std[j] / nf * (nf * dxh - sum_dxhat[j] - xhat[b][t][j] * sum_dxhat_xhat[j]);
            }
            params.fc1.backward(&mut grads.fc1, &batch.inputs[b][t], &dz, None);
        }
    }

    Ok(BatchGradients {
        loss: loss / nf,
        grads,
        valid_steps: n,
        batch_mean: mean,
        batch_var: var,
    })
}

pub trait Optimizer: Send {
    fn name(&self) -> &'static str;
    fn step(&mut self, params: &mut FdnnParams, grads: &FdnnParams);
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &OptimizerConfig, params: &FdnnParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, params: &mut FdnnParams, grads: &FdnnParams) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            for i in 0..p.len() {
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g[i];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

pub struct Sgd {
    lr: f64,
}

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, params: &mut FdnnParams, grads: &FdnnParams) {
        for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
            for (a, b) in p.iter_mut().zip(g) {
                *a -= self.lr * b;
            }
        }
    }
}

type OptimizerFactory = fn(&OptimizerConfig, &FdnnParams) -> Box<dyn Optimizer>;

/// Optimizers selectable by `optimizer.name` in the config.
pub struct OptimizerRegistry {
    factories: BTreeMap<&'static str, OptimizerFactory>,
}

impl Default for OptimizerRegistry {
    fn default() -> Self {
        let mut factories: BTreeMap<&'static str, OptimizerFactory> = BTreeMap::new();
        factories.insert("adam", |c, p| Box::new(Adam::new(c, p)));
        factories.insert("sgd", |c, _| Box::new(Sgd { lr: c.learning_rate }));
        Self { factories }
    }
}

impl OptimizerRegistry {
    pub fn register(&mut self, name: &'static str, f: OptimizerFactory) {
        self.factories.insert(name, f);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn create(&self, cfg: &OptimizerConfig, params: &FdnnParams) -> Result<Box<dyn Optimizer>> {
        let f = self.factories.get(cfg.name.as_str()).ok_or_else(|| Error::UnknownStrategy {
            kind: "optimizer",
            name: cfg.name.clone(),
        })?;
        Ok(f(cfg, params))
    }
}

fn clip_gradients(grads: &mut FdnnParams, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= s);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct_steps: usize,
    pub total_steps: usize,
    pub correct_sequences: usize,
    pub total_sequences: usize,
}

impl Accuracy {
    pub fn sample_accuracy(&self) -> f64 {
        if self.total_steps == 0 {
            0.0
        } else {
            self.correct_steps as f64 / self.total_steps as f64
        }
    }

    /// A sequence counts as correct when "any step flagged" matches
    /// "any step labelled FALL".
    pub fn sequence_accuracy(&self) -> f64 {
        if self.total_sequences == 0 {
            0.0
        } else {
            self.correct_sequences as f64 / self.total_sequences as f64
        }
    }
}

pub fn evaluate(params: &FdnnParams, cfg: &FdnnConfig, seqs: &[LabeledSequence]) -> Result<Accuracy> {
    let traces: Vec<Result<PredictionTrace>> =
        seqs.par_iter().map(|s| forward_infer(params, cfg, &s.inputs)).collect();
    let mut acc = Accuracy::default();
    for (s, tr) in seqs.iter().zip(traces) {
        let tr = tr?;
        acc.correct_steps += tr.decisions.iter().zip(&s.labels).filter(|(d, l)| d == l).count();
        acc.total_steps += s.len();
        let flagged = tr.decisions.iter().any(|d| *d);
        let positive = s.labels.iter().any(|l| *l);
        acc.correct_sequences += (flagged == positive) as usize;
        acc.total_sequences += 1;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_sequence_accuracy: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_accuracy,wall_seconds\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{:.3}\n", e.epoch, e.train_loss, e.val_accuracy, e.wall_seconds));
        }
        s
    }

    pub fn best_val_accuracy(&self) -> f64 {
        self.epochs
            .iter()
            .find(|e| e.epoch == self.best_epoch)
            .map_or(0.0, |e| e.val_accuracy)
    }
}

/// Mini-batch training; returns the snapshot with the highest validation
/// sample accuracy (earliest epoch on ties).
pub fn train(
    cfg: &FdnnConfig,
    train_set: &[LabeledSequence],
    val_set: &[LabeledSequence],
) -> Result<(FdnnParams, TrainingLog)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(invalid("training and validation sets must be non-empty"));
    }
    let mut params = init_params(cfg, cfg.seed);
    let mut optimizer = OptimizerRegistry::default().create(&cfg.optimizer, &params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f00d);
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, FdnnParams)> = None;
    let started = Instant::now();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<&LabeledSequence> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = PaddedBatch::from_sequences(&seqs, params.input_dim());
            let mut g = loss_and_gradients(&params, cfg, &batch, rng.random())?;
            if !g.loss.is_finite() {
                log.epochs.push(EpochLog {
                    epoch,
                    train_loss: g.loss,
                    val_accuracy: f64::NAN,
                    val_sequence_accuracy: f64::NAN,
                    wall_seconds: started.elapsed().as_secs_f64(),
                });
                log::error!("detector training diverged at epoch {epoch}\n{}", log.to_csv());
                return Err(Error::Diverged { epoch, loss: g.loss });
            }
            loss_sum += g.loss * g.valid_steps as f64;
            steps += g.valid_steps;
            clip_gradients(&mut g.grads, cfg.optimizer.clip_norm);
            optimizer.step(&mut params, &g.grads);
            let m = cfg.bn_momentum;
            for j in 0..params.bn.running_mean.len() {
                params.bn.running_mean[j] = m * params.bn.running_mean[j] + (1.0 - m) * g.batch_mean[j];
                params.bn.running_var[j] = m * params.bn.running_var[j] + (1.0 - m) * g.batch_var[j];
            }
        }
        if !params.is_finite() {
            return Err(Error::Diverged { epoch, loss: f64::NAN });
        }
        let acc = evaluate(&params, cfg, val_set)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / steps as f64,
            val_accuracy: acc.sample_accuracy(),
            val_sequence_accuracy: acc.sequence_accuracy(),
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val acc {:.4} (seq {:.4})",
            entry.train_loss,
            entry.val_accuracy,
            entry.val_sequence_accuracy
        );
        if best.as_ref().is_none_or(|(a, _)| entry.val_accuracy > *a) {
            best = Some((entry.val_accuracy, params.clone()));
            log.best_epoch = epoch;
        }
        log.epochs.push(entry);
    }
    let (_, best_params) = best.ok_or_else(|| invalid("epochs must be positive"))?;
    Ok((best_params, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    config: FdnnConfig,
    shapes: Vec<(String, usize)>,
    features: Vec<String>,
    standardizer: Option<StandardizationStats>,
}

/// Detector checkpoint contents: parameters plus the input standardizer.
#[derive(Debug, Clone, PartialEq)]
pub struct FdnnCheckpoint {
    pub config: FdnnConfig,
    pub params: FdnnParams,
    pub standardizer: StandardizationStats,
    pub features: Vec<String>,
}

pub fn save_checkpoint(path: &Path, ckpt: &FdnnCheckpoint) -> Result<()> {
    if ckpt.standardizer.width() != ckpt.params.input_dim() {
        return Err(invalid("standardizer width does not match the input layer"));
    }
    let mut shapes: Vec<(String, usize)> = TENSOR_NAMES
        .iter()
        .zip(ckpt.params.tensors())
        .map(|(n, t)| (n.to_string(), t.len()))
        .collect();
    shapes.push(("bn.running_mean".into(), ckpt.params.bn.running_mean.len()));
    shapes.push(("bn.running_var".into(), ckpt.params.bn.running_var.len()));
    let header = CheckpointHeader {
        kind: "fdnn".into(),
        config: ckpt.config.clone(),
        shapes,
        features: ckpt.features.clone(),
        standardizer: Some(ckpt.standardizer.clone()),
    };
    checkpoint::write(path, CHECKPOINT_MAGIC, &serde_json::to_value(header)?, &ckpt.params.flatten())
}

pub fn load_checkpoint(path: &Path) -> Result<FdnnCheckpoint> {
    let (header, payload) = checkpoint::read(path, CHECKPOINT_MAGIC)?;
    decode_checkpoint(header, &payload)
}

fn decode_checkpoint(header: serde_json::Value, payload: &[f64]) -> Result<FdnnCheckpoint> {
    let header: CheckpointHeader =
        serde_json::from_value(header).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if header.kind != "fdnn" {
        return Err(Error::Checkpoint(format!("kind `{}` is not fdnn", header.kind)));
    }
    let standardizer = header
        .standardizer
        .ok_or_else(|| Error::Checkpoint("missing standardizer block".into()))?;
    let params = FdnnParams::unflatten(&header.config, payload)?;
    if standardizer.width() != params.input_dim() {
        return Err(Error::Checkpoint("standardizer width does not match the input layer".into()));
    }
    if params.bn.running_var.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Checkpoint("non-positive running variance".into()));
    }
    Ok(FdnnCheckpoint {
        config: header.config,
        params,
        standardizer,
        features: header.features,
    })
}
