//! Kolmogorov–Arnold time-of-impact regressor.
//!
//! The model is `ŷ = Σ_j Φ_j(Σ_i φ_ij(x_i))` with `2d+1` outer branches, all
//! functions piecewise linear on fixed grids. Training is the
//! Newton–Kaczmarz scheme: one projected Gauss–Newton step per record over
//! the node values that are active for that record.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{invalid, Error, Result};
use crate::features::{FallSegment, Signal, StandardizationStats};
use crate::sisfall::{SubjectId, SAMPLE_PERIOD_MS};

/// Added to `gᵀg` in the Kaczmarz step.
pub const KACZMARZ_LAMBDA: f64 = 1e-12;
const CHECKPOINT_MAGIC: &[u8; 8] = b"KANCKPT\0";
const INNER_RANGE: f64 = 3.0;
const INNER_INIT_NOISE: f64 = 0.01;

/// Linear interpolation on a strictly increasing grid, clamped outside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlFunction {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl PwlFunction {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(invalid("piecewise-linear function needs ≥ 2 nodes and one value per node"));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|g| !g.is_finite()) {
            return Err(invalid("grid must be finite and strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("node values must be finite"));
        }
        Ok(Self { grid, values })
    }

    pub fn uniform(lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(invalid("piecewise-linear function needs ≥ 2 nodes"));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let mut grid: Vec<f64> = (0..n).map(|k| lo + step * k as f64).collect();
        grid[n - 1] = hi;
        Self::new(grid, values)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Segment index `k` and position `t ∈ [0, 1]` within `[g_k, g_{k+1}]`
    /// after clamping.
    fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.grid.len();
        if !(x > self.grid[0]) {
            return (0, 0.0);
        }
        if x >= self.grid[n - 1] {
            return (n - 2, 1.0);
        }
        let k = self.grid.partition_point(|g| *g <= x) - 1;
        let t = (x - self.grid[k]) / (self.grid[k + 1] - self.grid[k]);
        (k, t)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (k, t) = self.locate(x);
        if t == 0.0 {
            self.values[k]
        } else if t == 1.0 {
            self.values[k + 1]
        } else {
            (1.0 - t) * self.values[k] + t * self.values[k + 1]
        }
    }

    /// Interpolation weights of the two bracketing nodes; they sum to 1.
    pub fn node_weights(&self, x: f64) -> [(usize, f64); 2] {
        let (k, t) = self.locate(x);
        [(k, 1.0 - t), (k + 1, t)]
    }

    /// Derivative in `x`; zero outside the grid where the argument clamps.
    pub fn slope(&self, x: f64) -> f64 {
        let n = self.grid.len();
        if x < self.grid[0] || x > self.grid[n - 1] {
            return 0.0;
        }
        let k = if x == self.grid[n - 1] {
            n - 2
        } else {
            self.grid.partition_point(|g| *g <= x) - 1
        };
        (self.values[k + 1] - self.values[k]) / (self.grid[k + 1] - self.grid[k])
    }
}

pub fn pwl_eval(f: &PwlFunction, x: f64) -> f64 {
    f.eval(x)
}

pub fn pwl_grad_nodes(f: &PwlFunction, x: f64) -> [(usize, f64); 2] {
    f.node_weights(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KanConfig {
    /// Nodes per inner function.
    pub n: usize,
    /// Nodes per outer function.
    pub q: usize,
    /// Kaczmarz step scale.
    pub mu: f64,
    /// Trailing smoothing window over each input, in milliseconds.
    pub window_ms: f64,
    pub epochs: usize,
    pub seed: u64,
    pub standardize_targets: bool,
    pub record_order: String,
    pub features: Vec<Signal>,
}

impl Default for KanConfig {
    fn default() -> Self {
        Self {
            n: 4,
            q: 64,
            mu: 0.0625,
            window_ms: 50.0,
            epochs: 10,
            seed: 0,
            standardize_targets: false,
            record_order: "shuffled".into(),
            features: Signal::IMPACT_DEFAULT.to_vec(),
        }
    }
}

impl KanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.q < 2 {
            return Err(invalid("n and q must be at least 2"));
        }
        if !(self.mu > 0.0 && self.mu < 2.0) {
            return Err(invalid(format!("mu {} not in (0, 2)", self.mu)));
        }
        let steps = self.window_ms / SAMPLE_PERIOD_MS;
        if !(self.window_ms > 0.0) || (steps - steps.round()).abs() > 1e-9 {
            return Err(invalid(format!(
                "window {} ms is not a positive multiple of {SAMPLE_PERIOD_MS} ms",
                self.window_ms
            )));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be positive"));
        }
        if self.features.is_empty() {
            return Err(invalid("at least one input feature is required"));
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms / SAMPLE_PERIOD_MS).round() as usize
    }

    pub fn label(&self) -> String {
        format!("n={} q={} mu={} w={}ms", self.n, self.q, self.mu, self.window_ms)
    }
}

/// Affine map between model output units and milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl Default for TargetScale {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl TargetScale {
    fn to_model(self, y_ms: f64) -> f64 {
        (y_ms - self.mean) / self.std
    }

    fn to_ms(self, raw: f64) -> f64 {
        raw * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanModel {
    pub d: usize,
    /// `inner[j·d + i]` is φ_ij.
    pub inner: Vec<PwlFunction>,
    pub outer: Vec<PwlFunction>,
    pub standardizer: StandardizationStats,
    pub target: TargetScale,
    pub features: Vec<Signal>,
    pub window_ms: f64,
}

impl KanModel {
    pub fn branches(&self) -> usize {
        self.outer.len()
    }

    pub fn inner_fn(&self, i: usize, j: usize) -> &PwlFunction {
        &self.inner[j * self.d + i]
    }

    pub fn validate(&self) -> Result<()> {
        let b = 2 * self.d + 1;
        if self.d == 0 || self.outer.len() != b || self.inner.len() != b * self.d {
            return Err(invalid("model needs 2d+1 outer and (2d+1)·d inner functions"));
        }
        let n = self.inner[0].len();
        let q = self.outer[0].len();
        if self.inner.iter().any(|f| f.len() != n) || self.outer.iter().any(|f| f.len() != q) {
            return Err(invalid("node counts must be uniform"));
        }
        if self.standardizer.width() != self.d || self.features.len() != self.d {
            return Err(invalid("standardizer and feature list must match d"));
        }
        Ok(())
    }

    fn inner_sums(&self, x: &[f64]) -> Vec<f64> {
        (0..self.branches())
            .map(|j| (0..self.d).map(|i| self.inner_fn(i, j).eval(x[i])).sum())
            .collect()
    }

    fn raw_eval(&self, x: &[f64]) -> f64 {
        self.inner_sums(x)
            .iter()
            .zip(&self.outer)
            .map(|(s, f)| f.eval(*s))
            .sum()
    }

    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(invalid(format!("input width {} != {}", x.len(), self.d)));
        }
        Ok(())
    }

    /// Flat parameter layout: every inner function's values, then every
    /// outer function's values.
    pub fn parameters(&self) -> Vec<f64> {
        self.inner
            .iter()
            .chain(&self.outer)
            .flat_map(|f| f.values.iter().copied())
            .collect()
    }

    pub fn set_parameters(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.parameters().len() {
            return Err(invalid("parameter count mismatch"));
        }
        let mut at = 0;
        for f in self.inner.iter_mut().chain(self.outer.iter_mut()) {
            let n = f.values.len();
            f.values.copy_from_slice(&p[at..at + n]);
            at += n;
        }
        Ok(())
    }

    fn outer_offset(&self) -> usize {
        self.inner.iter().map(|f| f.len()).sum()
    }

    /// Raw output and its sparse gradient over the flat parameter layout.
    pub fn gradient(&self, x: &[f64]) -> Result<(f64, Vec<(usize, f64)>)> {
        self.check_width(x)?;
        let n = self.inner[0].len();
        let q = self.outer[0].len();
        let off = self.outer_offset();
        let sums = self.inner_sums(x);
        let mut value = 0.0;
        let mut grad = Vec::with_capacity(self.branches() * 2 * (self.d + 1));
        for (j, (s, f)) in sums.iter().zip(&self.outer).enumerate() {
            value += f.eval(*s);
            for (k, w) in f.node_weights(*s) {
                grad.push((off + j * q + k, w));
            }
            let slope = f.slope(*s);
            for i in 0..self.d {
                let base = (j * self.d + i) * n;
                for (k, w) in self.inner_fn(i, j).node_weights(x[i]) {
                    grad.push((base + k, slope * w));
                }
            }
        }
        Ok((value, grad))
    }

    fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let n = self.inner[0].len();
        let off = self.outer_offset();
        if idx < off {
            &mut self.inner[idx / n].values[idx % n]
        } else {
            let q = self.outer[0].len();
            &mut self.outer[(idx - off) / q].values[(idx - off) % q]
        }
    }

    /// Standardizes a raw (smoothed) feature vector with the model's stats.
    pub fn standardize(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.check_width(raw)?;
        Ok(self.standardizer.apply_row(raw))
    }
}

/// Model output in milliseconds for an already standardized input; may be
/// negative.
pub fn kan_eval(m: &KanModel, x: &[f64]) -> Result<f64> {
    m.check_width(x)?;
    Ok(m.target.to_ms(m.raw_eval(x)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    /// Residual before the update, in milliseconds.
    pub residual: f64,
    /// All active slopes were zero, so nothing moved.
    pub degenerate: bool,
}

/// One Kaczmarz projection for a single record:
/// `p ← p + μ·r·g / (gᵀg + λ)` over the active node values.
pub fn kaczmarz_update(m: &mut KanModel, x: &[f64], y_ms: f64, mu: f64) -> Result<UpdateOutcome> {
    let (value, grad) = m.gradient(x)?;
    let r = m.target.to_model(y_ms) - value;
    let gg: f64 = grad.iter().map(|(_, g)| g * g).sum();
    let residual = r * m.target.std;
    if gg == 0.0 {
        return Ok(UpdateOutcome {
            residual,
            degenerate: true,
        });
    }
    if r != 0.0 {
        let scale = mu * r / (gg + KACZMARZ_LAMBDA);
        for (idx, g) in grad {
            *m.param_mut(idx) += scale * g;
        }
    }
    Ok(UpdateOutcome {
        residual,
        degenerate: false,
    })
}

/// One training example: unstandardized smoothed inputs and target in ms.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactRecord {
    pub x: Vec<f64>,
    pub y: f64,
}

/// Trailing mean over up to `window` rows (fewer at the very start).
pub fn smooth_trailing(rows: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    let window = window.max(1);
    let width = rows.first().map_or(0, |r| r.len());
    (0..rows.len())
        .map(|t| {
            let span = &rows[(t + 1).saturating_sub(window)..=t];
            (0..width)
                .map(|c| span.iter().map(|r| r[c]).sum::<f64>() / span.len() as f64)
                .collect()
        })
        .collect()
}

/// Smoothed, projected records of one fall segment (context rows feed the
/// smoother but produce no records).
pub fn segment_records(seg: &FallSegment, features: &[Signal], window: usize) -> Result<Vec<ImpactRecord>> {
    let projected = seg.project(features)?;
    let smoothed = smooth_trailing(&projected, window);
    Ok(smoothed[seg.context..]
        .iter()
        .zip(&seg.tti_targets)
        .map(|(x, y)| ImpactRecord { x: x.clone(), y: *y })
        .collect())
}

pub trait RecordOrder: Send + Sync {
    fn name(&self) -> &'static str;
    fn arrange(&self, order: &mut [usize], rng: &mut ChaCha8Rng);
}

pub struct Shuffled;

impl RecordOrder for Shuffled {
    fn name(&self) -> &'static str {
        "shuffled"
    }

    fn arrange(&self, order: &mut [usize], rng: &mut ChaCha8Rng) {
        order.shuffle(rng);
    }
}

pub struct Sequential;

impl RecordOrder for Sequential {
    fn name(&self) -> &'static str {
        "sequential"
    }

    fn arrange(&self, order: &mut [usize], _rng: &mut ChaCha8Rng) {
        order.sort_unstable();
    }
}

pub struct RecordOrderRegistry {
    orders: BTreeMap<&'static str, Box<dyn RecordOrder>>,
}

impl Default for RecordOrderRegistry {
    fn default() -> Self {
        let mut r = Self { orders: BTreeMap::new() };
        r.register(Box::new(Shuffled));
        r.register(Box::new(Sequential));
        r
    }
}

impl RecordOrderRegistry {
    pub fn register(&mut self, order: Box<dyn RecordOrder>) {
        self.orders.insert(order.name(), order);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.orders.keys().copied()
    }

    pub fn get(&self, name: &str) -> Result<&dyn RecordOrder> {
        self.orders
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "record order",
                name: name.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitEpoch {
    pub epoch: usize,
    pub train_rmse: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitLog {
    pub epochs: Vec<FitEpoch>,
    pub best_epoch: usize,
    pub degenerate_updates: usize,
}

impl FitLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_rmse,val_rmse\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_rmse, e.val_rmse));
        }
        s
    }

    pub fn best_val_rmse(&self) -> f64 {
        self.epochs
            .iter()
            .find(|e| e.epoch == self.best_epoch)
            .map_or(f64::NAN, |e| e.val_rmse)
    }
}

pub fn rmse(pairs: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in pairs {
        sum += (a - b) * (a - b);
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        (sum / n as f64).sqrt()
    }
}

/// RMSE in ms of the model over records (inputs unstandardized).
pub fn records_rmse(m: &KanModel, records: &[ImpactRecord]) -> Result<f64> {
    let preds = records
        .iter()
        .map(|r| kan_eval(m, &m.standardize(&r.x)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(rmse(preds.into_iter().zip(records.iter().map(|r| r.y))))
}

/// Initial model: seeded small inner values on `[−3, 3]`, outer grids over
/// the observed range of inner sums, outer values rising linearly so the
/// superposition spans `mean ± std` of the (model-unit) targets.
pub fn init_model(
    cfg: &KanConfig,
    standardizer: StandardizationStats,
    target: TargetScale,
    train_x: &[Vec<f64>],
    train_y: &[f64],
) -> Result<KanModel> {
    let d = standardizer.width();
    let b = 2 * d + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut inner = Vec::with_capacity(b * d);
    for _ in 0..b * d {
        let values = (0..cfg.n)
            .map(|_| rng.random_range(-INNER_INIT_NOISE..=INNER_INIT_NOISE))
            .collect();
        inner.push(PwlFunction::uniform(-INNER_RANGE, INNER_RANGE, values)?);
    }
    let placeholder = PwlFunction::uniform(0.0, 1.0, vec![0.0; cfg.q])?;
    let mut model = KanModel {
        d,
        inner,
        outer: vec![placeholder; b],
        standardizer,
        target,
        features: cfg.features.clone(),
        window_ms: cfg.window_ms,
    };
    let (mut lo, mut hi) = (vec![f64::INFINITY; b], vec![f64::NEG_INFINITY; b]);
    for x in train_x {
        for (j, s) in model.inner_sums(x).into_iter().enumerate() {
            lo[j] = lo[j].min(s);
            hi[j] = hi[j].max(s);
        }
    }
    let ys: Vec<f64> = train_y.iter().map(|y| target.to_model(*y)).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / ys.len() as f64;
    let spread = if var > 0.0 { var.sqrt() } else { 1.0 };
    let (v0, v1) = ((mean - spread) / b as f64, (mean + spread) / b as f64);
    for j in 0..b {
        let (mut a, mut z) = (lo[j], hi[j]);
        if !(z - a > 1e-9) {
            a -= 1e-3;
            z += 1e-3;
        }
        let values = (0..cfg.q)
            .map(|k| v0 + (v1 - v0) * k as f64 / (cfg.q - 1) as f64)
            .collect();
        model.outer[j] = PwlFunction::uniform(a, z, values)?;
    }
    Ok(model)
}

/// Trains with one Kaczmarz update per record per epoch and returns the
/// epoch snapshot with the lowest validation RMSE (earliest on ties). With
/// no validation records the training RMSE is used instead.
pub fn fit(cfg: &KanConfig, train: &[ImpactRecord], validation: &[ImpactRecord]) -> Result<(KanModel, FitLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(invalid("empty training set"));
    }
    let d = cfg.features.len();
    if train.iter().chain(validation).any(|r| r.x.len() != d) {
        return Err(invalid(format!("records must have {d} inputs")));
    }
    let order_strategy = RecordOrderRegistry::default();
    let order_strategy = order_strategy.get(&cfg.record_order)?;
    let raw_x: Vec<&[f64]> = train.iter().map(|r| r.x.as_slice()).collect();
    let standardizer = StandardizationStats::fit(&raw_x)?;
    let xs: Vec<Vec<f64>> = train.iter().map(|r| standardizer.apply_row(&r.x)).collect();
    let ys: Vec<f64> = train.iter().map(|r| r.y).collect();
    let target = if cfg.standardize_targets {
        let s = StandardizationStats::fit(&ys.iter().map(|y| [*y]).collect::<Vec<_>>())?;
        TargetScale {
            mean: s.mean[0],
            std: s.std[0],
        }
    } else {
        TargetScale::default()
    };
    let mut model = init_model(cfg, standardizer, target, &xs, &ys)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = FitLog::default();
    let mut best: Option<(f64, KanModel)> = None;
    for epoch in 1..=cfg.epochs {
        order_strategy.arrange(&mut order, &mut rng);
        for &k in &order {
            let out = kaczmarz_update(&mut model, &xs[k], ys[k], cfg.mu)?;
            log.degenerate_updates += out.degenerate as usize;
        }
        let train_rmse = rmse(xs.iter().zip(&ys).map(|(x, y)| (model.target.to_ms(model.raw_eval(x)), *y)));
        if !train_rmse.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: train_rmse,
            });
        }
        let val_rmse = if validation.is_empty() {
            train_rmse
        } else {
            records_rmse(&model, validation)?
        };
        log::debug!("impact fit epoch {epoch}: train {train_rmse:.3} val {val_rmse:.3}");
        log.epochs.push(FitEpoch {
            epoch,
            train_rmse,
            val_rmse,
        });
        if best.as_ref().is_none_or(|(b, _)| val_rmse < *b) {
            best = Some((val_rmse, model.clone()));
            log.best_epoch = epoch;
        }
    }
    Ok((best.expect("at least one epoch").1, log))
}

/// Fits on pre-built segments.
pub fn fit_segments(
    cfg: &KanConfig,
    train: &[FallSegment],
    validation: &[FallSegment],
) -> Result<(KanModel, FitLog)> {
    let w = cfg.window_samples();
    let collect = |segs: &[FallSegment]| -> Result<Vec<ImpactRecord>> {
        let mut out = Vec::new();
        for s in segs {
            out.extend(segment_records(s, &cfg.features, w)?);
        }
        Ok(out)
    };
    fit(cfg, &collect(train)?, &collect(validation)?)
}

/// Role of a repetition within one fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FoldRole {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvFold {
    pub train: Vec<u8>,
    pub validation: u8,
}

/// Repetition assignment applied to every (subject, activity) pair: one
/// repetition is held out for testing and each fold validates on one of the
/// others while training on the rest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvPlan {
    pub test: u8,
    pub folds: Vec<CvFold>,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self::rotating(5, 5).expect("valid default plan")
    }
}

impl CvPlan {
    /// Repetitions `1..=repetitions`; `test` is held out and each other
    /// repetition serves as validation once.
    pub fn rotating(repetitions: u8, test: u8) -> Result<Self> {
        if repetitions < 3 || !(1..=repetitions).contains(&test) {
            return Err(invalid("need ≥ 3 repetitions and a test repetition among them"));
        }
        let tuning: Vec<u8> = (1..=repetitions).filter(|r| *r != test).collect();
        let folds = tuning
            .iter()
            .map(|&v| CvFold {
                train: tuning.iter().copied().filter(|r| *r != v).collect(),
                validation: v,
            })
            .collect();
        Ok(Self { test, folds })
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds.is_empty() {
            return Err(invalid("plan has no folds"));
        }
        for f in &self.folds {
            let mut seen = BTreeSet::new();
            for r in f.train.iter().chain([&f.validation, &self.test]) {
                if !seen.insert(*r) {
                    return Err(invalid(format!("repetition {r} used twice in a fold")));
                }
            }
        }
        Ok(())
    }

    pub fn role(&self, fold: usize, repetition: u8) -> Option<FoldRole> {
        let f = &self.folds[fold];
        if repetition == self.test {
            Some(FoldRole::Test)
        } else if repetition == f.validation {
            Some(FoldRole::Validation)
        } else if f.train.contains(&repetition) {
            Some(FoldRole::Train)
        } else {
            None
        }
    }
}

/// Candidate values per hyperparameter; the grid is their product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub n: Vec<usize>,
    pub q: Vec<usize>,
    pub mu: Vec<f64>,
    pub window_ms: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            n: vec![4, 8],
            q: vec![32, 64],
            mu: vec![0.0625, 0.125],
            window_ms: vec![25.0, 50.0, 100.0],
        }
    }
}

impl HyperGrid {
    pub fn expand(&self, base: &KanConfig) -> Vec<KanConfig> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &q in &self.q {
                for &mu in &self.mu {
                    for &window_ms in &self.window_ms {
                        out.push(KanConfig {
                            n,
                            q,
                            mu,
                            window_ms,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub config: KanConfig,
    pub fold_rmse: Vec<f64>,
    pub mean_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub best: KanConfig,
    pub scores: Vec<CvScore>,
    /// (subject, activity) pairs missing some repetition; they contribute
    /// only the folds their data allows.
    pub incomplete: Vec<String>,
}

impl CvOutcome {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,q,mu,window_ms,mean_val_rmse,fold_val_rmse\n");
        for c in &self.scores {
            let folds: Vec<String> = c.fold_rmse.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.config.n,
                c.config.q,
                c.config.mu,
                c.config.window_ms,
                c.mean_rmse,
                folds.join(";")
            ));
        }
        s
    }
}

/// Scores every candidate by mean validation RMSE over the plan's folds;
/// test-repetition segments are never read.
pub fn cross_validate(candidates: &[KanConfig], plan: &CvPlan, segments: &[FallSegment]) -> Result<CvOutcome> {
    if candidates.is_empty() {
        return Err(invalid("empty hyperparameter grid"));
    }
    plan.validate()?;
    for c in candidates {
        c.validate()?;
    }
    let mut reps: BTreeMap<(SubjectId, String), BTreeSet<u8>> = BTreeMap::new();
    for s in segments {
        reps.entry((s.trial_id.subject.clone(), s.trial_id.activity.to_string()))
            .or_default()
            .insert(s.trial_id.repetition);
    }
    let all_reps: BTreeSet<u8> = plan
        .folds
        .iter()
        .flat_map(|f| f.train.iter().copied().chain([f.validation]))
        .chain([plan.test])
        .collect();
    let incomplete: Vec<String> = reps
        .iter()
        .filter(|(_, have)| !all_reps.is_subset(have))
        .map(|((s, a), have)| format!("{s}/{a} has repetitions {have:?}"))
        .collect();
    for line in &incomplete {
        log::warn!("cross-validation: {line}");
    }

    let scores: Vec<Result<CvScore>> = candidates
        .par_iter()
        .map(|cfg| {
            let mut fold_rmse = Vec::with_capacity(plan.folds.len());
            for (k, _) in plan.folds.iter().enumerate() {
                let pick = |role| -> Vec<FallSegment> {
                    segments
                        .iter()
                        .filter(|s| plan.role(k, s.trial_id.repetition) == Some(role))
                        .cloned()
                        .collect()
                };
                let (train, val) = (pick(FoldRole::Train), pick(FoldRole::Validation));
                if train.is_empty() || val.is_empty() {
                    continue;
                }
                let (_, log) = fit_segments(cfg, &train, &val)?;
                fold_rmse.push(log.best_val_rmse());
            }
            if fold_rmse.is_empty() {
                return Err(invalid("no fold has both training and validation segments"));
            }
            let mean_rmse = fold_rmse.iter().sum::<f64>() / fold_rmse.len() as f64;
            Ok(CvScore {
                config: cfg.clone(),
                fold_rmse,
                mean_rmse,
            })
        })
        .collect();
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (k, s) in scores.iter().enumerate() {
        if s.mean_rmse < scores[best].mean_rmse {
            best = k;
        }
    }
    Ok(CvOutcome {
        best: scores[best].config.clone(),
        scores,
        incomplete,
    })
}

/// Segments that belong to the plan's held-out test repetition.
pub fn test_segments<'a>(plan: &CvPlan, segments: &'a [FallSegment]) -> Vec<&'a FallSegment> {
    segments.iter().filter(|s| s.trial_id.repetition == plan.test).collect()
}

/// Smooth the trailing window, standardize, evaluate and clamp at zero.
/// `rows` holds the raw selected features, newest last.
pub fn predict_tti(m: &KanModel, rows: &[Vec<f64>]) -> Result<f64> {
    let w = (m.window_ms / SAMPLE_PERIOD_MS).round() as usize;
    if rows.len() < w {
        return Err(invalid(format!(
            "window holds {} samples, {w} needed",
            rows.len()
        )));
    }
    predict_tti_partial(m, &rows[rows.len() - w..])
}

/// As [`predict_tti`] but averages whatever rows are given (at least one).
pub fn predict_tti_partial(m: &KanModel, rows: &[Vec<f64>]) -> Result<f64> {
    if rows.is_empty() {
        return Err(invalid("empty feature window"));
    }
    let mut mean = vec![0.0; m.d];
    for r in rows {
        m.check_width(r)?;
        for (a, v) in mean.iter_mut().zip(r) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= rows.len() as f64);
    let y = kan_eval(m, &m.standardize(&mean)?)?;
    if !y.is_finite() {
        return Err(Error::NonFinite("impact prediction"));
    }
    Ok(y.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    config: KanConfig,
    d: usize,
    inner_grids: Vec<Vec<f64>>,
    outer_grids: Vec<Vec<f64>>,
    standardizer: Option<StandardizationStats>,
    target: TargetScale,
    features: Vec<Signal>,
}

pub fn save_checkpoint(path: &Path, m: &KanModel, cfg: &KanConfig) -> Result<()> {
    m.validate()?;
    let header = CheckpointHeader {
        kind: "kan".into(),
        config: cfg.clone(),
        d: m.d,
        inner_grids: m.inner.iter().map(|f| f.grid.clone()).collect(),
        outer_grids: m.outer.iter().map(|f| f.grid.clone()).collect(),
        standardizer: Some(m.standardizer.clone()),
        target: m.target,
        features: m.features.clone(),
    };
    checkpoint::write(path, CHECKPOINT_MAGIC, &serde_json::to_value(header)?, &m.parameters())
}

pub fn load_checkpoint(path: &Path) -> Result<(KanModel, KanConfig)> {
    let (header, payload) = checkpoint::read(path, CHECKPOINT_MAGIC)?;
    let h: CheckpointHeader =
        serde_json::from_value(header).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if h.kind != "kan" {
        return Err(Error::Checkpoint(format!("kind `{}` is not kan", h.kind)));
    }
    let standardizer = h
        .standardizer
        .ok_or_else(|| Error::Checkpoint("missing standardizer block".into()))?;
    let needed: usize = h.inner_grids.iter().chain(&h.outer_grids).map(|g| g.len()).sum();
    if payload.len() != needed {
        return Err(Error::Checkpoint(format!("payload holds {} values, grids need {needed}", payload.len())));
    }
    let mut at = 0;
    let mut build = |grids: Vec<Vec<f64>>| -> Result<Vec<PwlFunction>> {
        grids
            .into_iter()
            .map(|g| {
                let n = g.len();
                let f = PwlFunction::new(g, payload[at..at + n].to_vec());
                at += n;
                f.map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect()
    };
    let inner = build(h.inner_grids)?;
    let outer = build(h.outer_grids)?;
    let m = KanModel {
        d: h.d,
        inner,
        outer,
        standardizer,
        target: h.target,
        features: h.features,
        window_ms: h.config.window_ms,
    };
    m.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((m, h.config))
}
