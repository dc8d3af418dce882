//! Filter-style feature selection against the time-of-impact target.
//!
//! Selectors share the [`FeatureSelector`] trait and are looked up by name
//! in a [`SelectorRegistry`], so the CLI can run any configured subset.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::features::Signal;

/// Column-major view of a feature matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<Signal>,
    pub columns: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn from_rows<R: AsRef<[f64]>>(names: Vec<Signal>, rows: &[R]) -> Result<Self> {
        let width = names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); width];
        for r in rows {
            let r = r.as_ref();
            if r.len() != width {
                return Err(invalid(format!("row width {} != {width}", r.len())));
            }
            for (c, v) in columns.iter_mut().zip(r) {
                c.push(*v);
            }
        }
        Ok(Self { names, columns })
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }
}

/// Absolute Pearson correlation; zero when either side has no variance.
pub fn abs_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.is_empty() {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).abs().min(1.0)
}

/// Equal-width binning into `bins` codes over the column's range. A constant
/// column maps to code 0.
pub fn discretize(x: &[f64], bins: usize) -> Vec<usize> {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if !(hi > lo) {
        return vec![0; x.len()];
    }
    let width = (hi - lo) / bins as f64;
    x.iter()
        .map(|v| (((v - lo) / width) as usize).min(bins - 1))
        .collect()
}

/// Mutual information in bits between two discretized columns, plug-in
/// estimate with the Miller–Madow bias correction.
pub fn mutual_information(a: &[usize], b: &[usize], bins: usize) -> f64 {
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let mut joint = vec![0usize; bins * bins];
    let mut pa = vec![0usize; bins];
    let mut pb = vec![0usize; bins];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * bins + y] += 1;
        pa[x] += 1;
        pb[y] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for x in 0..bins {
        if pa[x] == 0 {
            continue;
        }
        for y in 0..bins {
            let c = joint[x * bins + y];
            if c == 0 {
                continue;
            }
            let c = c as f64;
            mi += c / nf * (c * nf / (pa[x] as f64 * pb[y] as f64)).log2();
        }
    }
    let occupied = |v: &[usize]| v.iter().filter(|c| **c > 0).count() as f64;
    let correction = (occupied(&joint) - occupied(&pa) - occupied(&pb) + 1.0) / (2.0 * nf * std::f64::consts::LN_2);
    mi - correction
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub signal: Signal,
    pub score: f64,
    /// mRMR only: relevance and mean redundancy at the step it was picked.
    pub relevance: Option<f64>,
    pub redundancy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorOutput {
    pub selector: String,
    /// Per-feature score for every column, in matrix order.
    pub scores: Vec<FeatureScore>,
    /// Chosen features, best first.
    pub ranked: Vec<Signal>,
}

pub trait FeatureSelector: Send + Sync {
    fn name(&self) -> &'static str;
    fn select(&self, matrix: &FeatureMatrix, target: &[f64]) -> Result<SelectorOutput>;
}

fn check_target(matrix: &FeatureMatrix, target: &[f64]) -> Result<()> {
    if matrix.rows() != target.len() {
        return Err(invalid(format!(
            "matrix has {} rows but target has {}",
            matrix.rows(),
            target.len()
        )));
    }
    Ok(())
}

/// Keeps features whose absolute Pearson correlation with the target reaches
/// the threshold, ranked descending.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSelector {
    pub threshold: f64,
}

impl FeatureSelector for CorrelationSelector {
    fn name(&self) -> &'static str {
        "correlation"
    }

    fn select(&self, matrix: &FeatureMatrix, target: &[f64]) -> Result<SelectorOutput> {
        check_target(matrix, target)?;
        let scores: Vec<FeatureScore> = matrix
            .names
            .iter()
            .zip(&matrix.columns)
            .map(|(s, c)| FeatureScore {
                signal: *s,
                score: abs_pearson(c, target),
                relevance: None,
                redundancy: None,
            })
            .collect();
        let mut order: Vec<usize> = (0..scores.len())
            .filter(|&i| scores[i].score >= self.threshold && scores[i].score > 0.0)
            .collect();
        order.sort_by(|&a, &b| scores[b].score.total_cmp(&scores[a].score).then(a.cmp(&b)));
        Ok(SelectorOutput {
            selector: self.name().into(),
            ranked: order.iter().map(|&i| scores[i].signal).collect(),
            scores,
        })
    }
}

/// Greedy minimum-redundancy maximum-relevance (difference form).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrmrSelector {
    pub k: usize,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrmrStep {
    pub feature: usize,
    pub relevance: f64,
    pub redundancy: f64,
}

impl MrmrSelector {
    /// Returns the selected column indices with the terms at each step.
    /// Ties go to the lower column index.
    pub fn run(&self, matrix: &FeatureMatrix, target: &[f64]) -> Result<Vec<MrmrStep>> {
        check_target(matrix, target)?;
        let m = matrix.width();
        if self.k == 0 || self.k > m {
            return Err(invalid(format!("k = {} must be in 1..={m}", self.k)));
        }
        if self.bins < 2 {
            return Err(invalid("mRMR needs at least 2 bins"));
        }
        let codes: Vec<Vec<usize>> = matrix.columns.iter().map(|c| discretize(c, self.bins)).collect();
        let y = discretize(target, self.bins);
        let relevance: Vec<f64> = codes.iter().map(|c| mutual_information(c, &y, self.bins)).collect();
        let mut redundancy_sum = vec![0.0; m];
        let mut chosen = vec![false; m];
        let mut steps: Vec<MrmrStep> = Vec::with_capacity(self.k);
        for step in 0..self.k {
            let mut best: Option<(usize, f64, f64)> = None;
            for f in 0..m {
                if chosen[f] {
                    continue;
                }
                let red = if step == 0 { 0.0 } else { redundancy_sum[f] / step as f64 };
                let score = relevance[f] - red;
                if best.is_none_or(|(_, s, _)| score > s) {
                    best = Some((f, score, red));
                }
            }
            let (f, _, red) = best.expect("k <= width");
            chosen[f] = true;
            steps.push(MrmrStep {
                feature: f,
                relevance: relevance[f],
                redundancy: red,
            });
            for g in 0..m {
                if !chosen[g] {
                    redundancy_sum[g] += mutual_information(&codes[g], &codes[f], self.bins);
                }
            }
        }
        Ok(steps)
    }
}

impl FeatureSelector for MrmrSelector {
    fn name(&self) -> &'static str {
        "mrmr"
    }

    fn select(&self, matrix: &FeatureMatrix, target: &[f64]) -> Result<SelectorOutput> {
        let steps = self.run(matrix, target)?;
        let mut scores: Vec<FeatureScore> = matrix
            .names
            .iter()
            .map(|s| FeatureScore {
                signal: *s,
                score: 0.0,
                relevance: None,
                redundancy: None,
            })
            .collect();
        for st in &steps {
            let s = &mut scores[st.feature];
            s.score = st.relevance - st.redundancy;
            s.relevance = Some(st.relevance);
            s.redundancy = Some(st.redundancy);
        }
        Ok(SelectorOutput {
            selector: self.name().into(),
            ranked: steps.iter().map(|s| matrix.names[s.feature]).collect(),
            scores,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub correlation_threshold: f64,
    pub mrmr_k: usize,
    pub mrmr_bins: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            correlation_threshold: 0.3,
            mrmr_k: 2,
            mrmr_bins: 32,
        }
    }
}

type SelectorFactory = Box<dyn Fn(&SelectionConfig) -> Box<dyn FeatureSelector> + Send + Sync>;

/// Name-keyed selector constructors.
pub struct SelectorRegistry {
    factories: BTreeMap<&'static str, SelectorFactory>,
}

impl SelectorRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("correlation", |c| {
            Box::new(CorrelationSelector {
                threshold: c.correlation_threshold,
            })
        });
        r.register("mrmr", |c| {
            Box::new(MrmrSelector {
                k: c.mrmr_k,
                bins: c.mrmr_bins,
            })
        });
        r
    }

    pub fn register<F>(&mut self, name: &'static str, factory: F)
    where
        F: Fn(&SelectionConfig) -> Box<dyn FeatureSelector> + Send + Sync + 'static,
    {
        self.factories.insert(name, Box::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn create(&self, name: &str, cfg: &SelectionConfig) -> Result<Box<dyn FeatureSelector>> {
        self.factories
            .get(name)
            .map(|f| f(cfg))
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "feature selector",
                name: name.into(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub feature: Signal,
    pub correlation: f64,
    pub mrmr_rank: Option<usize>,
    pub relevance: Option<f64>,
    pub redundancy: Option<f64>,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub rows: Vec<SelectionRow>,
    pub correlation_ranked: Vec<Signal>,
    pub mrmr_ranked: Vec<Signal>,
    pub chosen: Vec<Signal>,
}

impl SelectionReport {
    /// Runs both built-in selectors; `chosen` marks the configured feature set.
    pub fn build(matrix: &FeatureMatrix, target: &[f64], cfg: &SelectionConfig, chosen: &[Signal]) -> Result<Self> {
        let registry = SelectorRegistry::builtin();
        let corr = registry.create("correlation", cfg)?.select(matrix, target)?;
        let mrmr = registry.create("mrmr", cfg)?.select(matrix, target)?;
        let rows = matrix
            .names
            .iter()
            .enumerate()
            .map(|(i, s)| SelectionRow {
                feature: *s,
                correlation: corr.scores[i].score,
                mrmr_rank: mrmr.ranked.iter().position(|x| x == s).map(|p| p + 1),
                relevance: mrmr.scores[i].relevance,
                redundancy: mrmr.scores[i].redundancy,
                chosen: chosen.contains(s),
            })
            .collect();
        Ok(Self {
            rows,
            correlation_ranked: corr.ranked,
            mrmr_ranked: mrmr.ranked,
            chosen: chosen.to_vec(),
        })
    }

    /// Union of both selectors' picks in matrix order.
    pub fn union(&self) -> Vec<Signal> {
        self.rows
            .iter()
            .map(|r| r.feature)
            .filter(|s| self.correlation_ranked.contains(s) || self.mrmr_ranked.contains(s))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut s = String::from("feature,correlation,mrmr_rank,relevance,redundancy,chosen\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.6},{},{},{},{}\n",
                r.feature,
                r.correlation,
                r.mrmr_rank.map(|v| v.to_string()).unwrap_or_default(),
                opt(r.relevance),
                opt(r.redundancy),
                r.chosen
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
