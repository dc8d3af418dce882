//! Feature frames, standardization, fall-segment extraction and
//! time-of-impact targets.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::orientation::{norm3, OrientationTrack};
use crate::sisfall::{AnnotatedTrial, SubjectProfile, TrialId, SAMPLE_PERIOD_MS};

/// The 19 signals of the feature table, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Signal {
    Age,
    Height,
    Weight,
    Gender,
    AxAdxl345,
    AyAdxl345,
    AzAdxl345,
    AxMma8451q,
    AyMma8451q,
    AzMma8451q,
    GxItg3200,
    GyItg3200,
    GzItg3200,
    Q1,
    Q2,
    Q3,
    Q4,
    Theta,
    ThetaDeriv,
}

pub const FULL_WIDTH: usize = 19;
pub const FDNN_WIDTH: usize = 18;
pub const STATIC_WIDTH: usize = 4;
pub const DYNAMIC_WIDTH: usize = 14;

impl Signal {
    pub const ALL: [Signal; FULL_WIDTH] = [
        Signal::Age,
        Signal::Height,
        Signal::Weight,
        Signal::Gender,
        Signal::AxAdxl345,
        Signal::AyAdxl345,
        Signal::AzAdxl345,
        Signal::AxMma8451q,
        Signal::AyMma8451q,
        Signal::AzMma8451q,
        Signal::GxItg3200,
        Signal::GyItg3200,
        Signal::GzItg3200,
        Signal::Q1,
        Signal::Q2,
        Signal::Q3,
        Signal::Q4,
        Signal::Theta,
        Signal::ThetaDeriv,
    ];

    /// Feature set used by the time-of-impact regressor.
    pub const IMPACT_DEFAULT: [Signal; 5] = [
        Signal::AyAdxl345,
        Signal::AyMma8451q,
        Signal::GyItg3200,
        Signal::Theta,
        Signal::ThetaDeriv,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Signal::Age => "age",
            Signal::Height => "height",
            Signal::Weight => "weight",
            Signal::Gender => "gender",
            Signal::AxAdxl345 => "ax_adxl345",
            Signal::AyAdxl345 => "ay_adxl345",
            Signal::AzAdxl345 => "az_adxl345",
            Signal::AxMma8451q => "ax_mma8451q",
            Signal::AyMma8451q => "ay_mma8451q",
            Signal::AzMma8451q => "az_mma8451q",
            Signal::GxItg3200 => "gx_itg3200",
            Signal::GyItg3200 => "gy_itg3200",
            Signal::GzItg3200 => "gz_itg3200",
            Signal::Q1 => "q1",
            Signal::Q2 => "q2",
            Signal::Q3 => "q3",
            Signal::Q4 => "q4",
            Signal::Theta => "theta",
            Signal::ThetaDeriv => "theta_deriv",
        }
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Signal {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Signal::ALL
            .iter()
            .copied()
            .find(|sig| sig.name() == s)
            .ok_or_else(|| invalid(format!("unknown signal `{s}`")))
    }
}

impl Serialize for Signal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Signal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One time step: subject statics, the 14 dynamic channels (9 sensor
/// channels, quaternion, tilt) and the tilt derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureFrame {
    pub statics: [f64; STATIC_WIDTH],
    pub dynamic: [f64; DYNAMIC_WIDTH],
    pub tilt_rate: f64,
}

impl FeatureFrame {
    pub fn new(
        subject: &SubjectProfile,
        sample: &crate::sisfall::CalibratedSample,
        q: [f64; 4],
        tilt: f64,
        tilt_rate: f64,
    ) -> Self {
        let mut dynamic = [0.0; DYNAMIC_WIDTH];
        dynamic[0..3].copy_from_slice(&sample.adxl345);
        dynamic[3..6].copy_from_slice(&sample.mma8451q);
        dynamic[6..9].copy_from_slice(&sample.gyro_dps);
        dynamic[9..13].copy_from_slice(&q);
        dynamic[13] = tilt;
        Self {
            statics: subject.statics(),
            dynamic,
            tilt_rate,
        }
    }

    /// The 18-entry detector input: statics then dynamic channels.
    pub fn fdnn_view(&self) -> [f64; FDNN_WIDTH] {
        let mut v = [0.0; FDNN_WIDTH];
        v[..STATIC_WIDTH].copy_from_slice(&self.statics);
        v[STATIC_WIDTH..].copy_from_slice(&self.dynamic);
        v
    }

    /// All 19 signals in `Signal::ALL` order.
    pub fn full_view(&self) -> [f64; FULL_WIDTH] {
        let mut v = [0.0; FULL_WIDTH];
        v[..FDNN_WIDTH].copy_from_slice(&self.fdnn_view());
        v[FDNN_WIDTH] = self.tilt_rate;
        v
    }

    pub fn get(&self, s: Signal) -> f64 {
        self.full_view()[s.index()]
    }
}

pub fn build_feature_frames(
    trial: &AnnotatedTrial,
    subject: &SubjectProfile,
    orientation: &OrientationTrack,
) -> Result<Vec<FeatureFrame>> {
    let n = trial.samples.len();
    if orientation.quaternions.len() != n || orientation.tilt.len() != n || orientation.tilt_rate.len() != n {
        return Err(invalid(format!(
            "{}: orientation length {} does not match {} samples",
            trial.id,
            orientation.quaternions.len(),
            n
        )));
    }
    Ok((0..n)
        .map(|i| {
            FeatureFrame::new(
                subject,
                &trial.samples[i],
                orientation.quaternions[i].to_array(),
                orientation.tilt[i],
                orientation.tilt_rate[i],
            )
        })
        .collect())
}

pub const STD_EPSILON: f64 = 1e-8;

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| invalid("cannot standardize an empty matrix"))?;
        let width = first.as_ref().len();
        if width == 0 {
            return Err(invalid("cannot standardize zero columns"));
        }
        if rows.iter().any(|r| r.as_ref().len() != width) {
            return Err(invalid("ragged matrix"));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; width];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for r in rows {
            for ((acc, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let mut std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        for c in 0..width {
            let first_value = first.as_ref()[c];
            if rows.iter().all(|r| r.as_ref()[c] == first_value) {
                // exact constant column: standardizes to exactly zero
                mean[c] = first_value;
                std[c] = STD_EPSILON;
            } else if std[c] < STD_EPSILON {
                std[c] = STD_EPSILON;
            }
        }
        Ok(Self { mean, std })
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_in_place(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn apply<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<Vec<f64>>> {
        rows.iter()
            .map(|r| {
                let r = r.as_ref();
                if r.len() != self.width() {
                    return Err(invalid(format!("row width {} != {}", r.len(), self.width())));
                }
                Ok(self.apply_row(r))
            })
            .collect()
    }

    pub fn invert_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn select(&self, columns: &[usize]) -> Self {
        Self {
            mean: columns.iter().map(|&c| self.mean[c]).collect(),
            std: columns.iter().map(|&c| self.std[c]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StillnessConfig {
    pub window_ms: f64,
    /// Standard deviation of the accelerometer magnitude, g.
    pub threshold_g: f64,
    /// Rows kept before the segment start for trailing smoothing windows.
    pub context_ms: f64,
}

impl Default for StillnessConfig {
    fn default() -> Self {
        Self {
            window_ms: 200.0,
            threshold_g: 0.05,
            context_ms: 200.0,
        }
    }
}

impl StillnessConfig {
    pub fn window_samples(&self) -> usize {
        ((self.window_ms / SAMPLE_PERIOD_MS).round() as usize).max(2)
    }

    pub fn context_samples(&self) -> usize {
        (self.context_ms / SAMPLE_PERIOD_MS).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentBounds {
    pub start: usize,
    /// Impact sample, inclusive.
    pub end: usize,
    /// True when stillness was never detected and `end` fell back to the
    /// last FALL-labelled sample.
    pub stillness_not_found: bool,
}

impl SegmentBounds {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn duration_ms(&self) -> f64 {
        (self.len() - 1) as f64 * SAMPLE_PERIOD_MS
    }
}

/// Start at the first FALL label; the impact is the first index at or after
/// it whose forward window of accelerometer magnitudes has a population
/// standard deviation below the threshold.
pub fn find_segment_bounds(trial: &AnnotatedTrial, cfg: &StillnessConfig) -> Result<SegmentBounds> {
    let (start, last_fall) = trial
        .fall_span()
        .ok_or_else(|| invalid(format!("{}: no FALL labels", trial.id)))?;
    let mags: Vec<f64> = trial.samples.iter().map(|s| norm3(s.adxl345)).collect();
    let w = cfg.window_samples();
    let n = mags.len();
    let mut i = start;
    while i + w <= n {
        let win = &mags[i..i + w];
        let mean = win.iter().sum::<f64>() / w as f64;
        let var = win.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
        if var.sqrt() < cfg.threshold_g {
            return Ok(SegmentBounds {
                start,
                end: i,
                stillness_not_found: false,
            });
        }
        i += 1;
    }
    Ok(SegmentBounds {
        start,
        end: last_fall,
        stillness_not_found: true,
    })
}

/// `[(n-1)·5, …, 5, 0]` milliseconds.
pub fn tti_targets(n: usize) -> Vec<f64> {
    (0..n).rev().map(|k| k as f64 * SAMPLE_PERIOD_MS).collect()
}

/// A fall interval with all 19 signals per row. `rows` starts
/// `context` samples before the segment start so trailing windows are
/// available from the first segment sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallSegment {
    pub trial_id: TrialId,
    pub start_index: usize,
    pub end_index: usize,
    pub stillness_not_found: bool,
    pub context: usize,
    pub signals: Vec<Signal>,
    pub rows: Vec<Vec<f64>>,
    pub tti_targets: Vec<f64>,
}

impl FallSegment {
    pub fn len(&self) -> usize {
        self.tti_targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tti_targets.is_empty()
    }

    /// Rows of the segment proper (without context).
    pub fn segment_rows(&self) -> &[Vec<f64>] {
        &self.rows[self.context..]
    }

    /// Column projection onto `selected` (which must be a subset of `signals`).
    pub fn project(&self, selected: &[Signal]) -> Result<Vec<Vec<f64>>> {
        let idx: Vec<usize> = selected
            .iter()
            .map(|s| {
                self.signals
                    .iter()
                    .position(|x| x == s)
                    .ok_or_else(|| invalid(format!("segment {} lacks signal {s}", self.trial_id)))
            })
            .collect::<Result<_>>()?;
        Ok(self.rows.iter().map(|r| idx.iter().map(|&i| r[i]).collect()).collect())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let seg: FallSegment = serde_json::from_str(&text)?;
        if seg.rows.len() != seg.context + seg.tti_targets.len() {
            return Err(invalid(format!("{}: segment rows and targets disagree", path.display())));
        }
        Ok(seg)
    }
}

pub fn extract_fall_segment(
    trial: &AnnotatedTrial,
    frames: &[FeatureFrame],
    cfg: &StillnessConfig,
) -> Result<FallSegment> {
    if frames.len() != trial.samples.len() {
        return Err(invalid("frames and samples differ in length"));
    }
    let b = find_segment_bounds(trial, cfg)?;
    let context = cfg.context_samples().min(b.start);
    let rows = frames[b.start - context..=b.end]
        .iter()
        .map(|f| f.full_view().to_vec())
        .collect();
    Ok(FallSegment {
        trial_id: trial.id.clone(),
        start_index: b.start,
        end_index: b.end,
        stillness_not_found: b.stillness_not_found,
        context,
        signals: Signal::ALL.to_vec(),
        rows,
        tti_targets: tti_targets(b.len()),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSplit {
    pub train: Vec<TrialId>,
    pub validation: Vec<TrialId>,
    pub test: Vec<TrialId>,
}

/// Seeded shuffle then partition of whole trials. Validation and test sizes
/// are `round(n·ratio)`; training takes the remainder.
pub fn split_sequences(trials: &[TrialId], ratios: [f64; 3], seed: u64) -> Result<SequenceSplit> {
    if trials.is_empty() {
        return Err(invalid("nothing to split"));
    }
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut ids = trials.to_vec();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let n_val = (n as f64 * ratios[1]).round() as usize;
    let n_test = ((n as f64 * ratios[2]).round() as usize).min(n - n_val);
    let n_train = n - n_val - n_test;
    let test = ids.split_off(n_train + n_val);
    let validation = ids.split_off(n_train);
    Ok(SequenceSplit {
        train: ids,
        validation,
        test,
    })
}
