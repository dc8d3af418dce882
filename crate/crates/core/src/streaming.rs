//! Sample-by-sample replay of a trial through orientation, features, the
//! detector and (while falling) the impact regressor, with per-sample
//! latency accounting against the 5 ms budget of a 200 Hz stream.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fdnn::{FdnnCheckpoint, FdnnStepper};
use crate::features::{FeatureFrame, Signal, FDNN_WIDTH};
use crate::kan::{predict_tti_partial, KanModel};
use crate::orientation::{FilterConfig, OnlineOrientation};
use crate::sisfall::{CalibratedSample, SubjectProfile, SAMPLE_PERIOD_MS, SAMPLE_PERIOD_S};

/// Per-sample processing budget at 200 Hz, microseconds.
pub const DEADLINE_US: f64 = 5000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacingMode {
    /// One sample every 5 ms of wall-clock time.
    Realtime,
    /// As fast as possible.
    Fast,
}

impl FromStr for PacingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "realtime" => Ok(Self::Realtime),
            "fast" => Ok(Self::Fast),
            _ => Err(Error::UnknownStrategy {
                kind: "pacing mode",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub filter: FilterConfig,
    pub mode: PacingMode,
    /// Evaluate the impact regressor only while the detector flags a fall.
    pub gate_impact: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            filter: FilterConfig::default(),
            mode: PacingMode::Fast,
            gate_impact: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub index: usize,
    pub p_falling: f64,
    pub decision: bool,
    pub tti_ms: Option<f64>,
    pub latency_us: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyReport {
    pub samples: usize,
    pub mean_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
    /// Samples whose latency exceeded the deadline.
    pub misses: usize,
}

impl LatencyReport {
    /// Nearest-rank 99th percentile.
    pub fn from_latencies(latencies: &[f64]) -> Self {
        if latencies.is_empty() {
            return Self::default();
        }
        let mut sorted = latencies.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let rank = ((0.99 * n as f64).ceil() as usize).clamp(1, n);
        Self {
            samples: n,
            mean_us: sorted.iter().sum::<f64>() / n as f64,
            p99_us: sorted[rank - 1],
            max_us: sorted[n - 1],
            misses: sorted.iter().filter(|l| **l > DEADLINE_US).count(),
        }
    }
}

/// Orientation plus feature frames computed causally, exactly as the stream
/// sees them.
pub fn causal_feature_frames(
    samples: &[CalibratedSample],
    subject: &SubjectProfile,
    filter: &FilterConfig,
) -> Result<Vec<FeatureFrame>> {
    let mut orient = OnlineOrientation::new(*filter)?;
    samples
        .iter()
        .map(|s| {
            let (q, theta, rate) = orient.push(s)?;
            Ok(FeatureFrame::new(subject, s, q.to_array(), theta, rate))
        })
        .collect()
}

fn detector_signal_names() -> Vec<String> {
    Signal::ALL[..FDNN_WIDTH].iter().map(|s| s.name().to_string()).collect()
}

/// Stateful per-sample pipeline for one stream.
pub struct StreamPipeline<'a> {
    orientation: OnlineOrientation,
    stepper: FdnnStepper<'a>,
    detector: &'a FdnnCheckpoint,
    impact: Option<&'a KanModel>,
    impact_columns: Vec<usize>,
    window: VecDeque<Vec<f64>>,
    window_len: usize,
    subject: SubjectProfile,
    gate_impact: bool,
}

impl<'a> StreamPipeline<'a> {
    pub fn new(
        detector: &'a FdnnCheckpoint,
        impact: Option<&'a KanModel>,
        subject: &SubjectProfile,
        cfg: &StreamConfig,
    ) -> Result<Self> {
        if detector.features != detector_signal_names() {
            return Err(invalid(format!(
                "detector checkpoint features {:?} do not match the stream's inputs",
                detector.features
            )));
        }
        if detector.standardizer.width() != FDNN_WIDTH {
            return Err(invalid("detector standardizer width mismatch"));
        }
        let (impact_columns, window_len) = match impact {
            Some(m) => {
                m.validate()?;
                (
                    m.features.iter().map(|s| s.index()).collect(),
                    ((m.window_ms / SAMPLE_PERIOD_MS).round() as usize).max(1),
                )
            }
            None => (Vec::new(), 1),
        };
        Ok(Self {
            orientation: OnlineOrientation::new(cfg.filter)?,
            stepper: FdnnStepper::new(&detector.params, detector.config.bn_epsilon),
            detector,
            impact,
            impact_columns,
            window: VecDeque::with_capacity(window_len),
            window_len,
            subject: subject.clone(),
            gate_impact: cfg.gate_impact,
        })
    }

    /// `(P(falling), decision, time of impact)` for the next sample.
    pub fn push(&mut self, s: &CalibratedSample) -> Result<(f64, bool, Option<f64>)> {
        let (q, theta, rate) = self.orientation.push(s)?;
        let frame = FeatureFrame::new(&self.subject, s, q.to_array(), theta, rate);
        let x = self.detector.standardizer.apply_row(&frame.fdnn_view());
        let p = self.stepper.step(&x)?[1];
        let decision = p > self.detector.config.threshold;
        let mut tti = None;
        if let Some(m) = self.impact {
            let full = frame.full_view();
            if self.window.len() == self.window_len {
                self.window.pop_front();
            }
            self.window.push_back(self.impact_columns.iter().map(|&c| full[c]).collect());
            if decision || !self.gate_impact {
                let rows: Vec<Vec<f64>> = self.window.iter().cloned().collect();
                tti = Some(predict_tti_partial(m, &rows)?);
            }
        }
        Ok((p, decision, tti))
    }
}

/// Replays `samples` through the pipeline. Realtime mode sleeps so sample
/// `k` is not processed before `k·5 ms` after the start; the values are
/// identical in both modes.
pub fn stream_trial(
    detector: &FdnnCheckpoint,
    impact: Option<&KanModel>,
    subject: &SubjectProfile,
    samples: &[CalibratedSample],
    cfg: &StreamConfig,
) -> Result<(Vec<StreamEvent>, LatencyReport)> {
    let mut pipe = StreamPipeline::new(detector, impact, subject, cfg)?;
    let mut events = Vec::with_capacity(samples.len());
    let start = Instant::now();
    for (index, s) in samples.iter().enumerate() {
        if cfg.mode == PacingMode::Realtime {
            let due = start + Duration::from_secs_f64(index as f64 * SAMPLE_PERIOD_S);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        let t0 = Instant::now();
        let (p_falling, decision, tti_ms) = pipe.push(s)?;
        let latency_us = t0.elapsed().as_secs_f64() * 1e6;
        events.push(StreamEvent {
            index,
            p_falling,
            decision,
            tti_ms,
            latency_us,
        });
    }
    let latencies: Vec<f64> = events.iter().map(|e| e.latency_us).collect();
    Ok((events, LatencyReport::from_latencies(&latencies)))
}

pub fn events_to_csv(events: &[StreamEvent]) -> String {
    let mut s = String::from("index,p_falling,decision,tti_ms,latency_us\n");
    for e in events {
        writeln!(
            s,
            "{},{},{},{},{:.3}",
            e.index,
            e.p_falling,
            e.decision as u8,
            e.tti_ms.map(|v| v.to_string()).unwrap_or_default(),
            e.latency_us
        )
        .unwrap();
    }
    s
}
