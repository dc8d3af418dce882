#![allow(dead_code)]

use fallsense::fdnn::{train, FdnnCheckpoint, FdnnConfig, FdnnParams, LabeledSequence, TrainingLog};
use fallsense::features::{Signal, StandardizationStats, FDNN_WIDTH};
use fallsense::kan::{KanModel, PwlFunction, TargetScale};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use fallsense::orientation::FilterConfig;
use fallsense::sisfall::{SubjectId, SubjectProfile, TrialId};
use fallsense::streaming::causal_feature_frames;
use fallsense::synthetic::{generate_synthetic_trial, SyntheticKind, SyntheticSpec, SyntheticTrial};

pub fn profile() -> SubjectProfile {
    SubjectProfile {
        subject_id: SubjectId::new("SA01").unwrap(),
        age: 25.0,
        height_cm: 170.0,
        weight_kg: 65.0,
        gender: 1.0,
    }
}

pub fn sisfall_filter() -> FilterConfig {
    FilterConfig {
        vertical_axis: [0.0, 1.0, 0.0],
        ..FilterConfig::default()
    }
}

/// Seven falls with varied timing and direction plus three ADL trials.
pub fn synthetic_trials(duration_s: f64) -> Vec<SyntheticTrial> {
    let mut out = Vec::new();
    for k in 0..7u64 {
        let id = TrialId::from_filename(&format!("F{:02}_SA01_R01", k + 1)).unwrap();
        let onset = 1.0 + 0.25 * k as f64;
        let mut spec = SyntheticSpec::fall(id, duration_s, onset, onset + 0.4 + 0.1 * k as f64, 0.005);
        let a = k as f64 * 0.9;
        spec.fall_axis = [a.cos(), 0.0, a.sin()];
        out.push(generate_synthetic_trial(&spec, k).unwrap());
    }
    for (k, kind) in [SyntheticKind::Walk, SyntheticKind::Sit, SyntheticKind::Walk].into_iter().enumerate() {
        let id = TrialId::from_filename(&format!("D{:02}_SA01_R01", k + 1)).unwrap();
        let spec = SyntheticSpec {
            kind,
            ..SyntheticSpec::fall(id, duration_s, 1.0, 2.0, 0.005)
        };
        out.push(generate_synthetic_trial(&spec, 100 + k as u64).unwrap());
    }
    out
}

pub fn detector_features() -> Vec<String> {
    Signal::ALL[..FDNN_WIDTH].iter().map(|s| s.name().to_string()).collect()
}

/// Standardized causal feature sequences, as the stream would see them.
pub fn labelled_sequences(trials: &[SyntheticTrial]) -> (Vec<LabeledSequence>, StandardizationStats) {
    let raw: Vec<Vec<Vec<f64>>> = trials
        .iter()
        .map(|t| {
            causal_feature_frames(&t.trial.samples, &profile(), &sisfall_filter())
                .unwrap()
                .iter()
                .map(|f| f.fdnn_view().to_vec())
                .collect()
        })
        .collect();
    let all: Vec<&Vec<f64>> = raw.iter().flatten().collect();
    let stats = StandardizationStats::fit(&all).unwrap();
    let seqs = trials
        .iter()
        .zip(&raw)
        .map(|(t, rows)| LabeledSequence {
            id: t.trial.id.to_string(),
            inputs: stats.apply(rows).unwrap(),
            labels: t.trial.fall_mask(),
        })
        .collect();
    (seqs, stats)
}

pub struct TrainedDetector {
    pub trials: Vec<SyntheticTrial>,
    pub sequences: Vec<LabeledSequence>,
    pub checkpoint: FdnnCheckpoint,
    pub log: TrainingLog,
}

pub fn train_detector(duration_s: f64) -> TrainedDetector {
    let trials = synthetic_trials(duration_s);
    let (sequences, standardizer) = labelled_sequences(&trials);
    let mut config = FdnnConfig {
        batch_size: 2,
        seed: 11,
        ..FdnnConfig::default()
    };
    config.optimizer.learning_rate = 0.01;
    let (params, log): (FdnnParams, TrainingLog) = train(&config, &sequences, &sequences).unwrap();
    TrainedDetector {
        trials,
        sequences,
        checkpoint: FdnnCheckpoint {
            config,
            params,
            standardizer,
            features: detector_features(),
        },
        log,
    }
}

/// A small impact regressor fitted on the fall trials' causal features.
pub fn impact_model(trials: &[SyntheticTrial]) -> fallsense::kan::KanModel {
    use fallsense::features::{extract_fall_segment, StillnessConfig};
    use fallsense::kan::{fit_segments, KanConfig};
    let segments: Vec<_> = trials
        .iter()
        .filter(|t| t.truth.is_some())
        .map(|t| {
            let frames = causal_feature_frames(&t.trial.samples, &profile(), &sisfall_filter()).unwrap();
            extract_fall_segment(&t.trial, &frames, &StillnessConfig::default()).unwrap()
        })
        .collect();
    let cfg = KanConfig {
        epochs: 3,
        ..KanConfig::default()
    };
    fit_segments(&cfg, &segments, &segments).unwrap().0
}

/// Sequences whose labelled span is marked by a jump in two input channels.
pub fn separable_sequences(n: usize, seed: u64) -> Vec<LabeledSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let len = rng.random_range(60..120);
            let start = rng.random_range(10..len / 2);
            let end = rng.random_range(start + 5..len - 5);
            let statics: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let inputs = (0..len)
                .map(|t| {
                    let on = (start..=end).contains(&t);
                    let mut x = statics.clone();
                    for c in 0..14 {
                        let base = if on && (c == 1 || c == 12) { 2.0 } else { -0.5 };
                        x.push(base + rng.random_range(-0.2..0.2));
                    }
                    x
                })
                .collect();
            LabeledSequence {
                id: format!("s{k}"),
                inputs,
                labels: (0..len).map(|t| (start..=end).contains(&t)).collect(),
            }
        })
        .collect()
}

pub fn identity_stats(d: usize) -> StandardizationStats {
    StandardizationStats {
        mean: vec![0.0; d],
        std: vec![1.0; d],
    }
}

/// Random model with every function's grid and values drawn at random.
pub fn random_kan(rng: &mut ChaCha8Rng, d: usize, n: usize, q: usize) -> KanModel {
    let b = 2 * d + 1;
    let rand_fn = |rng: &mut ChaCha8Rng, k: usize, lo: f64, hi: f64, amp: f64| {
        let mut grid: Vec<f64> = (0..k).map(|_| rng.random_range(lo..hi)).collect();
        grid.sort_by(f64::total_cmp);
        for i in 1..k {
            if grid[i] <= grid[i - 1] + 1e-3 {
                grid[i] = grid[i - 1] + 1e-3;
            }
        }
        let values = (0..k).map(|_| rng.random_range(-amp..amp)).collect();
        PwlFunction::new(grid, values).unwrap()
    };
    KanModel {
        d,
        inner: (0..b * d).map(|_| rand_fn(rng, n, -3.0, 3.0, 1.0)).collect(),
        outer: (0..b).map(|_| rand_fn(rng, q, -5.0, 5.0, 2.0)).collect(),
        standardizer: identity_stats(d),
        target: TargetScale::default(),
        features: Signal::ALL[..d].to_vec(),
        window_ms: 50.0,
    }
}
