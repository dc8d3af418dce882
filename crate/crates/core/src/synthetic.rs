//! Synthetic waist-IMU trials with exactly known fall spans, used for
//! dataset-free testing and demos.
//!
//! The body frame has +y along the trunk. Standing keeps +y at the world
//! vertical; a fall rotates the body 90° about a horizontal body axis, with
//! a free-fall dip in the accelerometer magnitude, an impact spike on the
//! sample before impact and stillness from the impact sample on.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::features::SegmentBounds;
use crate::orientation::{Quaternion, Vec3};
use crate::sisfall::{
    format_trial_file, write_subjects, ActivityCode, ActivityKind, AnnotatedTrial, AnnotationTable,
    CalibratedSample, CalibrationSpec, Label, SubjectId, SubjectProfile, TrialId, SAMPLE_PERIOD_S,
    SAMPLE_RATE_HZ,
};

const IMPACT_SPIKE_G: f64 = 3.0;
const FREE_FALL_DIP: f64 = 0.8;
const FALL_VIBRATION_G: f64 = 0.3;
const FALL_VIBRATION_HZ: f64 = 8.0;
/// Gyro noise per g of accelerometer noise.
const GYRO_NOISE_DPS_PER_G: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Walk,
    Sit,
    Fall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub id: TrialId,
    pub kind: SyntheticKind,
    pub duration_s: f64,
    /// Fall onset and impact times; ignored for ADL kinds.
    pub onset_s: f64,
    pub impact_s: f64,
    /// Per-axis accelerometer noise standard deviation, g.
    pub noise_g: f64,
    /// Body axis the fall rotates about (perpendicular to the trunk).
    pub fall_axis: Vec3,
    /// Heading about the world vertical, radians.
    pub yaw: f64,
}

impl SyntheticSpec {
    pub fn fall(id: TrialId, duration_s: f64, onset_s: f64, impact_s: f64, noise_g: f64) -> Self {
        Self {
            id,
            kind: SyntheticKind::Fall,
            duration_s,
            onset_s,
            impact_s,
            noise_g,
            fall_axis: [1.0, 0.0, 0.0],
            yaw: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) || !(self.noise_g >= 0.0) {
            return Err(invalid("duration must be positive and noise non-negative"));
        }
        if self.kind == SyntheticKind::Fall {
            if !(self.onset_s > 0.0 && self.impact_s > self.onset_s && self.impact_s < self.duration_s) {
                return Err(invalid(format!(
                    "need 0 < onset ({}) < impact ({}) < duration ({})",
                    self.onset_s, self.impact_s, self.duration_s
                )));
            }
            if self.impact_index() < self.onset_index() + 2 {
                return Err(invalid("fall must last at least two samples"));
            }
            if self.fall_axis[1].abs() > 1e-9 || (self.fall_axis[0] == 0.0 && self.fall_axis[2] == 0.0) {
                return Err(invalid("fall axis must be horizontal in the body frame (y = 0)"));
            }
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration_s * SAMPLE_RATE_HZ).round() as usize
    }

    pub fn onset_index(&self) -> usize {
        (self.onset_s * SAMPLE_RATE_HZ).round() as usize
    }

    pub fn impact_index(&self) -> usize {
        (self.impact_s * SAMPLE_RATE_HZ).round() as usize
    }
}

/// A generated trial with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrial {
    pub trial: AnnotatedTrial,
    /// Fall start and impact sample, for fall trials.
    pub truth: Option<SegmentBounds>,
    /// True body-to-world attitude per sample.
    pub attitude: Vec<Quaternion>,
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    0.5 - 0.5 * (PI * t).cos()
}

fn smoothstep_rate(t: f64) -> f64 {
    if (0.0..=1.0).contains(&t) {
        0.5 * PI * (PI * t).sin()
    } else {
        0.0
    }
}

/// Per sample: rotation angle about the activity axis (rad), its rate
/// (rad/s) and the specific-force magnitude (g).
fn motion_profile(spec: &SyntheticSpec, i: usize) -> (f64, f64, f64) {
    let t = i as f64 * SAMPLE_PERIOD_S;
    match spec.kind {
        SyntheticKind::Fall => {
            let (on, imp) = (spec.onset_index(), spec.impact_index());
            let span = (imp - on) as f64 * SAMPLE_PERIOD_S;
            if i < on {
                (0.0, 0.0, 1.0)
            } else if i >= imp {
                (PI / 2.0, 0.0, 1.0)
            } else {
                let tau = (i - on) as f64 * SAMPLE_PERIOD_S / span;
                let angle = PI / 2.0 * smoothstep(tau);
                let rate = PI / 2.0 * smoothstep_rate(tau) / span;
                let mag = if i + 1 == imp {
                    IMPACT_SPIKE_G
                } else {
                    1.0 - FREE_FALL_DIP * (PI * tau).sin() + FALL_VIBRATION_G * (2.0 * PI * FALL_VIBRATION_HZ * t).sin()
                };
                (angle, rate, mag)
            }
        }
        SyntheticKind::Walk => {
            let f = 1.8;
            let sway = 5f64.to_radians();
            let angle = sway * (2.0 * PI * f * t).sin();
            let rate = sway * 2.0 * PI * f * (2.0 * PI * f * t).cos();
            let mag = 1.0 + 0.25 * (2.0 * PI * 2.0 * f * t).sin();
            (angle, rate, mag)
        }
        SyntheticKind::Sit => {
            let start = spec.duration_s / 3.0;
            let len = 1.2;
            let tau = (t - start) / len;
            let lean = -25f64.to_radians();
            let angle = lean * smoothstep(tau);
            let rate = lean * smoothstep_rate(tau) / len;
            let mag = if (0.0..1.0).contains(&tau) {
                1.0 - 0.3 * (PI * tau).sin()
            } else {
                1.0
            };
            (angle, rate, mag)
        }
    }
}

/// Deterministic synthetic trial for `spec` and `seed`.
pub fn generate_synthetic_trial(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticTrial> {
    spec.validate()?;
    let n = spec.samples();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let accel_noise = Normal::new(0.0, spec.noise_g).map_err(|e| invalid(e.to_string()))?;
    let gyro_noise = Normal::new(0.0, spec.noise_g * GYRO_NOISE_DPS_PER_G).map_err(|e| invalid(e.to_string()))?;
    let axis = {
        let a = spec.fall_axis;
        let k = (a[0] * a[0] + a[2] * a[2]).sqrt();
        match spec.kind {
            SyntheticKind::Fall => [a[0] / k, 0.0, a[2] / k],
            _ => [1.0, 0.0, 0.0],
        }
    };
    let upright = Quaternion::from_axis_angle([0.0, 0.0, 1.0], spec.yaw)
        .mul(Quaternion::between([0.0, 1.0, 0.0], [0.0, 0.0, 1.0]));
    let mut samples = Vec::with_capacity(n);
    let mut attitude = Vec::with_capacity(n);
    for i in 0..n {
        let (angle, rate, mag) = motion_profile(spec, i);
        let q = upright.mul(Quaternion::from_axis_angle(axis, angle)).normalized();
        let r = q.rotation_matrix();
        // world up expressed in the body frame: third row of R
        let up_body = [r[2][0], r[2][1], r[2][2]];
        let rate_dps = rate.to_degrees();
        let mut s = CalibratedSample {
            adxl345: [0.0; 3],
            mma8451q: [0.0; 3],
            gyro_dps: [0.0; 3],
            t: i as f64 * SAMPLE_PERIOD_S,
        };
        for k in 0..3 {
            let clean = mag * up_body[k];
            s.adxl345[k] = clean + accel_noise.sample(&mut rng);
            s.mma8451q[k] = clean + accel_noise.sample(&mut rng);
            s.gyro_dps[k] = rate_dps * axis[k] + gyro_noise.sample(&mut rng);
        }
        samples.push(s);
        attitude.push(q);
    }
    let (labels, truth) = match spec.kind {
        SyntheticKind::Fall => {
            let (on, imp) = (spec.onset_index(), spec.impact_index());
            let labels = (0..n)
                .map(|i| if (on..=imp).contains(&i) { Label::Fall } else { Label::Background })
                .collect();
            (
                labels,
                Some(SegmentBounds {
                    start: on,
                    end: imp,
                    stillness_not_found: false,
                }),
            )
        }
        _ => (vec![Label::Background; n], None),
    };
    Ok(SyntheticTrial {
        trial: AnnotatedTrial {
            id: spec.id.clone(),
            samples,
            labels,
        },
        truth,
        attitude,
    })
}

/// Size and variability of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpusConfig {
    pub young_subjects: usize,
    pub elderly_subjects: usize,
    pub fall_codes: usize,
    pub adl_codes: usize,
    pub repetitions: u8,
    pub duration_s: f64,
    pub noise_g: f64,
    /// Range of fall durations (onset to impact), seconds.
    pub fall_duration_s: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        Self {
            young_subjects: 4,
            elderly_subjects: 1,
            fall_codes: 4,
            adl_codes: 4,
            repetitions: 5,
            duration_s: 6.0,
            noise_g: 0.01,
            fall_duration_s: (0.4, 1.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub profiles: Vec<SubjectProfile>,
    pub trials: Vec<SyntheticTrial>,
}

impl SyntheticCorpus {
    pub fn profile_map(&self) -> BTreeMap<SubjectId, SubjectProfile> {
        self.profiles.iter().map(|p| (p.subject_id.clone(), p.clone())).collect()
    }

    pub fn annotations(&self) -> Result<AnnotationTable> {
        let mut table = AnnotationTable::default();
        for t in &self.trials {
            if let Some(b) = t.truth {
                table.insert(t.trial.id.clone(), b.start, b.end)?;
            }
        }
        Ok(table)
    }

    /// Writes the corpus in the public dataset's layout
    /// (`<root>/<subject>/<code>_<subject>_R<nn>.txt`) plus
    /// `annotations.csv` and `subjects.csv`.
    pub fn write(&self, root: &Path, spec: &CalibrationSpec) -> Result<()> {
        for t in &self.trials {
            let dir = root.join(t.trial.id.subject.as_str());
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join(t.trial.id.file_name());
            std::fs::write(&path, format_trial_file(&t.trial.samples, spec)).map_err(|e| Error::io(&path, e))?;
        }
        self.annotations()?.write(&root.join("annotations.csv"))?;
        write_subjects(&root.join("subjects.csv"), &self.profiles)
    }
}

/// Generates subjects with plausible statics and one trial per (subject,
/// activity, repetition). Elderly subjects perform ADLs only.
pub fn generate_corpus(cfg: &SyntheticCorpusConfig) -> Result<SyntheticCorpus> {
    if cfg.young_subjects == 0 || cfg.repetitions == 0 || cfg.repetitions > 5 {
        return Err(invalid("need at least one young subject and 1..=5 repetitions"));
    }
    if cfg.young_subjects > 23 || cfg.elderly_subjects > 15 || cfg.fall_codes > 15 || cfg.adl_codes > 19 {
        return Err(invalid("corpus size exceeds the public dataset's code ranges"));
    }
    let (lo, hi) = cfg.fall_duration_s;
    if !(lo > 0.0 && hi >= lo) {
        return Err(invalid("bad fall duration range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut profiles = Vec::new();
    for k in 1..=cfg.young_subjects {
        profiles.push(SubjectProfile {
            subject_id: SubjectId::new(&format!("SA{k:02}"))?,
            age: rng.random_range(19.0..31.0_f64).round(),
            height_cm: rng.random_range(150.0..185.0_f64).round(),
            weight_kg: rng.random_range(45.0..90.0_f64).round(),
            gender: (k % 2) as f64,
        });
    }
    for k in 1..=cfg.elderly_subjects {
        profiles.push(SubjectProfile {
            subject_id: SubjectId::new(&format!("SE{k:02}"))?,
            age: rng.random_range(60.0..76.0_f64).round(),
            height_cm: rng.random_range(145.0..180.0_f64).round(),
            weight_kg: rng.random_range(50.0..100.0_f64).round(),
            gender: (k % 2) as f64,
        });
    }
    let mut specs = Vec::new();
    for p in &profiles {
        let falls = if p.subject_id.is_elderly() { 0 } else { cfg.fall_codes };
        for f in 1..=falls {
            for rep in 1..=cfg.repetitions {
                let id = TrialId::new(ActivityCode::new(ActivityKind::Fall, f as u8)?, p.subject_id.clone(), rep)?;
                let onset = rng.random_range(1.5..cfg.duration_s * 0.45);
                let len = rng.random_range(lo..=hi);
                let angle = rng.random_range(0.0..2.0 * PI);
                let mut spec = SyntheticSpec::fall(id, cfg.duration_s, onset, onset + len, cfg.noise_g);
                spec.fall_axis = [angle.cos(), 0.0, angle.sin()];
                spec.yaw = rng.random_range(-PI..PI);
                specs.push(spec);
            }
        }
        for a in 1..=cfg.adl_codes {
            let code = ActivityCode::new(ActivityKind::Adl, a as u8)?;
            for rep in 1..=cfg.repetitions.min(code.expected_repetitions()) {
                let id = TrialId::new(code, p.subject_id.clone(), rep)?;
                let kind = if a % 2 == 1 { SyntheticKind::Walk } else { SyntheticKind::Sit };
                specs.push(SyntheticSpec {
                    id,
                    kind,
                    duration_s: cfg.duration_s,
                    onset_s: 0.0,
                    impact_s: 0.0,
                    noise_g: cfg.noise_g,
                    fall_axis: [1.0, 0.0, 0.0],
                    yaw: rng.random_range(-PI..PI),
                });
            }
        }
    }
    let trials = specs
        .iter()
        .enumerate()
        .map(|(k, s)| generate_synthetic_trial(s, cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(k as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticCorpus { profiles, trials })
}
