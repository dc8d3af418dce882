//! Six-axis attitude estimation.
//!
//! An error-state Kalman filter with a three-dimensional attitude-error state.
//! The gyroscope drives prediction, the accelerometer supplies a gravity
//! direction measurement when its magnitude is close to 1 g. There is no
//! magnetometer, so yaw drifts freely; the tilt angle does not depend on it.
//!
//! The quaternion maps body coordinates to a world frame whose +z axis points
//! up (opposite to gravity). Error state convention: `q_true = q ⊗ Exp(δθ)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sisfall::{CalibratedSample, SAMPLE_PERIOD_S};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Scalar-first unit quaternion `(q1, q2, q3, q4) = (w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }

    /// Unit norm with non-negative scalar part.
    pub fn normalized(self) -> Self {
        let n = self.norm();
        let q = Self::new(self.w / n, self.x / n, self.y / n, self.z / n);
        if q.w < 0.0 {
            q.neg()
        } else {
            q
        }
    }

    pub fn mul(self, o: Self) -> Self {
        Self {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    /// Exact exponential of a rotation vector (axis * angle, radians).
    pub fn from_rotation_vector(v: Vec3) -> Self {
        let angle = norm3(v);
        let half = 0.5 * angle;
        // sin(a/2)/a, with its series near zero
        let k = if angle < 1e-8 {
            0.5 - angle * angle / 48.0
        } else {
            half.sin() / angle
        };
        Self::new(half.cos(), v[0] * k, v[1] * k, v[2] * k)
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm3(axis);
        Self::from_rotation_vector([axis[0] / n * angle, axis[1] / n * angle, axis[2] / n * angle])
    }

    /// Smallest rotation taking unit vector `from` onto unit vector `to`.
    pub fn between(from: Vec3, to: Vec3) -> Self {
        let d = dot3(from, to);
        if d < -1.0 + 1e-12 {
            // antiparallel: any perpendicular axis works
            let axis = if from[0].abs() < 0.9 {
                cross3(from, [1.0, 0.0, 0.0])
            } else {
                cross3(from, [0.0, 1.0, 0.0])
            };
            return Self::from_axis_angle(axis, std::f64::consts::PI).normalized();
        }
        let c = cross3(from, to);
        Self::new(1.0 + d, c[0], c[1], c[2]).normalized()
    }

    pub fn rotation_matrix(self) -> Mat3 {
        let Self { w, x, y, z } = self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        mat_vec(&self.rotation_matrix(), v)
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm3(v: Vec3) -> f64 {
    dot3(v, v).sqrt()
}

fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot3(m[0], v), dot3(m[1], v), dot3(m[2], v)]
}

fn transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = m[j][i];
        }
    }
    t
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

fn mat_add(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = *a;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] += b[i][j];
        }
    }
    c
}

fn symmetrize(m: &Mat3) -> Mat3 {
    let mut s = *m;
    for i in 0..3 {
        for j in (i + 1)..3 {
            let v = 0.5 * (m[i][j] + m[j][i]);
            s[i][j] = v;
            s[j][i] = v;
        }
    }
    s
}

fn skew(v: Vec3) -> Mat3 {
    [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
}

fn identity3(scale: f64) -> Mat3 {
    [[scale, 0.0, 0.0], [0.0, scale, 0.0], [0.0, 0.0, scale]]
}

fn inverse3(m: &Mat3) -> Option<Mat3> {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    let inv = 1.0 / det;
    Some([
        [
            c00 * inv,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv,
        ],
        [
            c01 * inv,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv,
        ],
        [
            c02 * inv,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv,
        ],
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimaryAccelerometer {
    Adxl345,
    Mma8451q,
}

impl PrimaryAccelerometer {
    pub fn read(self, s: &CalibratedSample) -> Vec3 {
        match self {
            PrimaryAccelerometer::Adxl345 => s.adxl345,
            PrimaryAccelerometer::Mma8451q => s.mma8451q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Gyro process noise density, rad^2/s.
    pub process_noise: f64,
    /// Accelerometer direction measurement noise, g^2.
    pub measurement_noise: f64,
    /// Accelerometer magnitudes outside `[gate_low, gate_high]` g skip the update.
    pub gate_low: f64,
    pub gate_high: f64,
    /// Initial attitude variance (rad^2) after a static start.
    pub initial_variance: f64,
    /// Initial attitude variance when the trial starts in motion.
    pub dynamic_initial_variance: f64,
    /// Length of the accelerometer average used to initialize, seconds.
    pub init_window_s: f64,
    pub accelerometer: PrimaryAccelerometer,
    /// Body axis whose angle to the world vertical is reported as the tilt.
    pub vertical_axis: Vec3,
    /// 1 = angular rate, 2 = angular acceleration.
    pub derivative_order: u8,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            process_noise: 0.01,
            measurement_noise: 0.05,
            gate_low: 0.7,
            gate_high: 1.3,
            initial_variance: 0.01,
            dynamic_initial_variance: 1.0,
            init_window_s: 0.5,
            accelerometer: PrimaryAccelerometer::Adxl345,
            vertical_axis: [0.0, 0.0, 1.0],
            derivative_order: 2,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.process_noise >= 0.0 && self.measurement_noise > 0.0) {
            return Err(invalid("filter noise parameters must be non-negative (measurement > 0)"));
        }
        if !(self.gate_low < self.gate_high) {
            return Err(invalid("gate_low must be below gate_high"));
        }
        if !(norm3(self.vertical_axis) > 0.0) {
            return Err(invalid("vertical_axis must be non-zero"));
        }
        if !matches!(self.derivative_order, 1 | 2) {
            return Err(invalid("derivative_order must be 1 or 2"));
        }
        Ok(())
    }

    fn gated(&self, a: Vec3) -> bool {
        let m = norm3(a);
        m >= self.gate_low && m <= self.gate_high
    }

    fn unit_vertical(&self) -> Vec3 {
        let n = norm3(self.vertical_axis);
        [self.vertical_axis[0] / n, self.vertical_axis[1] / n, self.vertical_axis[2] / n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub q: Quaternion,
    /// Attitude error covariance, rad^2.
    pub p: Mat3,
    pub config: FilterConfig,
}

impl FilterState {
    pub fn new(q: Quaternion, variance: f64, config: FilterConfig) -> Self {
        Self {
            q: q.normalized(),
            p: identity3(variance),
            config,
        }
    }

    /// Initial state from a window of accelerometer readings: aligns their
    /// mean with world up, or falls back to identity with inflated covariance
    /// if any reading is outside the gating band.
    pub fn from_accelerometer(window: &[Vec3], config: FilterConfig) -> Self {
        if window.is_empty() || window.iter().any(|a| !config.gated(*a)) {
            return Self::new(Quaternion::IDENTITY, config.dynamic_initial_variance, config);
        }
        let mut mean = [0.0; 3];
        for a in window {
            for k in 0..3 {
                mean[k] += a[k];
            }
        }
        let n = norm3(mean);
        let up = [mean[0] / n, mean[1] / n, mean[2] / n];
        let q = Quaternion::between(up, [0.0, 0.0, 1.0]);
        Self::new(q, config.initial_variance, config)
    }

    pub fn tilt(&self) -> f64 {
        tilt_about(self.q, self.config.unit_vertical())
    }
}

fn check_finite3(v: Vec3, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Gyro propagation over `dt` seconds; `gyro_dps` in deg/s.
pub fn predict_step(s: &FilterState, gyro_dps: Vec3, dt: f64) -> Result<FilterState> {
    check_finite3(gyro_dps, "gyroscope")?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    let k = std::f64::consts::PI / 180.0 * dt;
    let rotvec = [gyro_dps[0] * k, gyro_dps[1] * k, gyro_dps[2] * k];
    let dq = Quaternion::from_rotation_vector(rotvec);
    let q = s.q.mul(dq).normalized();

    let f = transpose(&dq.rotation_matrix());
    let fp = mat_mul(&f, &s.p);
    let mut p = mat_mul(&fp, &transpose(&f));
    let qd = s.config.process_noise * dt;
    for i in 0..3 {
        p[i][i] += qd;
    }
    Ok(FilterState {
        q,
        p: symmetrize(&p),
        config: s.config,
    })
}

/// Accelerometer correction; `accel_g` in g. Returns the state unchanged
/// when the magnitude is outside the gating band.
pub fn update_step(s: &FilterState, accel_g: Vec3) -> Result<FilterState> {
    check_finite3(accel_g, "accelerometer")?;
    if !s.config.gated(accel_g) {
        return Ok(*s);
    }
    let n = norm3(accel_g);
    let z = [accel_g[0] / n, accel_g[1] / n, accel_g[2] / n];
    // predicted up direction in body coordinates
    let r = s.q.rotation_matrix();
    let h0 = [r[2][0], r[2][1], r[2][2]];
    let innovation = [z[0] - h0[0], z[1] - h0[1], z[2] - h0[2]];

    let h = skew(h0);
    let ht = transpose(&h);
    let s_mat = mat_add(&mat_mul(&mat_mul(&h, &s.p), &ht), &identity3(s.config.measurement_noise));
    let s_inv = inverse3(&s_mat).ok_or(Error::NonFinite("innovation covariance"))?;
    let gain = mat_mul(&mat_mul(&s.p, &ht), &s_inv);

    let dtheta = mat_vec(&gain, innovation);
    let q = if dtheta == [0.0; 3] {
        s.q
    } else {
        s.q.mul(Quaternion::from_rotation_vector(dtheta)).normalized()
    };

    // Joseph form keeps P positive semi-definite
    let kh = mat_mul(&gain, &h);
    let mut ikh = identity3(1.0);
    for i in 0..3 {
        for j in 0..3 {
            ikh[i][j] -= kh[i][j];
        }
    }
    let p = mat_add(
        &mat_mul(&mat_mul(&ikh, &s.p), &transpose(&ikh)),
        &mat_mul(&identity3(s.config.measurement_noise), &mat_mul(&gain, &transpose(&gain))),
    );
    let next = FilterState {
        q,
        p: symmetrize(&p),
        config: s.config,
    };
    if !next.q.is_finite() {
        return Err(Error::NonFinite("attitude"));
    }
    Ok(next)
}

/// Angle between the body +z axis and the world vertical, in `[0, π]`.
pub fn tilt_angle(q: Quaternion) -> Result<f64> {
    if (q.norm() - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("quaternion norm {} is not unit", q.norm())));
    }
    Ok(tilt_about(q, [0.0, 0.0, 1.0]))
}

pub fn tilt_angle_about(q: Quaternion, body_axis: Vec3) -> Result<f64> {
    if (q.norm() - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("quaternion norm {} is not unit", q.norm())));
    }
    let n = norm3(body_axis);
    Ok(tilt_about(q, [body_axis[0] / n, body_axis[1] / n, body_axis[2] / n]))
}

fn tilt_about(q: Quaternion, axis: Vec3) -> f64 {
    let r = q.rotation_matrix();
    // world z component of the rotated axis
    let c = r[2][0] * axis[0] + r[2][1] * axis[1] + r[2][2] * axis[2];
    c.clamp(-1.0, 1.0).acos()
}

/// Finite-difference derivative of a uniformly sampled series: central
/// differences inside, one-sided at the ends (exact for polynomials up to
/// the order's degree).
pub fn angular_derivative(series: &[f64], dt: f64, order: u8) -> Result<Vec<f64>> {
    let n = series.len();
    match order {
        1 => {
            if n < 2 {
                return Err(invalid("first derivative needs at least 2 samples"));
            }
            let mut out = vec![0.0; n];
            out[0] = (series[1] - series[0]) / dt;
            out[n - 1] = (series[n - 1] - series[n - 2]) / dt;
            for i in 1..n - 1 {
                out[i] = (series[i + 1] - series[i - 1]) / (2.0 * dt);
            }
            Ok(out)
        }
        2 => {
            if n < 3 {
                return Err(invalid("second derivative needs at least 3 samples"));
            }
            let dt2 = dt * dt;
            let mut out = vec![0.0; n];
            for i in 1..n - 1 {
                out[i] = (series[i + 1] - 2.0 * series[i] + series[i - 1]) / dt2;
            }
            out[0] = out[1];
            out[n - 1] = out[n - 2];
            Ok(out)
        }
        _ => Err(invalid(format!("derivative order {order} not in {{1, 2}}"))),
    }
}

/// Per-sample filter output for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationTrack {
    pub quaternions: Vec<Quaternion>,
    /// Radians, in `[0, π]`.
    pub tilt: Vec<f64>,
    /// Derivative of the tilt (order from the filter config).
    pub tilt_rate: Vec<f64>,
}

pub fn estimate_orientation(samples: &[CalibratedSample], config: &FilterConfig) -> Result<Vec<Quaternion>> {
    if samples.is_empty() {
        return Err(invalid("orientation needs at least one sample"));
    }
    config.validate()?;
    let init_len = ((config.init_window_s / SAMPLE_PERIOD_S).round() as usize).clamp(1, samples.len());
    let window: Vec<Vec3> = samples[..init_len]
        .iter()
        .map(|s| config.accelerometer.read(s))
        .collect();
    let mut state = FilterState::from_accelerometer(&window, *config);
    let mut out = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if i > 0 {
            state = predict_step(&state, s.gyro_dps, SAMPLE_PERIOD_S)?;
        }
        state = update_step(&state, config.accelerometer.read(s))?;
        out.push(state.q);
    }
    Ok(out)
}

pub fn track_orientation(samples: &[CalibratedSample], config: &FilterConfig) -> Result<OrientationTrack> {
    let quaternions = estimate_orientation(samples, config)?;
    let axis = config.unit_vertical();
    let tilt: Vec<f64> = quaternions.iter().map(|q| tilt_about(*q, axis)).collect();
    let tilt_rate = if tilt.len() > config.derivative_order as usize {
        angular_derivative(&tilt, SAMPLE_PERIOD_S, config.derivative_order)?
    } else {
        vec![0.0; tilt.len()]
    };
    Ok(OrientationTrack {
        quaternions,
        tilt,
        tilt_rate,
    })
}

/// Causal, sample-at-a-time orientation for live streams. Initializes from
/// the first accelerometer reading and differentiates the tilt with
/// backward differences.
#[derive(Debug, Clone)]
pub struct OnlineOrientation {
    config: FilterConfig,
    state: Option<FilterState>,
    history: [f64; 2],
    seen: usize,
}

impl OnlineOrientation {
    pub fn new(config: FilterConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: None,
            history: [0.0; 2],
            seen: 0,
        })
    }

    /// Returns `(quaternion, tilt, tilt derivative)` for this sample.
    pub fn push(&mut self, s: &CalibratedSample) -> Result<(Quaternion, f64, f64)> {
        let accel = self.config.accelerometer.read(s);
        let state = match self.state {
            None => FilterState::from_accelerometer(&[accel], self.config),
            Some(prev) => predict_step(&prev, s.gyro_dps, SAMPLE_PERIOD_S)?,
        };
        let state = update_step(&state, accel)?;
        self.state = Some(state);
        let theta = state.tilt();
        let dt = SAMPLE_PERIOD_S;
        let rate = match (self.config.derivative_order, self.seen) {
            (1, n) if n >= 1 => (theta - self.history[0]) / dt,
            (2, n) if n >= 2 => (theta - 2.0 * self.history[0] + self.history[1]) / (dt * dt),
            _ => 0.0,
        };
        self.history = [theta, self.history[0]];
        self.seen += 1;
        Ok((state.q, theta, rate))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn static_samples(up_body: Vec3, n: usize) -> Vec<CalibratedSample> {
        (0..n)
            .map(|i| CalibratedSample {
                adxl345: up_body,
                mma8451q: up_body,
                gyro_dps: [0.0; 3],
                t: i as f64 * SAMPLE_PERIOD_S,
            })
            .collect()
    }

    /// Specific force seen by a body tilted by `phi` about x while at rest.
    fn tilted_up(phi: f64) -> Vec3 {
        let q = Quaternion::from_axis_angle([1.0, 0.0, 0.0], phi);
        let r = q.rotation_matrix();
        [r[2][0], r[2][1], r[2][2]]
    }

    fn assert_sym(p: &Mat3) {
        for i in 0..3 {
            for j in 0..3 {
                assert!((p[i][j] - p[j][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_rate_keeps_attitude_and_grows_covariance() {
        let s = FilterState::new(Quaternion::IDENTITY, 0.01, FilterConfig::default());
        let n = predict_step(&s, [0.0; 3], 0.005).unwrap();
        assert_eq!(n.q, s.q);
        for i in 0..3 {
            assert!((n.p[i][i] - (0.01 + 0.01 * 0.005)).abs() < 1e-15);
        }
    }

    #[test]
    fn ninety_degrees_about_z() {
        let s = FilterState::new(Quaternion::IDENTITY, 0.01, FilterConfig::default());
        let n = predict_step(&s, [0.0, 0.0, 90.0], 1.0).unwrap();
        let c = FRAC_PI_4.cos();
        assert!((n.q.w - c).abs() < 1e-12);
        assert!(n.q.x.abs() < 1e-15 && n.q.y.abs() < 1e-15);
        assert!((n.q.z - FRAC_PI_4.sin()).abs() < 1e-12);
    }

    #[test]
    fn predict_rejects_bad_input() {
        let s = FilterState::new(Quaternion::IDENTITY, 0.01, FilterConfig::default());
        assert!(predict_step(&s, [f64::NAN, 0.0, 0.0], 0.005).is_err());
        assert!(predict_step(&s, [0.0; 3], 0.0).is_err());
        assert!(update_step(&s, [f64::INFINITY, 0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_innovation_leaves_attitude() {
        let s = FilterState::new(Quaternion::IDENTITY, 0.01, FilterConfig::default());
        let n = update_step(&s, [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(n.q, s.q);
        assert_sym(&n.p);
    }

    #[test]
    fn gating_skips_large_accelerations() {
        let s = FilterState::new(Quaternion::from_axis_angle([1.0, 0.0, 0.0], 0.3), 0.01, FilterConfig::default());
        assert_eq!(update_step(&s, [0.0, 0.0, 3.0]).unwrap(), s);
        assert_eq!(update_step(&s, [0.0, 0.1, 0.2]).unwrap(), s);
    }

    #[test]
    fn repeated_updates_converge_to_static_tilt() {
        let phi = 35f64.to_radians();
        let up = tilted_up(phi);
        let cfg = FilterConfig::default();
        let mut s = FilterState::new(Quaternion::IDENTITY, cfg.initial_variance, cfg);
        for _ in 0..400 {
            s = predict_step(&s, [0.0; 3], SAMPLE_PERIOD_S).unwrap();
            s = update_step(&s, up).unwrap();
        }
        assert!((s.tilt() - phi).abs() < 0.5f64.to_radians(), "tilt {}", s.tilt().to_degrees());
    }

    #[test]
    fn static_trials() {
        let cfg = FilterConfig::default();
        let upright = track_orientation(&static_samples([0.0, 0.0, 1.0], 600), &cfg).unwrap();
        assert_eq!(upright.quaternions.len(), 600);
        assert!(upright.tilt.iter().all(|t| t.abs() < 1e-9));
        assert!(upright.quaternions.iter().all(|q| (q.w - 1.0).abs() < 1e-12));

        let side = track_orientation(&static_samples([0.0, 1.0, 0.0], 600), &cfg).unwrap();
        assert!((side.tilt[599] - FRAC_PI_2).abs() < 1f64.to_radians());
    }

    #[test]
    fn dynamic_start_falls_back_to_identity() {
        let cfg = FilterConfig::default();
        let s = FilterState::from_accelerometer(&[[0.0, 0.0, 1.0], [0.0, 0.0, 2.5]], cfg);
        assert_eq!(s.q, Quaternion::IDENTITY);
        assert_eq!(s.p[0][0], cfg.dynamic_initial_variance);
    }

    #[test]
    fn tilt_examples() {
        assert_eq!(tilt_angle(Quaternion::IDENTITY).unwrap(), 0.0);
        let q = Quaternion::from_axis_angle([1.0, 0.0, 0.0], FRAC_PI_2);
        assert!((tilt_angle(q).unwrap() - FRAC_PI_2).abs() < 1e-12);
        assert_eq!(tilt_angle(q).unwrap(), tilt_angle(q.neg()).unwrap());
        let flipped = Quaternion::from_axis_angle([0.0, 1.0, 0.0], PI);
        assert!((tilt_angle(flipped).unwrap() - PI).abs() < 1e-7);
        assert!(tilt_angle(Quaternion::new(1.1, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn derivative_examples() {
        let c = vec![3.0; 10];
        assert!(angular_derivative(&c, 0.005, 1).unwrap().iter().all(|v| *v == 0.0));
        assert!(angular_derivative(&c, 0.005, 2).unwrap().iter().all(|v| *v == 0.0));

        let dt = 0.25;
        let ramp: Vec<f64> = (0..12).map(|i| 1.5 * i as f64 * dt).collect();
        assert!(angular_derivative(&ramp, dt, 1).unwrap().iter().all(|v| (v - 1.5).abs() < 1e-12));
        assert!(angular_derivative(&ramp, dt, 2).unwrap().iter().all(|v| v.abs() < 1e-9));

        let dt = 0.005;
        let quad: Vec<f64> = (0..200).map(|i| (i as f64 * dt).powi(2)).collect();
        let d2 = angular_derivative(&quad, dt, 2).unwrap();
        assert!(d2[1..199].iter().all(|v| (v - 2.0).abs() < 1e-6));

        assert!(angular_derivative(&[1.0, 2.0], dt, 2).is_err());
        assert!(angular_derivative(&[1.0], dt, 1).is_err());
        assert!(angular_derivative(&[1.0, 2.0, 3.0], dt, 3).is_err());
    }

    #[test]
    fn random_walk_keeps_unit_norm_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = FilterState::new(Quaternion::IDENTITY, 0.01, FilterConfig::default());
        for _ in 0..20_000 {
            let w = [rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0)];
            s = predict_step(&s, w, SAMPLE_PERIOD_S).unwrap();
            let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            s = update_step(&s, a).unwrap();
            assert!((s.q.norm() - 1.0).abs() < 1e-9);
            assert!(s.q.w >= 0.0);
            assert_sym(&s.p);
            assert!(s.p[0][0] >= 0.0 && s.p[1][1] >= 0.0 && s.p[2][2] >= 0.0);
        }
    }

    #[test]
    fn online_matches_offline_after_identical_start() {
        let cfg = FilterConfig::default();
        let samples = static_samples(tilted_up(0.4), 50);
        let offline = track_orientation(&samples, &FilterConfig { init_window_s: 0.005, ..cfg }).unwrap();
        let mut online = OnlineOrientation::new(cfg).unwrap();
        for (i, s) in samples.iter().enumerate() {
            let (q, theta, _) = online.push(s).unwrap();
            assert_eq!(q, offline.quaternions[i]);
            assert_eq!(theta, offline.tilt[i]);
        }
    }
}
