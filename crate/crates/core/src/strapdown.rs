//! Strapdown dead reckoning for a single IMU.
//!
//! The navigation frame is a local tangent frame fixed to the start position:
//! `x` magnetic north, `y` west, `z` up. Gravity is `(0, 0, −9.81)` and a level
//! stationary accelerometer reads `+9.81` on its `z` axis.
//!
//! Attitude advances with the first-order quaternion kinematics
//! `q̇ = ½ q ⊗ ω` and is renormalized every step. Velocity and position use the
//! trapezoid on the corrected world-frame acceleration, with the earth-rate
//! Coriolis term `−2 ω⊕ × v` applied to each velocity increment.

use nalgebra::SMatrix;

use crate::error::{Error, Result};
use crate::geometry::{Quaternion, Vec3};

pub const STANDARD_GRAVITY: f64 = 9.81;
/// Sidereal rotation rate of the Earth [rad/s].
pub const EARTH_RATE: f64 = 7.29e-5;
/// Largest step accepted by the integrators [s]; longer gaps are rejected.
pub const MAX_STEP: f64 = 0.1;

pub type Cov9 = SMatrix<f64, 9, 9>;

/// One synchronized accelerometer/gyroscope/magnetometer reading in body axes.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Specific force [m/s²].
    pub acc: Vec3,
    /// Angular rate [rad/s].
    pub gyro: Vec3,
    /// Magnetic flux density [µT].
    pub mag: Vec3,
    pub sensor_id: String,
}

impl ImuSample {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.acc.iter().chain(self.gyro.iter()).chain(self.mag.iter()).all(|v| v.is_finite())
    }
}

/// Gaussian white noise levels and constant biases of the three sensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SensorNoiseModel {
    pub gyro_sigma: f64,
    pub gyro_bias: Vec3,
    pub acc_sigma: f64,
    pub acc_bias: Vec3,
    pub mag_sigma: f64,
}

impl SensorNoiseModel {
    pub fn noiseless() -> Self {
        SensorNoiseModel::default()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.gyro_sigma, self.acc_sigma, self.mag_sigma]
            .iter()
            .all(|s| *s >= 0.0 && s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::contract("noise sigmas must be finite and non-negative"))
        }
    }

    /// Remove the known constant biases from a raw sample.
    pub fn compensate(&self, sample: &ImuSample) -> ImuSample {
        ImuSample {
            acc: sample.acc - self.acc_bias,
            gyro: sample.gyro - self.gyro_bias,
            ..sample.clone()
        }
    }
}

/// Attitude, velocity and position of one sensor in its navigation frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseState {
    pub t: f64,
    /// Body → navigation frame.
    pub q: Quaternion,
    /// Velocity in the navigation frame [m/s].
    pub v: Vec3,
    /// Position in the navigation frame [m].
    pub s: Vec3,
    /// Attitude (rad), velocity, position uncertainty, in that block order.
    pub cov: Cov9,
}

impl PoseState {
    pub fn new(t: f64, q: Quaternion, v: Vec3, s: Vec3) -> Self {
        PoseState {
            t,
            q,
            v,
            s,
            cov: Cov9::zeros(),
        }
    }

    pub fn at_rest(t: f64, q: Quaternion) -> Self {
        PoseState::new(t, q, Vec3::zeros(), Vec3::zeros())
    }
}

/// Gravity and earth-rate vectors of the navigation frame.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentConstants {
    pub gravity: Vec3,
    pub earth_rate: Vec3,
    pub latitude: f64,
}

impl EnvironmentConstants {
    /// Standard gravity and earth rate oriented for the given latitude [rad]
    /// in the north-west-up frame.
    pub fn at_latitude(latitude: f64) -> Self {
        EnvironmentConstants {
            gravity: Vec3::new(0.0, 0.0, -STANDARD_GRAVITY),
            earth_rate: EARTH_RATE * Vec3::new(latitude.cos(), 0.0, latitude.sin()),
            latitude,
        }
    }

    pub fn without_earth_rate(mut self) -> Self {
        self.earth_rate = Vec3::zeros();
        self
    }
}

impl Default for EnvironmentConstants {
    fn default() -> Self {
        EnvironmentConstants::at_latitude(0.0)
    }
}

fn check_step(dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::contract(format!("step must be positive, got dt = {dt}")));
    }
    // Relative slack so a nominal 10 Hz step survives rounding of k·dt.
    if dt > MAX_STEP * (1.0 + 1e-9) {
        return Err(Error::contract(format!(
            "step of {dt} s exceeds the {MAX_STEP} s integration limit"
        )));
    }
    Ok(())
}

/// Advance the attitude by one step of body rate `gyro` [rad/s].
pub fn propagate_attitude(state: &PoseState, gyro: &Vec3, dt: f64) -> Result<PoseState> {
    check_step(dt)?;
    let q = state.q;
    let dq = q * Quaternion::new(0.0, gyro.x, gyro.y, gyro.z);
    let h = 0.5 * dt;
    let next = Quaternion::new(q.w + h * dq.w, q.x + h * dq.x, q.y + h * dq.y, q.z + h * dq.z);
    Ok(PoseState {
        t: state.t + dt,
        q: next.normalized(),
        ..state.clone()
    })
}

/// The individual terms of the corrected acceleration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccelerationTerms {
    /// Specific force rotated into the navigation frame.
    pub specific_force: Vec3,
    /// `ω × v`, with `ω` rotated into the navigation frame.
    pub rotation_term: Vec3,
    /// Gravity of the navigation frame.
    pub gravity: Vec3,
}

impl AccelerationTerms {
    pub fn total(&self) -> Vec3 {
        self.specific_force + self.rotation_term + self.gravity
    }
}

pub fn acceleration_terms(
    q: &Quaternion,
    v: &Vec3,
    acc_body: &Vec3,
    env: &EnvironmentConstants,
    omega_body: &Vec3,
) -> AccelerationTerms {
    AccelerationTerms {
        specific_force: q.rotate(acc_body),
        rotation_term: q.rotate(omega_body).cross(v),
        gravity: env.gravity,
    }
}

/// Kinematic acceleration in the navigation frame:
/// `R·f + (R·ω) × v + g`.
///
/// `omega_body` is the rotation rate of the frame the velocity is resolved in.
/// The earth-fixed navigation frame used by [`dead_reckon`] does not rotate
/// relative to itself, so the integrators pass zero here and carry the
/// Coriolis contribution in the earth-rate term instead.
pub fn correct_acceleration(
    state: &PoseState,
    acc_body: &Vec3,
    env: &EnvironmentConstants,
    omega_body: &Vec3,
) -> Vec3 {
    acceleration_terms(&state.q, &state.v, acc_body, env, omega_body).total()
}

/// `−2 ω⊕ × ∫a dt` per unit time, the earth-rate velocity correction.
pub fn earth_rate_correction(env: &EnvironmentConstants, integrated_acc: &Vec3) -> Vec3 {
    -2.0 * env.earth_rate.cross(integrated_acc)
}

/// Integrate velocity and position across a window of samples.
///
/// `attitudes[k]` is the body→navigation attitude at `window[k]`; the state
/// is taken to be at `window[0]`. The returned state carries the last
/// attitude and timestamp.
pub fn propagate_velocity_position(
    state: &PoseState,
    window: &[ImuSample],
    attitudes: &[Quaternion],
    env: &EnvironmentConstants,
) -> Result<PoseState> {
    if window.len() != attitudes.len() {
        return Err(Error::contract(format!(
            "{} samples but {} attitudes",
            window.len(),
            attitudes.len()
        )));
    }
    let Some(first) = window.first() else {
        return Ok(state.clone());
    };
    let mut out = state.clone();
    let zero = Vec3::zeros();
    let mut a_prev = acceleration_terms(&attitudes[0], &out.v, &first.acc, env, &zero).total();
    for k in 1..window.len() {
        let dt = window[k].t - window[k - 1].t;
        if !(dt > 0.0) {
            return Err(Error::contract(format!(
                "samples out of order at t = {} (previous {})",
                window[k].t,
                window[k - 1].t
            ))
            .at_time(window[k].t));
        }
        check_step(dt).map_err(|e| e.at_time(window[k].t))?;
        let a_next = acceleration_terms(&attitudes[k], &out.v, &window[k].acc, env, &zero).total();
        let dv_inertial = 0.5 * (a_prev + a_next) * dt;
        let v_mid = out.v + 0.5 * dv_inertial;
        let dv = dv_inertial + dt * earth_rate_correction(env, &v_mid);
        out.s += dt * out.v + 0.5 * dt * dv;
        out.v += dv;
        out.cov = propagate_cov(&out.cov, dt, None);
        a_prev = a_next;
    }
    out.t = window[window.len() - 1].t;
    out.q = attitudes[attitudes.len() - 1];
    Ok(out)
}

/// Linear error propagation `P ← F P Fᵀ + Q` with position fed by velocity.
fn propagate_cov(p: &Cov9, dt: f64, noise: Option<&SensorNoiseModel>) -> Cov9 {
    let mut f = Cov9::identity();
    for i in 0..3 {
        f[(6 + i, 3 + i)] = dt;
    }
    let mut next = f * p * f.transpose();
    if let Some(n) = noise {
        for i in 0..3 {
            next[(i, i)] += n.gyro_sigma.powi(2) * dt * dt;
            next[(3 + i, 3 + i)] += n.acc_sigma.powi(2) * dt * dt;
        }
    }
    0.5 * (next + next.transpose())
}

/// Propagate `initial` through the whole trace, one state per sample.
pub fn dead_reckon(
    trace: &[ImuSample],
    initial: &PoseState,
    env: &EnvironmentConstants,
) -> Result<Vec<PoseState>> {
    reckon(trace, initial, env, None)
}

/// As [`dead_reckon`], additionally removing the known sensor biases and
/// growing the covariance by the white-noise levels of `noise`.
pub fn dead_reckon_with_noise(
    trace: &[ImuSample],
    initial: &PoseState,
    env: &EnvironmentConstants,
    noise: &SensorNoiseModel,
) -> Result<Vec<PoseState>> {
    noise.validate()?;
    let compensated: Vec<ImuSample> = trace.iter().map(|s| noise.compensate(s)).collect();
    reckon(&compensated, initial, env, Some(noise))
}

fn reckon(
    trace: &[ImuSample],
    initial: &PoseState,
    env: &EnvironmentConstants,
    noise: Option<&SensorNoiseModel>,
) -> Result<Vec<PoseState>> {
    let Some(first) = trace.first() else {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    };
    let mut states = Vec::with_capacity(trace.len());
    let mut state = PoseState {
        t: first.t,
        ..initial.clone()
    };
    states.push(state.clone());
    for pair in trace.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if !b.is_finite() {
            return Err(Error::contract("non-finite sample").at_time(b.t));
        }
        let dt = b.t - a.t;
        let gyro = 0.5 * (a.gyro + b.gyro);
        let rotated = propagate_attitude(&state, &gyro, dt).map_err(|e| e.at_time(b.t))?;
        let mut next = propagate_velocity_position(&state, pair, &[state.q, rotated.q], env)?;
        if noise.is_some() {
            next.cov = propagate_cov(&state.cov, dt, noise);
        }
        state = next;
        states.push(state.clone());
    }
    Ok(states)
}
