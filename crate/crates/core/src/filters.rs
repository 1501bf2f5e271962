//! Noise mitigation: an exponential low-pass for raw channels and a linear
//! position/velocity Kalman filter that takes world acceleration as control
//! input and magnetically derived position as measurement.

use std::f64::consts::TAU;

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};

pub type Vec6 = SVector<f64, 6>;
pub type Mat6 = SMatrix<f64, 6, 6>;
pub type Mat36 = SMatrix<f64, 3, 6>;
pub type Mat63 = SMatrix<f64, 6, 3>;

/// Default static-window length for offset removal [s].
pub const DEFAULT_OFFSET_WINDOW: f64 = 2.0;

/// First-order IIR low-pass, `y ← y + α(x − y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowPassState {
    pub cutoff_hz: f64,
    /// Smoothing factor of the most recent step.
    pub alpha: f64,
    /// `None` until the first sample, which initializes the output (warm start).
    pub last_output: Option<Vec3>,
}

impl LowPassState {
    pub fn new(cutoff_hz: f64) -> Result<Self> {
        if !(cutoff_hz > 0.0) {
            return Err(Error::contract(format!("cutoff must be positive, got {cutoff_hz} Hz")));
        }
        Ok(LowPassState {
            cutoff_hz,
            alpha: 1.0,
            last_output: None,
        })
    }

    /// A filter that passes its input through unchanged (α = 1).
    pub fn passthrough() -> Self {
        LowPassState {
            cutoff_hz: f64::INFINITY,
            alpha: 1.0,
            last_output: None,
        }
    }

    pub fn alpha_for(cutoff_hz: f64, dt: f64) -> f64 {
        let tau = 1.0 / (TAU * cutoff_hz);
        dt / (dt + tau)
    }

    /// Variance ratio output/input of the filter on white noise in steady state.
    pub fn white_noise_gain(alpha: f64) -> f64 {
        alpha / (2.0 - alpha)
    }

    pub fn step(&mut self, sample: &Vec3, dt: f64) -> Result<Vec3> {
        if !(dt > 0.0) {
            return Err(Error::contract(format!("low-pass step must be positive, got dt = {dt}")));
        }
        if !(self.cutoff_hz > 0.0) {
            return Err(Error::contract("cutoff must be positive"));
        }
        self.alpha = Self::alpha_for(self.cutoff_hz, dt);
        let y = match self.last_output {
            None => *sample,
            Some(prev) => prev + self.alpha * (sample - prev),
        };
        self.last_output = Some(y);
        Ok(y)
    }
}

pub fn lowpass_step(state: &LowPassState, sample: &Vec3, dt: f64) -> Result<(LowPassState, Vec3)> {
    let mut next = *state;
    let y = next.step(sample, dt)?;
    Ok((next, y))
}

/// Position/velocity filter: `x = [s; v]` with acceleration as control input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KalmanState {
    pub x: Vec6,
    pub p: Mat6,
    /// White acceleration noise standard deviation driving `Q` [m/s²].
    pub q_acc: f64,
    /// Covariance of position measurements [m²].
    pub r_meas: Mat3,
}

/// Per-update quantities kept for diagnostics and consistency checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateDiagnostics {
    pub innovation: Vec3,
    pub innovation_cov: Mat3,
    pub gain: Mat63,
    /// Normalized innovation squared `νᵀ S⁻¹ ν`.
    pub nis: f64,
}

impl KalmanState {
    pub fn new(position: Vec3, velocity: Vec3, p0: Mat6, q_acc: f64, r_meas: Mat3) -> Self {
        let mut x = Vec6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&position);
        x.fixed_rows_mut::<3>(3).copy_from(&velocity);
        KalmanState { x, p: p0, q_acc, r_meas }
    }

    /// Start at a known position with velocity zero and diagonal uncertainty.
    pub fn at_rest(position: Vec3, pos_sigma: f64, vel_sigma: f64, q_acc: f64, r_pos_sigma: f64) -> Self {
        let mut p0 = Mat6::zeros();
        for i in 0..3 {
            p0[(i, i)] = pos_sigma * pos_sigma;
            p0[(3 + i, 3 + i)] = vel_sigma * vel_sigma;
        }
        KalmanState::new(position, Vec3::zeros(), p0, q_acc, Mat3::identity() * r_pos_sigma * r_pos_sigma)
    }

    pub fn position(&self) -> Vec3 {
        self.x.fixed_rows::<3>(0).into()
    }

    pub fn velocity(&self) -> Vec3 {
        self.x.fixed_rows::<3>(3).into()
    }

    pub fn position_cov(&self) -> Mat3 {
        self.p.fixed_view::<3, 3>(0, 0).into()
    }

    pub fn predict(&mut self, acc_world: &Vec3, dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::contract(format!("prediction step must be positive, got dt = {dt}")));
        }
        let (f, g) = transition(dt);
        self.x = f * self.x + g * acc_world;
        let q = g * g.transpose() * (self.q_acc * self.q_acc);
        self.p = symmetrize(&(f * self.p * f.transpose() + q));
        Ok(())
    }

    /// Position measurement update (Joseph form).
    pub fn update(&mut self, pos_meas: &Vec3, r_meas: &Mat3) -> Result<UpdateDiagnostics> {
        if (r_meas - r_meas.transpose()).abs().max() > 1e-9 * r_meas.abs().max().max(1.0) {
            return Err(Error::contract("measurement covariance must be symmetric"));
        }
        if !r_meas.iter().all(|v| v.is_finite()) {
            return Err(Error::contract("measurement covariance must be finite"));
        }
        let h = measurement_matrix();
        let innovation = pos_meas - h * self.x;
        let s = symmetrize3(&(h * self.p * h.transpose() + r_meas));
        let s_inv = s
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Numerical("innovation covariance is singular".into()))?;
        let gain = self.p * h.transpose() * s_inv;
        self.x += gain * innovation;
        let ikh = Mat6::identity() - gain * h;
        self.p = symmetrize(&(ikh * self.p * ikh.transpose() + gain * r_meas * gain.transpose()));
        Ok(UpdateDiagnostics {
            innovation,
            innovation_cov: s,
            gain,
            nis: innovation.dot(&(s_inv * innovation)),
        })
    }
}

pub fn kalman_predict(state: &KalmanState, acc_world: &Vec3, dt: f64) -> Result<KalmanState> {
    let mut next = *state;
    next.predict(acc_world, dt)?;
    Ok(next)
}

pub fn kalman_update(state: &KalmanState, pos_meas: &Vec3, r_meas: &Mat3) -> Result<(KalmanState, UpdateDiagnostics)> {
    let mut next = *state;
    let diag = next.update(pos_meas, r_meas)?;
    Ok((next, diag))
}

fn transition(dt: f64) -> (Mat6, Mat63) {
    let mut f = Mat6::identity();
    let mut g = Mat63::zeros();
    for i in 0..3 {
        f[(i, 3 + i)] = dt;
        g[(i, i)] = 0.5 * dt * dt;
        g[(3 + i, i)] = dt;
    }
    (f, g)
}

fn measurement_matrix() -> Mat36 {
    let mut h = Mat36::zeros();
    for i in 0..3 {
        h[(i, i)] = 1.0;
    }
    h
}

fn symmetrize(p: &Mat6) -> Mat6 {
    0.5 * (p + p.transpose())
}

fn symmetrize3(p: &Mat3) -> Mat3 {
    0.5 * (p + p.transpose())
}

/// Smallest eigenvalue of a covariance, for PSD checks.
pub fn min_eigenvalue(p: &Mat6) -> f64 {
    p.symmetric_eigen().eigenvalues.min()
}

/// Mean of the samples within `window` seconds of the first timestamp.
pub fn static_offset(samples: &[(f64, Vec3)], window: f64) -> Result<Vec3> {
    if !(window > 0.0) {
        return Err(Error::contract(format!("offset window must be positive, got {window} s")));
    }
    let Some(&(t0, _)) = samples.first() else {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    };
    let (sum, n) = samples
        .iter()
        .take_while(|(t, _)| t - t0 <= window)
        .fold((Vec3::zeros(), 0usize), |(s, n), (_, v)| (s + v, n + 1));
    Ok(sum / n as f64)
}

/// Subtract the static-window mean from every sample.
pub fn remove_offset(samples: &[(f64, Vec3)], window: f64) -> Result<Vec<(f64, Vec3)>> {
    let offset = static_offset(samples, window)?;
    Ok(samples.iter().map(|(t, v)| (*t, v - offset)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn lowpass_dc_passthrough() {
        let mut lp = LowPassState::new(2.0).unwrap();
        let c = Vec3::new(1.5, -2.0, 9.81);
        for _ in 0..100 {
            assert_eq!(lp.step(&c, 0.01).unwrap(), c);
        }
    }

    #[test]
    fn lowpass_alpha_one_is_identity() {
        let mut lp = LowPassState::passthrough();
        lp.step(&Vec3::zeros(), 0.01).unwrap();
        let x = Vec3::new(3.0, 1.0, -4.0);
        assert_eq!(lp.step(&x, 0.01).unwrap(), x);
        assert_eq!(lp.alpha, 1.0);
    }

    #[test]
    fn lowpass_rejects_bad_inputs() {
        assert!(LowPassState::new(0.0).is_err());
        let lp = LowPassState::new(1.0).unwrap();
        assert!(lowpass_step(&lp, &Vec3::zeros(), 0.0).is_err());
    }

    #[test]
    fn lowpass_white_noise_variance() {
        let dt = 0.01;
        let mut lp = LowPassState::new(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let mut acc = 0.0;
        let mut count = 0;
        for k in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            let y = lp.step(&Vec3::new(x, 0.0, 0.0), dt).unwrap();
            if k > 1000 {
                acc += y.x * y.x;
                count += 1;
            }
        }
        let ratio = (acc / count as f64) / LowPassState::white_noise_gain(LowPassState::alpha_for(1.0, dt));
        assert!((0.8..=1.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn predict_at_rest_grows_by_q() {
        let mut k = KalmanState::new(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros(), Mat6::zeros(), 0.1, Mat3::identity());
        k.predict(&Vec3::zeros(), 0.01).unwrap();
        assert_eq!(k.position(), Vec3::new(1.0, 2.0, 3.0));
        let (_, g) = transition(0.01);
        let q = g * g.transpose() * 0.01;
        assert!((k.p - q).abs().max() < 1e-18);
    }

    #[test]
    fn predict_constant_acceleration() {
        let mut k = KalmanState::at_rest(Vec3::zeros(), 0.0, 0.0, 0.0, 1.0);
        for _ in 0..200 {
            k.predict(&Vec3::new(1.0, 0.0, 0.0), 0.01).unwrap();
        }
        assert!((k.position().x - 2.0).abs() < 0.02);
    }

    #[test]
    fn update_with_perfect_measurement() {
        let k = KalmanState::at_rest(Vec3::new(1.0, 0.0, 0.0), 0.5, 0.1, 0.1, 0.1);
        let (next, diag) = kalman_update(&k, &Vec3::new(1.0, 0.0, 0.0), &Mat3::zeros()).unwrap();
        assert_eq!(next.x, k.x);
        assert!(next.p.trace() < k.p.trace());
        assert_eq!(diag.innovation, Vec3::zeros());
    }

    #[test]
    fn uninformative_measurement_is_ignored() {
        let k = KalmanState::at_rest(Vec3::zeros(), 0.5, 0.1, 0.1, 0.1);
        let r = Mat3::identity() * 1e12;
        let (next, _) = kalman_update(&k, &Vec3::new(10.0, -5.0, 2.0), &r).unwrap();
        assert!((next.x - k.x).norm() < 1e-6);
    }

    #[test]
    fn singular_innovation_is_numerical_error() {
        let k = KalmanState::at_rest(Vec3::zeros(), 0.0, 0.0, 0.0, 0.0);
        let err = kalman_update(&k, &Vec3::zeros(), &Mat3::zeros()).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn offset_window_mean() {
        let samples: Vec<(f64, Vec3)> = (0..500)
            .map(|k| {
                let t = k as f64 * 0.01;
                (t, Vec3::new(0.2, if t <= 2.0 { -0.1 } else { 5.0 }, 0.0))
            })
            .collect();
        let off = static_offset(&samples, DEFAULT_OFFSET_WINDOW).unwrap();
        assert!((off - Vec3::new(0.2, -0.1, 0.0)).norm() < 1e-12);
        let cleaned = remove_offset(&samples, DEFAULT_OFFSET_WINDOW).unwrap();
        assert!(cleaned[0].1.norm() < 1e-12);
    }
}
