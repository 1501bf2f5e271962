//! Hard/soft-iron magnetometer calibration.
//!
//! A distorted magnetometer traces an ellipsoid instead of a sphere when it
//! is rotated through a constant field. The fitter recovers the ellipsoid by
//! linear least squares on the general quadric, then factors it into the
//! correction
//!
//! ```text
//! B_c = C · (B_raw − b_H)
//! ```
//!
//! with `b_H` the ellipsoid centre (hard iron) and `C` the symmetric
//! positive-definite matrix that maps the ellipsoid back onto a sphere
//! (soft iron).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};

/// Minimum sweep length: nine quadric coefficients plus margin.
pub const MIN_SWEEP_SAMPLES: usize = 12;

/// Smallest/largest scatter eigenvalue ratio below which a sweep counts as planar.
pub const COPLANARITY_RATIO: f64 = 1e-6;

/// Standard deviations at or below this are treated as exactly zero when
/// forming the improvement ratio, so rounding noise never produces a
/// meaningless percentage.
pub const SIGMA_FLOOR_UT: f64 = 1e-9;

/// One timestamped raw magnetometer reading [µT].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MagSample {
    pub t: f64,
    pub b: Vec3,
}

/// Raw magnetometer samples with strictly increasing timestamps.
#[derive(Clone, Debug, Default)]
pub struct MagSweep {
    samples: Vec<MagSample>,
}

impl MagSweep {
    pub fn new(samples: Vec<MagSample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if !s.t.is_finite() || !s.b.iter().all(|v| v.is_finite()) {
                return Err(Error::contract(format!("sample {i} is not finite")));
            }
        }
        if let Some(i) = samples.windows(2).position(|w| w[1].t <= w[0].t) {
            return Err(Error::contract(format!(
                "sweep timestamps must be strictly increasing (sample {})",
                i + 1
            )));
        }
        Ok(MagSweep { samples })
    }

    /// Build a sweep from bare vectors, stamping them at 1 s intervals.
    pub fn from_vectors(points: impl IntoIterator<Item = Vec3>) -> Self {
        let samples = points
            .into_iter()
            .enumerate()
            .map(|(i, b)| MagSample { t: i as f64, b })
            .collect();
        MagSweep { samples }
    }

    pub fn samples(&self) -> &[MagSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn points(&self) -> impl Iterator<Item = &Vec3> + '_ {
        self.samples.iter().map(|s| &s.b)
    }
}

/// How the otherwise free sphere radius of the correction is fixed.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum MagnitudeGauge {
    /// Corrected magnitudes average to the mean of `|B_raw − b_H|`.
    #[default]
    MeanRaw,
    /// Corrected samples land on a sphere of this radius [µT].
    Known(f64),
}

/// Soft-iron matrix, hard-iron offset and fit diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MagCalibration {
    pub soft_iron: Mat3,
    pub hard_iron: Vec3,
    pub field_magnitude: f64,
    pub fit_residual: f64,
}

impl MagCalibration {
    pub fn identity() -> Self {
        MagCalibration {
            soft_iron: Mat3::identity(),
            hard_iron: Vec3::zeros(),
            field_magnitude: 0.0,
            fit_residual: 0.0,
        }
    }

    pub fn apply(&self, raw: &Vec3) -> Vec3 {
        apply_calibration(self, raw)
    }

    /// Distort a true field vector the way this calibration would undo it:
    /// `C⁻¹·B + b_H`. Used to inject hard/soft iron into simulated sensors.
    pub fn distort(&self, true_field: &Vec3) -> Result<Vec3> {
        let inv = self
            .soft_iron
            .try_inverse()
            .ok_or_else(|| Error::Numerical("soft-iron matrix is singular".into()))?;
        Ok(inv * true_field + self.hard_iron)
    }

    pub fn to_file(&self) -> CalibrationFile {
        let m = &self.soft_iron;
        CalibrationFile {
            c: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            b_h: [self.hard_iron.x, self.hard_iron.y, self.hard_iron.z],
            field_magnitude: self.field_magnitude,
            fit_residual: self.fit_residual,
        }
    }

    pub fn from_file(f: &CalibrationFile) -> Result<Self> {
        let c = Mat3::from_fn(|i, j| f.c[i][j]);
        let asym = (c - c.transpose()).abs().max();
        if asym > 1e-9 * c.abs().max().max(1.0) {
            return Err(Error::Schema {
                path: "C".into(),
                msg: format!("soft-iron matrix must be symmetric (asymmetry {asym:.2e})"),
            });
        }
        let eig = SymmetricEigen::new(c).eigenvalues;
        if eig.min() <= 0.0 {
            return Err(Error::Schema {
                path: "C".into(),
                msg: "soft-iron matrix must be positive definite".into(),
            });
        }
        if !(f.fit_residual >= 0.0) {
            return Err(Error::Schema {
                path: "fit_residual".into(),
                msg: "must be non-negative".into(),
            });
        }
        Ok(MagCalibration {
            soft_iron: c,
            hard_iron: Vec3::from(f.b_h),
            field_magnitude: f.field_magnitude,
            fit_residual: f.fit_residual,
        })
    }
}

/// On-disk calibration: `{"C": [[..]×3], "b_H": [x,y,z], "field_magnitude": f, "fit_residual": f}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    #[serde(rename = "C")]
    pub c: [[f64; 3]; 3],
    #[serde(rename = "b_H")]
    pub b_h: [f64; 3],
    pub field_magnitude: f64,
    pub fit_residual: f64,
}

/// `C · (raw − b_H)`.
pub fn apply_calibration(cal: &MagCalibration, raw: &Vec3) -> Vec3 {
    cal.soft_iron * (raw - cal.hard_iron)
}

pub fn fit_calibration(sweep: &MagSweep) -> Result<MagCalibration> {
    fit_calibration_with(sweep, MagnitudeGauge::MeanRaw)
}

pub fn fit_calibration_with(sweep: &MagSweep, gauge: MagnitudeGauge) -> Result<MagCalibration> {
    let n = sweep.len();
    if n < MIN_SWEEP_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_SWEEP_SAMPLES,
            got: n,
        });
    }

    let mean = sweep.points().sum::<Vec3>() / n as f64;
    let scatter = sweep
        .points()
        .map(|p| (p - mean) * (p - mean).transpose())
        .sum::<Mat3>()
        / n as f64;
    let eig = SymmetricEigen::new(scatter).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo < COPLANARITY_RATIO * hi {
        let rank = eig.iter().filter(|&&e| e >= COPLANARITY_RATIO * hi && e > 0.0).count();
        return Err(Error::FitDegenerate(format!(
            "sample scatter has rank {rank} of 3 (eigenvalue ratio {:.2e}); sweep is coplanar or collinear",
            if hi > 0.0 { lo / hi } else { 0.0 }
        )));
    }

    // Work in centred, unit-RMS coordinates for conditioning.
    let scale = scatter.trace().sqrt();
    let mut design = DMatrix::<f64>::zeros(n, 9);
    for (i, p) in sweep.points().enumerate() {
        let u = (p - mean) / scale;
        let row = [
            u.x * u.x,
            u.y * u.y,
            u.z * u.z,
            2.0 * u.x * u.y,
            2.0 * u.x * u.z,
            2.0 * u.y * u.z,
            2.0 * u.x,
            2.0 * u.y,
            2.0 * u.z,
        ];
        for (j, v) in row.into_iter().enumerate() {
            design[(i, j)] = v;
        }
    }
    let rhs = DVector::<f64>::from_element(n, 1.0);
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-12 * smax).count();
    if rank < 9 {
        return Err(Error::FitDegenerate(format!(
            "quadric design matrix has rank {rank} of 9; sweep does not constrain an ellipsoid"
        )));
    }
    let coef = svd
        .solve(&rhs, 1e-12 * smax)
        .map_err(|e| Error::FitDegenerate(e.to_string()))?;

    let quad = Mat3::new(
        coef[0], coef[3], coef[4], coef[3], coef[1], coef[5], coef[4], coef[5], coef[2],
    );
    let lin = Vec3::new(coef[6], coef[7], coef[8]);
    let quad_eig = SymmetricEigen::new(quad);
    if quad_eig.eigenvalues.min() <= 0.0 {
        return Err(Error::FitDegenerate(
            "fitted quadric is not an ellipsoid (indefinite shape matrix)".into(),
        ));
    }
    let quad_inv = quad
        .try_inverse()
        .ok_or_else(|| Error::FitDegenerate("fitted quadric is singular".into()))?;
    let centre_u = -(quad_inv * lin);
    let k = 1.0 + centre_u.dot(&(quad * centre_u));
    if k <= 0.0 {
        return Err(Error::FitDegenerate("fitted quadric encloses no volume".into()));
    }

    let hard_iron = mean + centre_u * scale;
    // Shape in raw units: (p − b)ᵀ A (p − b) = 1 with A = quad / (k·scale²).
    let shape = quad / (k * scale * scale);
    let whiten = spd_sqrt(&shape);

    let radius = match gauge {
        MagnitudeGauge::Known(r) => {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::contract("reference field magnitude must be positive"));
            }
            r
        }
        MagnitudeGauge::MeanRaw => sweep.points().map(|p| (p - hard_iron).norm()).sum::<f64>() / n as f64,
    };
    let soft_iron = whiten * radius;

    let mut cal = MagCalibration {
        soft_iron: 0.5 * (soft_iron + soft_iron.transpose()),
        hard_iron,
        field_magnitude: radius,
        fit_residual: 0.0,
    };
    let ss = sweep
        .points()
        .map(|p| {
            let d = cal.apply(p).norm() - radius;
            d * d
        })
        .sum::<f64>();
    cal.fit_residual = (ss / n as f64).sqrt();
    Ok(cal)
}

/// Principal square root of a symmetric positive-definite matrix.
fn spd_sqrt(m: &Mat3) -> Mat3 {
    let eig = SymmetricEigen::new(*m);
    let d = Mat3::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Field-magnitude stability of a static window, before and after correction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub sigma_nc: f64,
    pub sigma_c: f64,
    /// Improvement of calibrated over uncalibrated spread, in percent.
    pub epsilon: f64,
    pub sample_count: usize,
}

impl StabilityReport {
    pub fn from_sigmas(sigma_nc: f64, sigma_c: f64, sample_count: usize) -> Self {
        let epsilon = if sigma_nc > SIGMA_FLOOR_UT {
            100.0 * (sigma_nc - sigma_c) / sigma_nc
        } else {
            0.0
        };
        StabilityReport {
            sigma_nc,
            sigma_c,
            epsilon,
            sample_count,
        }
    }
}

/// Spread (population standard deviation) of `|B|` over the window, raw and
/// corrected. Without a calibration the corrected spread equals the raw one.
pub fn stability_metrics(window: &MagSweep, cal: Option<&MagCalibration>) -> Result<StabilityReport> {
    if window.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let sigma_nc = magnitude_std(window.points().copied());
    let sigma_c = match cal {
        Some(c) => magnitude_std(window.points().map(|p| c.apply(p))),
        None => sigma_nc,
    };
    Ok(StabilityReport::from_sigmas(sigma_nc, sigma_c, window.len()))
}

fn magnitude_std(points: impl Iterator<Item = Vec3>) -> f64 {
    let mags: Vec<f64> = points.map(|p| p.norm()).collect();
    let n = mags.len() as f64;
    let mean = mags.iter().sum::<f64>() / n;
    let sd = (mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt();
    // Rounding in the mean leaves ~1e-15 relative spread on a constant field.
    if sd <= 1e-12 * mean {
        0.0
    } else {
        sd
    }
}

/// How much of the sphere of field directions a sweep visits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCoverage {
    /// Fraction of direction bins containing at least one sample.
    pub fraction: f64,
    pub bins: usize,
}

/// Number of near-equal-area direction bins used by [`sweep_coverage`].
pub const COVERAGE_BINS: usize = 64;

/// Bin corrected field directions onto a Fibonacci lattice and report the
/// occupied fraction. Calibration needs several full turns with some tilt;
/// low coverage warns that the soft-iron estimate is poorly constrained.
pub fn sweep_coverage(sweep: &MagSweep, cal: &MagCalibration) -> SweepCoverage {
    let centres = fibonacci_sphere(COVERAGE_BINS);
    let mut hit = vec![false; COVERAGE_BINS];
    for p in sweep.points() {
        let d = cal.apply(p);
        let n = d.norm();
        if n == 0.0 {
            continue;
        }
        let d = d / n;
        let best = centres
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.dot(&d).total_cmp(&b.1.dot(&d)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        hit[best] = true;
    }
    SweepCoverage {
        fraction: hit.iter().filter(|&&h| h).count() as f64 / COVERAGE_BINS as f64,
        bins: COVERAGE_BINS,
    }
}

/// `n` near-uniform unit vectors (golden-angle spiral).
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(radius: f64, n: usize) -> Vec<Vec3> {
        fibonacci_sphere(n).into_iter().map(|d| d * radius).collect()
    }

    #[test]
    fn calibrated_sphere_fits_to_identity() {
        let cal = fit_calibration(&MagSweep::from_vectors(sphere(50.0, 500))).unwrap();
        assert!((cal.soft_iron - Mat3::identity()).abs().max() < 1e-9);
        assert!(cal.hard_iron.norm() < 1e-9);
        assert!(cal.fit_residual < 1e-9);
    }

    #[test]
    fn recovers_hard_iron_offset() {
        let b = Vec3::new(10.0, -5.0, 3.0);
        let pts = sphere(50.0, 500).into_iter().map(|p| p + b);
        let cal = fit_calibration(&MagSweep::from_vectors(pts)).unwrap();
        assert!((cal.hard_iron - b).norm() < 1e-6);
    }

    #[test]
    fn removes_soft_iron_scaling() {
        let d = Mat3::from_diagonal(&Vec3::new(1.2, 1.0, 0.8));
        let sweep = MagSweep::from_vectors(sphere(50.0, 500).into_iter().map(|p| d * p));
        let cal = fit_calibration(&sweep).unwrap();
        let rms = (sweep
            .samples()
            .iter()
            .map(|s| (cal.apply(&s.b).norm() - cal.field_magnitude).powi(2))
            .sum::<f64>()
            / 500.0)
            .sqrt();
        assert!(rms < 1e-6);
    }

    #[test]
    fn apply_matches_correction_equation() {
        let id = MagCalibration::identity();
        assert_eq!(apply_calibration(&id, &Vec3::new(1.0, 2.0, 3.0)), Vec3::new(1.0, 2.0, 3.0));
        let biased = MagCalibration {
            hard_iron: Vec3::new(1.0, 1.0, 1.0),
            ..id
        };
        assert_eq!(apply_calibration(&biased, &Vec3::new(1.0, 1.0, 1.0)), Vec3::zeros());
        let doubled = MagCalibration {
            soft_iron: Mat3::identity() * 2.0,
            ..id
        };
        assert_eq!(apply_calibration(&doubled, &Vec3::x()), Vec3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn too_few_samples() {
        let err = fit_calibration(&MagSweep::from_vectors(sphere(50.0, 5))).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { needed: 12, got: 5 }));
    }

    #[test]
    fn coplanar_sweep_is_degenerate() {
        let ring = (0..40).map(|i| {
            let a = i as f64 * 0.157;
            Vec3::new(50.0 * a.cos(), 50.0 * a.sin(), 7.0)
        });
        let err = fit_calibration(&MagSweep::from_vectors(ring)).unwrap_err();
        match err {
            Error::FitDegenerate(msg) => assert!(msg.contains("rank 2")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sweep_requires_increasing_time() {
        let s = |t| MagSample { t, b: Vec3::x() };
        assert!(MagSweep::new(vec![s(0.0), s(1.0), s(1.0)]).is_err());
    }

    #[test]
    fn constant_field_has_zero_improvement() {
        let window = MagSweep::from_vectors(std::iter::repeat_n(Vec3::new(20.0, 0.0, -40.0), 100));
        let r = stability_metrics(&window, Some(&MagCalibration::identity())).unwrap();
        assert_eq!((r.sigma_nc, r.sigma_c, r.epsilon), (0.0, 0.0, 0.0));
        assert!(stability_metrics(&MagSweep::default(), None).is_err());
    }

    #[test]
    fn calibration_file_rejects_asymmetric_matrix() {
        let mut f = MagCalibration::identity().to_file();
        f.c[0][1] = 0.3;
        assert!(MagCalibration::from_file(&f).is_err());
        let json = serde_json::to_string(&MagCalibration::identity().to_file()).unwrap();
        assert!(json.contains("\"C\"") && json.contains("\"b_H\""));
    }
}
