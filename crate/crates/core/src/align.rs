//! Anchoring several sensors in one world coordinate system (WCS).
//!
//! Each sensor first levels itself with gravity and finds magnetic north from
//! its calibrated magnetometer ([`north_reference`]). Because all sensors see
//! the same north, their north frames differ only by a translation. That
//! translation is recovered from the difference of the north-frame field
//! vectors by inverting a field model with non-zero gradient
//! ([`relative_displacement`]). The WCS is the initial body frame of the
//! first sensor; [`anchor_wcs`] produces one [`RelativeTransform`] per sensor
//! mapping its initial body frame into the WCS.
//!
//! After initialization, [`locomotion_update`] tracks a sensor by fusing the
//! strapdown double integral with a magnetic position channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{KalmanState, UpdateDiagnostics};
use crate::geometry::{Mat3, Rotation, Vec3};
use crate::sim::{field_at, MagneticFieldModel};
use crate::strapdown::{
    earth_rate_correction, propagate_attitude, EnvironmentConstants, ImuSample, PoseState, STANDARD_GRAVITY,
};

/// Accepted relative deviation of `|acc|` from 1 g for a static reading.
pub const STATIC_BAND: f64 = 0.2;
/// Minimum angle between field and gravity for a defined heading [deg].
pub const MIN_DIP_CLEARANCE_DEG: f64 = 5.0;
/// Longest spread of initialization times across sensors [s].
pub const EPOCH_WINDOW: f64 = 5.0;
/// Singular values of `∇B` below this count as rank deficient [µT/m].
pub const GRADIENT_RANK_TOL: f64 = 1e-9;

/// Rotation from a sensor's body frame to the gravity-levelled,
/// magnetic-north-aligned frame (x north, y west, z up).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NorthReference {
    /// Body → north.
    pub rotation: Rotation,
    /// Calibrated body-frame field at initialization [µT].
    pub b_at_init: Vec3,
    pub t_init: f64,
}

impl NorthReference {
    pub fn with_time(mut self, t: f64) -> Self {
        self.t_init = t;
        self
    }

    /// Initialization field expressed in the north frame.
    pub fn north_field(&self) -> Vec3 {
        self.rotation.apply(&self.b_at_init)
    }
}

/// Level with gravity and point x at the horizontal field component.
pub fn north_reference(mag_cal: &Vec3, acc_static: &Vec3) -> Result<NorthReference> {
    let g = acc_static.norm();
    if !g.is_finite() || (g - STANDARD_GRAVITY).abs() > STATIC_BAND * STANDARD_GRAVITY {
        return Err(Error::NotStatic { acc_norm: g });
    }
    let b = mag_cal.norm();
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::DegenerateDip { angle_deg: 0.0 });
    }
    let up = acc_static / g;
    let cos_angle = (mag_cal.dot(&up) / b).clamp(-1.0, 1.0);
    let angle_deg = cos_angle.abs().acos().to_degrees();
    if angle_deg < MIN_DIP_CLEARANCE_DEG {
        return Err(Error::DegenerateDip { angle_deg });
    }
    let north = (mag_cal - up * mag_cal.dot(&up)).normalize();
    let west = up.cross(&north);
    let m = Mat3::from_rows(&[north.transpose(), west.transpose(), up.transpose()]);
    Ok(NorthReference {
        rotation: Rotation::from_matrix_orthonormalized(m),
        b_at_init: *mag_cal,
        t_init: 0.0,
    })
}

/// Pose of sensor n relative to the WCS: `p_wcs = R_1n · p + D_1n` for a
/// point `p` in sensor n's initial body frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeTransform {
    pub d_1n: Vec3,
    pub r_1n: Rotation,
}

impl RelativeTransform {
    pub fn identity() -> Self {
        RelativeTransform {
            d_1n: Vec3::zeros(),
            r_1n: Rotation::identity(),
        }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.r_1n.apply(p) + self.d_1n
    }

    /// Express a pose given in the sensor's initial body frame in the WCS.
    pub fn apply(&self, pose: &PoseState) -> PoseState {
        let r = self.r_1n.to_quaternion();
        PoseState {
            t: pose.t,
            q: (r * pose.q).normalized(),
            v: self.r_1n.apply(&pose.v),
            s: self.apply_point(&pose.s),
            cov: pose.cov,
        }
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &RelativeTransform) -> RelativeTransform {
        RelativeTransform {
            d_1n: self.d_1n + self.r_1n.apply(&other.d_1n),
            r_1n: self.r_1n * other.r_1n,
        }
    }

    pub fn inverse(&self) -> RelativeTransform {
        let rt = self.r_1n.transpose();
        RelativeTransform {
            d_1n: -rt.apply(&self.d_1n),
            r_1n: rt,
        }
    }
}

/// A field model together with the place of the reference sensor in it.
#[derive(Clone, Copy, Debug)]
pub struct FieldContext<'a> {
    pub model: &'a MagneticFieldModel,
    /// Position of the reference sensor in model coordinates [m].
    pub origin: Vec3,
}

impl FieldContext<'_> {
    /// Rotation taking north-frame vectors into model coordinates, from the
    /// direction of the horizontal model field at the origin.
    pub fn north_to_model(&self) -> Result<Rotation> {
        let b = field_at(self.model, &self.origin)?.b;
        let h = b.x.hypot(b.y);
        if !(h > 1e-9 * b.norm().max(1e-300)) {
            let angle_deg = if b.norm() > 0.0 { 0.0 } else { f64::NAN };
            return Err(Error::DegenerateDip { angle_deg });
        }
        Ok(Rotation::rot_z(b.y.atan2(b.x)))
    }
}

/// Number of continuation stages used by [`locate_in_field`].
pub const CONTINUATION_STAGES: usize = 16;

/// Find the point where the model field equals `target`.
///
/// A dipole field is not one-to-one, so plain Newton from `start` can land
/// on a distant preimage. The target is instead moved from `B(start)` to
/// `target` in stages, with a Newton solve at each, which tracks the branch
/// connected to `start`.
pub fn locate_in_field(model: &MagneticFieldModel, target: &Vec3, start: &Vec3) -> Result<Vec3> {
    locate_in_field_staged(model, target, start, CONTINUATION_STAGES)
}

/// [`locate_in_field`] with an explicit number of continuation stages; one
/// stage is plain damped Newton, adequate when `start` is already close.
pub fn locate_in_field_staged(model: &MagneticFieldModel, target: &Vec3, start: &Vec3, stages: usize) -> Result<Vec3> {
    let stages = stages.max(1);
    let b0 = field_at(model, start)?.b;
    let mut p = *start;
    for k in 1..=stages {
        let lambda = k as f64 / stages as f64;
        let stage = b0 + (target - b0) * lambda;
        p = newton_solve(model, &stage, &p)?;
    }
    Ok(p)
}

fn gradient_rank(g: &Mat3) -> usize {
    g.svd(false, false)
        .singular_values
        .iter()
        .filter(|s| **s > GRADIENT_RANK_TOL)
        .count()
}

/// Damped Newton iteration for `B(p) = target` from `start`.
fn newton_solve(model: &MagneticFieldModel, target: &Vec3, start: &Vec3) -> Result<Vec3> {
    let tol = 1e-12 * target.norm().max(1.0);
    let mut p = *start;
    let mut fs = field_at(model, &p)?;
    let mut resid = target - fs.b;
    for _ in 0..100 {
        if resid.norm() <= tol {
            return Ok(p);
        }
        let rank = gradient_rank(&fs.gradient);
        if rank < 3 {
            return Err(Error::UnobservableDisplacement { rank });
        }
        let step = fs
            .gradient
            .svd(true, true)
            .solve(&resid, 0.0)
            .map_err(|e| Error::Numerical(format!("gradient solve failed: {e}")))?;
        let mut lambda = 1.0;
        loop {
            let cand = p + step * lambda;
            if let Ok(next) = field_at(model, &cand) {
                let r = target - next.b;
                if r.norm() < resid.norm() {
                    p = cand;
                    fs = next;
                    resid = r;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-8 {
                // No descent possible; accept if already at rounding level.
                if resid.norm() <= 1e3 * tol {
                    return Ok(p);
                }
                return Err(Error::Numerical(format!(
                    "field inversion stalled with residual {:.3e} uT",
                    resid.norm()
                )));
            }
        }
    }
    if resid.norm() <= 1e3 * tol {
        Ok(p)
    } else {
        Err(Error::Numerical(format!(
            "field inversion did not converge (residual {:.3e} uT)",
            resid.norm()
        )))
    }
}

/// Displacement of sensor n from sensor 1 in the north frame [m].
pub fn north_displacement(
    ref1: &NorthReference,
    refn: &NorthReference,
    b1: &Vec3,
    bn: &Vec3,
    ctx: &FieldContext<'_>,
) -> Result<Vec3> {
    let delta_north = refn.rotation.apply(bn) - ref1.rotation.apply(b1);
    let to_model = ctx.north_to_model()?;
    let base = field_at(ctx.model, &ctx.origin)?;
    let rank = gradient_rank(&base.gradient);
    if rank < 3 {
        return Err(Error::UnobservableDisplacement { rank });
    }
    let target = base.b + to_model.apply(&delta_north);
    let p = locate_in_field(ctx.model, &target, &ctx.origin)?;
    Ok(to_model.transpose().apply(&(p - ctx.origin)))
}

/// Transform of sensor n into the initial body frame of sensor 1.
///
/// Dividing by a rotation is read as applying its transpose: both field
/// vectors are taken into the shared north frame and differenced, and the
/// field difference is converted to metres through the model gradient.
pub fn relative_displacement(
    ref1: &NorthReference,
    refn: &NorthReference,
    b1: &Vec3,
    bn: &Vec3,
    ctx: &FieldContext<'_>,
) -> Result<RelativeTransform> {
    let d_north = north_displacement(ref1, refn, b1, bn, ctx)?;
    Ok(RelativeTransform {
        d_1n: ref1.rotation.transpose().apply(&d_north),
        r_1n: rotation_ratio(ref1, refn),
    })
}

/// `R_1ᵀ R_n`: sensor n body → sensor 1 body, through the north frame.
pub fn rotation_ratio(ref1: &NorthReference, refn: &NorthReference) -> Rotation {
    ref1.rotation.transpose() * refn.rotation
}

/// The world frame: sensor 1's initial body frame.
#[derive(Clone, Debug, PartialEq)]
pub struct WcsAnchor {
    pub origin_sensor: String,
    /// Origin body → north, relating WCS axes to magnetic north.
    pub r_world: Rotation,
    pub t0: f64,
    /// Set when the field gave no displacement information and every sensor
    /// was placed at the origin.
    pub heading_only: bool,
}

impl WcsAnchor {
    /// Map a pose from a north-aligned frame into the WCS, given the position
    /// of that frame's origin in WCS coordinates.
    pub fn north_pose_to_wcs(&self, pose: &PoseState, frame_origin_wcs: &Vec3) -> PoseState {
        let rt = self.r_world.transpose();
        PoseState {
            t: pose.t,
            q: (rt.to_quaternion() * pose.q).normalized(),
            v: rt.apply(&pose.v),
            s: frame_origin_wcs + rt.apply(&pose.s),
            cov: pose.cov,
        }
    }
}

/// Initialization data for one sensor.
#[derive(Clone, Debug)]
pub struct SensorInit {
    pub sensor_id: String,
    pub reference: Option<NorthReference>,
    pub state: PoseState,
}

#[derive(Clone, Debug)]
pub struct Anchoring {
    pub anchor: WcsAnchor,
    /// One transform per sensor, in input order; the first is the identity.
    pub transforms: Vec<(String, RelativeTransform)>,
}

impl Anchoring {
    pub fn transform(&self, sensor_id: &str) -> Option<&RelativeTransform> {
        self.transforms.iter().find(|(id, _)| id == sensor_id).map(|(_, t)| t)
    }
}

/// Fix the WCS at the first sensor and place every other sensor in it.
///
/// With `field` absent, or when the field gradient is rank deficient, only
/// headings are aligned: displacements are left at zero and the anchor is
/// marked `heading_only`.
pub fn anchor_wcs(inits: &[SensorInit], field: Option<&FieldContext<'_>>) -> Result<Anchoring> {
    let Some(first) = inits.first() else {
        return Err(Error::contract("no sensors to anchor"));
    };
    let missing: Vec<String> = inits
        .iter()
        .filter(|s| s.reference.is_none())
        .map(|s| s.sensor_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteInitialization(missing));
    }
    let refs: Vec<&NorthReference> = inits.iter().filter_map(|s| s.reference.as_ref()).collect();
    let (lo, hi) = inits
        .iter()
        .map(|s| s.state.t)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    if hi - lo > EPOCH_WINDOW {
        return Err(Error::contract(format!(
            "sensors initialized {:.2} s apart, beyond the {EPOCH_WINDOW} s window",
            hi - lo
        )));
    }
    let r1 = refs[0];
    let mut heading_only = field.is_none() && inits.len() > 1;
    let mut transforms = vec![(first.sensor_id.clone(), RelativeTransform::identity())];
    for (init, rn) in inits.iter().zip(&refs).skip(1) {
        let d_1n = match field {
            None => Vec3::zeros(),
            Some(ctx) => match relative_displacement(r1, rn, &r1.b_at_init, &rn.b_at_init, ctx) {
                Ok(t) => t.d_1n,
                Err(Error::UnobservableDisplacement { rank }) => {
                    log::warn!(
                        "field gradient has rank {rank}; sensor {} aligned by heading only",
                        init.sensor_id
                    );
                    heading_only = true;
                    Vec3::zeros()
                }
                Err(e) => return Err(e),
            },
        };
        transforms.push((
            init.sensor_id.clone(),
            RelativeTransform {
                d_1n,
                r_1n: rotation_ratio(r1, rn),
            },
        ));
    }
    Ok(Anchoring {
        anchor: WcsAnchor {
            origin_sensor: first.sensor_id.clone(),
            r_world: r1.rotation,
            t0: first.state.t,
            heading_only,
        },
        transforms,
    })
}

/// Serialized form of an [`Anchoring`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorFile {
    pub origin_sensor: String,
    pub t0: f64,
    pub heading_only: bool,
    /// Origin body → north, row-major.
    pub r_world: [[f64; 3]; 3],
    pub sensors: Vec<AnchorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorEntry {
    pub id: String,
    /// Sensor body → WCS, row-major.
    #[serde(rename = "R")]
    pub r: [[f64; 3]; 3],
    #[serde(rename = "D_1n")]
    pub d_1n: [f64; 3],
    pub t_init: f64,
}

impl Anchoring {
    pub fn to_file(&self, init_times: &[f64]) -> AnchorFile {
        AnchorFile {
            origin_sensor: self.anchor.origin_sensor.clone(),
            t0: self.anchor.t0,
            heading_only: self.anchor.heading_only,
            r_world: self.anchor.r_world.to_rows(),
            sensors: self
                .transforms
                .iter()
                .enumerate()
                .map(|(i, (id, t))| AnchorEntry {
                    id: id.clone(),
                    r: t.r_1n.to_rows(),
                    d_1n: t.d_1n.into(),
                    t_init: init_times.get(i).copied().unwrap_or(self.anchor.t0),
                })
                .collect(),
        }
    }

    pub fn from_file(f: &AnchorFile) -> Result<Self> {
        let schema = |path: String, e: Error| Error::Schema {
            path,
            msg: e.to_string(),
        };
        let transforms = f
            .sensors
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let r = Rotation::from_rows(s.r).map_err(|e| schema(format!("sensors[{i}].R"), e))?;
                Ok((
                    s.id.clone(),
                    RelativeTransform {
                        d_1n: Vec3::from(s.d_1n),
                        r_1n: r,
                    },
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Anchoring {
            anchor: WcsAnchor {
                origin_sensor: f.origin_sensor.clone(),
                r_world: Rotation::from_rows(f.r_world).map_err(|e| schema("r_world".into(), e))?,
                t0: f.t0,
                heading_only: f.heading_only,
            },
            transforms,
        })
    }
}

/// Magnetic → metric conversion learned during initialization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferFunctions {
    /// Distance per field change [m/µT]; `None` when never initialized.
    pub f_s: Option<f64>,
    /// Orientation offset between the two initialization pose frames.
    pub f_phi: Rotation,
}

impl TransferFunctions {
    /// Heading alignment without a metric channel.
    pub fn heading_only(f_phi: Rotation) -> Self {
        TransferFunctions { f_s: None, f_phi }
    }

    /// `F_s = Δs / ΔB` from scalar changes.
    pub fn from_deltas(delta_s: f64, delta_b: f64, f_phi: Rotation) -> Result<Self> {
        if !(delta_b > 0.0) || !delta_b.is_finite() {
            return Err(Error::UnobservableTransfer { delta_b });
        }
        if !(delta_s >= 0.0) || !delta_s.is_finite() {
            return Err(Error::contract(format!("traversed distance must be finite and non-negative, got {delta_s}")));
        }
        Ok(TransferFunctions {
            f_s: Some(delta_s / delta_b),
            f_phi,
        })
    }
}

/// Learn `F_s` and `F_φ` from a window over which the sensor moved by a
/// known displacement and rotation. `delta_r` maps the end body frame into
/// the start body frame.
pub fn transfer_functions(window: &[ImuSample], delta_s: &Vec3, delta_r: &Rotation) -> Result<TransferFunctions> {
    let (Some(start), Some(end)) = (window.first(), window.last()) else {
        return Err(Error::InsufficientData { needed: 2, got: 0 });
    };
    if !(end.t > start.t) {
        return Err(Error::contract("transfer window has zero duration"));
    }
    let delta_b = (delta_r.apply(&end.mag) - start.mag).norm();
    TransferFunctions::from_deltas(delta_s.norm(), delta_b, *delta_r)
}

/// Source of absolute position fixes from the magnetometer.
pub trait MagneticPositionSource {
    /// Position in the navigation frame for the navigation-frame field `b_nav`.
    fn locate(&self, b_nav: &Vec3, guess: &Vec3) -> Result<Vec3>;
    /// Covariance of that position for white field noise of `mag_sigma`.
    fn covariance(&self, position: &Vec3, mag_sigma: f64) -> Result<Mat3>;
}

/// `s = s_ref + F_s·(B − B_ref)`: exact when the field changes along the
/// direction of travel at a constant rate.
#[derive(Clone, Copy, Debug)]
pub struct TransferPosition {
    pub f_s: f64,
    pub b_ref: Vec3,
    pub s_ref: Vec3,
}

impl MagneticPositionSource for TransferPosition {
    fn locate(&self, b_nav: &Vec3, _guess: &Vec3) -> Result<Vec3> {
        Ok(self.s_ref + self.f_s * (b_nav - self.b_ref))
    }

    fn covariance(&self, _position: &Vec3, mag_sigma: f64) -> Result<Mat3> {
        Ok(Mat3::identity() * (self.f_s * mag_sigma).powi(2))
    }
}

/// Position by inverting a field model. The navigation frame is a
/// north-aligned frame whose origin sits at `frame_origin` (model coordinates).
#[derive(Clone, Debug)]
pub struct FieldInversion<'a> {
    pub model: &'a MagneticFieldModel,
    pub north_to_model: Rotation,
    pub frame_origin: Vec3,
}

impl<'a> FieldInversion<'a> {
    pub fn new(ctx: &FieldContext<'a>, frame_origin_north: &Vec3) -> Result<Self> {
        let north_to_model = ctx.north_to_model()?;
        Ok(FieldInversion {
            model: ctx.model,
            north_to_model,
            frame_origin: ctx.origin + north_to_model.apply(frame_origin_north),
        })
    }
}

impl MagneticPositionSource for FieldInversion<'_> {
    fn locate(&self, b_nav: &Vec3, guess: &Vec3) -> Result<Vec3> {
        let target = self.north_to_model.apply(b_nav);
        let start = self.frame_origin + self.north_to_model.apply(guess);
        let p = locate_in_field_staged(self.model, &target, &start, 2)?;
        Ok(self.north_to_model.transpose().apply(&(p - self.frame_origin)))
    }

    fn covariance(&self, position: &Vec3, mag_sigma: f64) -> Result<Mat3> {
        let p = self.frame_origin + self.north_to_model.apply(position);
        let g = field_at(self.model, &p)?.gradient;
        let g_inv = g
            .try_inverse()
            .ok_or_else(|| Error::Numerical("field gradient not invertible".into()))?;
        // Gradient in navigation coordinates: Rᵀ G R.
        let rt = self.north_to_model.matrix().transpose();
        let j = rt * g_inv * self.north_to_model.matrix();
        Ok(j * j.transpose() * mag_sigma * mag_sigma)
    }
}

/// Which position channels drive the locomotion update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Accelerometer double integral only.
    Inertial,
    /// Magnetic position fixes only.
    Magnetic,
    /// Kalman fusion of both.
    Fused,
}

/// Per-sensor tracking state after initialization.
#[derive(Clone, Debug)]
pub struct LocomotionState {
    pub pose: PoseState,
    pub kalman: KalmanState,
    pub mode: FusionMode,
    pub env: EnvironmentConstants,
    /// Magnetometer white-noise level used to weight magnetic fixes [µT].
    pub mag_sigma: f64,
    /// Constant subtracted from the navigation-frame acceleration.
    pub acc_offset: Vec3,
    /// Navigation-frame acceleration of the previous step, for trapezoidal
    /// integration.
    pub last_acc: Option<Vec3>,
    pub last_update: Option<UpdateDiagnostics>,
}

impl LocomotionState {
    /// Start tracking at `pose`; the orientation is seeded from `F_φ`
    /// composed with the pose attitude.
    pub fn new(pose: PoseState, tf: &TransferFunctions, kalman: KalmanState, mode: FusionMode, env: EnvironmentConstants, mag_sigma: f64) -> Self {
        let q = (tf.f_phi.to_quaternion() * pose.q).normalized();
        LocomotionState {
            pose: PoseState { q, ..pose },
            kalman,
            mode,
            env,
            mag_sigma,
            acc_offset: Vec3::zeros(),
            last_acc: None,
            last_update: None,
        }
    }
}

/// One tracking step with a transfer-function magnetic channel referenced to
/// the state's initial field and position.
pub fn locomotion_update(
    state: &LocomotionState,
    tf: &TransferFunctions,
    reference: (&Vec3, &Vec3),
    sample: &ImuSample,
    dt: f64,
) -> Result<LocomotionState> {
    let Some(f_s) = tf.f_s else {
        return Err(Error::contract("transfer functions are not initialized"));
    };
    let source = TransferPosition {
        f_s,
        b_ref: *reference.0,
        s_ref: *reference.1,
    };
    locomotion_step(state, &source, sample, dt)
}

/// One tracking step: gyro attitude, accelerometer prediction, then a
/// magnetic position fix per the fusion mode. `sample.mag` must already be
/// calibrated.
///
/// The prediction uses the mean of this and the previous step's
/// navigation-frame acceleration.
pub fn locomotion_step(
    state: &LocomotionState,
    source: &dyn MagneticPositionSource,
    sample: &ImuSample,
    dt: f64,
) -> Result<LocomotionState> {
    if !sample.is_finite() {
        return Err(Error::contract("non-finite sample").at_time(sample.t));
    }
    let attitude = propagate_attitude(&state.pose, &sample.gyro, dt).map_err(|e| e.at_time(sample.t))?;
    let q = attitude.q;
    let acc = q.rotate(&sample.acc) + state.env.gravity - state.acc_offset;
    let mean_acc = 0.5 * (state.last_acc.unwrap_or(acc) + acc);
    let control = mean_acc + earth_rate_correction(&state.env, &state.kalman.velocity());
    let mut next = state.clone();
    next.kalman.predict(&control, dt).map_err(|e| e.at_time(sample.t))?;
    next.last_acc = Some(acc);
    next.last_update = None;
    if state.mode != FusionMode::Inertial {
        let b_nav = q.rotate(&sample.mag);
        let guess = next.kalman.position();
        let fix = source.locate(&b_nav, &guess).map_err(|e| e.at_time(sample.t))?;
        match state.mode {
            FusionMode::Magnetic => {
                next.kalman.x.fixed_rows_mut::<3>(0).copy_from(&fix);
            }
            _ => {
                let r = source.covariance(&fix, state.mag_sigma).map_err(|e| e.at_time(sample.t))?;
                let diag = next.kalman.update(&fix, &r).map_err(|e| e.at_time(sample.t))?;
                next.last_update = Some(diag);
            }
        }
    }
    next.pose = PoseState {
        t: attitude.t,
        q,
        v: next.kalman.velocity(),
        s: next.kalman.position(),
        cov: attitude.cov,
    };
    Ok(next)
}

/// Quaternion with the heading of `r` only (rotation about z).
pub fn yaw_of(r: &Rotation) -> f64 {
    let m = r.matrix();
    m[(1, 0)].atan2(m[(0, 0)])
}
