//! Frame math shared by every other module.
//!
//! Conventions used throughout the crate:
//!
//! * Quaternions are stored scalar-first, `[w, x, y, z]`, and compose with the
//!   Hamilton product. A body→world attitude `q` maps body vectors into the
//!   world as `q ⊗ v ⊗ q*`.
//! * Euler angles follow the intrinsic z-y-x (yaw-pitch-roll) sequence,
//!   `R = R_z(yaw) · R_y(pitch) · R_x(roll)`.
//! * Rotation equality is judged by the geodesic angle of `R1ᵀ R2`, never by
//!   raw components, so `q` and `-q` compare equal.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance for unit-norm and orthonormality checks on inputs.
pub const UNIT_TOL: f64 = 1e-9;

/// Pitch within this distance of ±π/2 is treated as gimbal lock.
pub const GIMBAL_LOCK_TOL: f64 = 1e-6;

/// Unit (or near-unit) quaternion, scalar first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// `[cos(angle/2), axis·sin(angle/2)]`. The axis must be unit length.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !angle.is_finite() || !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::contract(format!(
                "axis must be unit length (|axis| = {n}) and angle finite"
            )));
        }
        let (s, c) = (0.5 * angle).sin_cos();
        Ok(Quaternion::new(c, axis.x * s, axis.y * s, axis.z * s))
    }

    /// Rotation vector (axis scaled by angle) to quaternion; total for any input.
    pub fn from_rotation_vector(rv: &Vec3) -> Self {
        let angle = rv.norm();
        if angle < 1e-12 {
            return Quaternion::new(1.0, 0.5 * rv.x, 0.5 * rv.y, 0.5 * rv.z).normalized();
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let k = s / angle;
        Quaternion::new(c, rv.x * k, rv.y * k, rv.z * k)
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOL
    }

    /// Scale to unit norm. A pure scalar quaternion normalizes to exactly
    /// `±identity`, which keeps self-compositions such as `q* ⊗ q` exact.
    pub fn normalized(&self) -> Self {
        if self.x == 0.0 && self.y == 0.0 && self.z == 0.0 {
            return Quaternion::new(self.w.signum(), 0.0, 0.0, 0.0);
        }
        let n = self.norm();
        Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Self {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Same rotation with a non-negative scalar part.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            Quaternion::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            *self
        }
    }

    /// `q ⊗ [0, v] ⊗ q*` for unit `q`, evaluated without forming the products.
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let u = self.vector();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    pub fn inverse_rotate(&self, v: &Vec3) -> Vec3 {
        self.conjugate().rotate(v)
    }

    pub fn to_rotation(&self) -> Result<Rotation> {
        if !self.is_unit() {
            return Err(Error::contract(format!(
                "quaternion must be unit norm (|q| = {})",
                self.norm()
            )));
        }
        Ok(Rotation(self.rotation_matrix()))
    }

    fn rotation_matrix(&self) -> Mat3 {
        let Quaternion { w, x, y, z } = *self;
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let (xy, xz, yz) = (x * y, x * z, y * z);
        let (wx, wy, wz) = (w * x, w * y, w * z);
        Mat3::new(
            1.0 - 2.0 * (yy + zz),
            2.0 * (xy - wz),
            2.0 * (xz + wy),
            2.0 * (xy + wz),
            1.0 - 2.0 * (xx + zz),
            2.0 * (yz - wx),
            2.0 * (xz - wy),
            2.0 * (yz + wx),
            1.0 - 2.0 * (xx + yy),
        )
    }

    /// Geodesic angle between the rotations represented by two quaternions.
    pub fn angle_to(&self, other: &Quaternion) -> f64 {
        let d = self.conjugate() * *other;
        2.0 * d.vector().norm().atan2(d.w.abs())
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, r: Quaternion) -> Quaternion {
        let l = self;
        Quaternion::new(
            l.w * r.w - l.x * r.x - l.y * r.y - l.z * r.z,
            l.w * r.x + l.x * r.w + l.y * r.z - l.z * r.y,
            l.w * r.y - l.x * r.z + l.y * r.w + l.z * r.x,
            l.w * r.z + l.x * r.y - l.y * r.x + l.z * r.w,
        )
    }
}

impl Default for Quaternion {
    fn default() -> Self {
        Quaternion::IDENTITY
    }
}

/// Proper rotation matrix (orthonormal, det = +1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validate and wrap a matrix.
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::contract("rotation matrix has non-finite entries"));
        }
        let err = (m.transpose() * m - Mat3::identity()).abs().max();
        let det = m.determinant();
        if err > UNIT_TOL || (det - 1.0).abs() > UNIT_TOL {
            return Err(Error::contract(format!(
                "matrix is not a proper rotation (orthonormality error {err:.2e}, det {det})"
            )));
        }
        Ok(Rotation(m))
    }

    /// Project an almost-orthonormal matrix onto SO(3) through a quaternion round trip.
    pub fn from_matrix_orthonormalized(m: Mat3) -> Self {
        Rotation(m).to_quaternion().rotation_matrix().into()
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Rotation::from_matrix(Mat3::from_row_slice(&[
            rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
            rows[2][1], rows[2][2],
        ]))
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Geodesic distance: the angle of `selfᵀ · other`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        let d = self.0.transpose() * other.0;
        let cos = 0.5 * (d.trace() - 1.0);
        let axis = Vec3::new(
            d[(2, 1)] - d[(1, 2)],
            d[(0, 2)] - d[(2, 0)],
            d[(1, 0)] - d[(0, 1)],
        );
        (0.5 * axis.norm()).atan2(cos)
    }

    /// Shepperd's method; the result has a non-negative scalar part.
    pub fn to_quaternion(&self) -> Quaternion {
        let m = &self.0;
        let tr = m.trace();
        let q = if tr > m[(0, 0)] && tr > m[(1, 1)] && tr > m[(2, 2)] {
            let s = (1.0 + tr).sqrt() * 2.0;
            Quaternion::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quaternion::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quaternion::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quaternion::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.normalized().canonical()
    }

    pub fn to_euler(&self) -> EulerReadback {
        rotation_to_euler(self)
    }
}

impl From<Mat3> for Rotation {
    /// Unchecked wrap for matrices produced by exact constructions.
    fn from(m: Mat3) -> Self {
        Rotation(m)
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;

    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Roll, pitch, yaw in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub const fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        EulerAngles { roll, pitch, yaw }
    }

    pub fn to_rotation(&self) -> Rotation {
        euler_to_rotation(self)
    }
}

/// Result of decomposing a rotation into Euler angles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerReadback {
    pub angles: EulerAngles,
    /// Pitch was within [`GIMBAL_LOCK_TOL`] of ±π/2; yaw was pinned to 0 and
    /// the whole residual rotation about the vertical assigned to roll.
    pub gimbal_lock: bool,
}

/// `R_z(yaw) · R_y(pitch) · R_x(roll)`.
pub fn euler_to_rotation(e: &EulerAngles) -> Rotation {
    Rotation::rot_z(e.yaw) * Rotation::rot_y(e.pitch) * Rotation::rot_x(e.roll)
}

pub fn rotation_to_euler(r: &Rotation) -> EulerReadback {
    let m = r.matrix();
    let sp = (-m[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    if std::f64::consts::FRAC_PI_2 - pitch.abs() < GIMBAL_LOCK_TOL {
        // yaw := 0; then row 0 = [0, ±sin(roll), ±cos(roll)] and row 1 = [0, cos(roll), -sin(roll)]
        let roll = (sp.signum() * m[(0, 1)]).atan2(m[(1, 1)]);
        return EulerReadback {
            angles: EulerAngles::new(wrap_pi(roll), pitch, 0.0),
            gimbal_lock: true,
        };
    }
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    EulerReadback {
        angles: EulerAngles::new(wrap_pi(roll), pitch, wrap_pi(yaw)),
        gimbal_lock: false,
    }
}

/// Wrap an angle into (−π, π].
pub fn wrap_pi(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// First-order direction cosine matrix for small angles:
///
/// ```text
/// [  1    yaw  -pitch ]
/// [ -yaw  1     roll  ]
/// [ pitch -roll  1    ]
/// ```
///
/// This linearizes the transpose of [`euler_to_rotation`] (the frame, or
/// passive, form). It is not orthonormal; callers own the O(angle²) error.
pub fn dcm_small_angle(e: &EulerAngles) -> Mat3 {
    Mat3::new(
        1.0, e.yaw, -e.pitch, -e.yaw, 1.0, e.roll, e.pitch, -e.roll, 1.0,
    )
}

/// Coordinate frames a transform may connect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameTag {
    Body,
    Camera,
    Inertial,
    World,
}

impl fmt::Display for FrameTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FrameTag::Body => "body",
            FrameTag::Camera => "camera",
            FrameTag::Inertial => "inertial",
            FrameTag::World => "world",
        };
        f.write_str(s)
    }
}

/// A rotation that remembers which frames it connects.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramedRotation {
    pub from: FrameTag,
    pub to: FrameTag,
    pub rotation: Rotation,
}

impl FramedRotation {
    pub fn new(from: FrameTag, to: FrameTag, rotation: Rotation) -> Self {
        FramedRotation { from, to, rotation }
    }

    /// `self ∘ inner`: apply `inner` first. Requires `inner.to == self.from`.
    pub fn compose(&self, inner: &FramedRotation) -> Result<FramedRotation> {
        if inner.to != self.from {
            return Err(Error::FrameMismatch {
                left: format!("{}->{}", self.from, self.to),
                right: format!("{}->{}", inner.from, inner.to),
            });
        }
        Ok(FramedRotation::new(
            inner.from,
            self.to,
            self.rotation * inner.rotation,
        ))
    }

    pub fn inverse(&self) -> FramedRotation {
        FramedRotation::new(self.to, self.from, self.rotation.transpose())
    }
}
