//! Geomagnetic inertial navigation.
//!
//! Calibrates magnetometers, dead-reckons IMU rigs and anchors several
//! independently moving rigs in one world frame referenced to magnetic north
//! at the first sensor. A built-in simulator provides ground truth for every
//! estimator.
//!
//! Conventions used throughout:
//!
//! * quaternions are scalar-first, Hamilton product, body → world as `q v q*`;
//! * Euler angles are intrinsic z-y-x, `R = Rz(yaw)·Ry(pitch)·Rx(roll)`;
//! * the navigation frame is a local tangent frame, x magnetic north, z up,
//!   gravity `(0, 0, −9.81)`;
//! * magnetic quantities are in µT, lengths in m, times in s.

pub mod align;
pub mod cloud;
pub mod config;
pub mod error;
pub mod filters;
pub mod geometry;
pub mod io;
pub mod magcal;
pub mod pipeline;
pub mod sim;
pub mod strapdown;

pub use error::{Error, Result};
pub use geometry::{EulerAngles, FrameTag, Mat3, Quaternion, Rotation, Vec3};
