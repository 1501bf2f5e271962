// Quaternions, rotation matrices and Euler angles, then a gyro-driven
// quarter turn.

use std::f64::consts::FRAC_PI_2;

use geomag_align::geometry::{dcm_small_angle, rotation_to_euler};
use geomag_align::strapdown::{propagate_attitude, PoseState};
use geomag_align::{EulerAngles, Quaternion, Result, Vec3};

pub fn run() -> Result<f64> {
    let q = Quaternion::from_axis_angle(&Vec3::z(), FRAC_PI_2)?;
    let r = q.to_rotation()?;
    println!("quarter turn about z maps x to {:?}", r.apply(&Vec3::x()).as_slice());

    let e = EulerAngles::new(0.2, -0.4, 1.3);
    let back = rotation_to_euler(&e.to_rotation());
    println!("euler round trip: {:?} -> {:?} (gimbal lock: {})", e, back.angles, back.gimbal_lock);

    let small = EulerAngles::new(0.01, 0.02, 0.03);
    let err = (dcm_small_angle(&small) - e.to_rotation().transpose().matrix()).abs().max();
    let err_small = (dcm_small_angle(&small) - small.to_rotation().transpose().matrix()).abs().max();
    println!("small-angle DCM error {err_small:.2e} (vs {err:.2e} when misused on large angles)");

    // 1 s at 90 deg/s in 10 kHz steps.
    let mut state = PoseState::at_rest(0.0, Quaternion::IDENTITY);
    for _ in 0..10_000 {
        state = propagate_attitude(&state, &Vec3::new(0.0, 0.0, FRAC_PI_2), 1e-4)?;
    }
    let yaw = rotation_to_euler(&state.q.to_rotation()?).angles.yaw.to_degrees();
    println!("integrated yaw after 1 s: {yaw:.6} deg");
    Ok(yaw)
}

fn main() -> Result<()> {
    run().map(|_| ())
}
