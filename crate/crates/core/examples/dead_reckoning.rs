// Strapdown dead reckoning around a simulated circle, noiseless and with
// accelerometer noise.

use std::f64::consts::TAU;

use geomag_align::sim::{synthesize_trace, MagneticFieldModel, SensorSetup, SpeedProfile, TrajectorySpec};
use geomag_align::strapdown::{dead_reckon, EnvironmentConstants, PoseState, SensorNoiseModel};
use geomag_align::{Result, Rotation, Vec3};

pub fn run() -> Result<(f64, f64)> {
    let (radius, speed) = (2.0, 0.5);
    let circle = TrajectorySpec::Circle {
        center: Vec3::zeros(),
        radius,
        profile: SpeedProfile::constant(speed),
        plane: Rotation::identity(),
        start_angle: 0.0,
        duration: TAU * radius / speed,
    };
    let field = MagneticFieldModel::uniform(Vec3::new(20.0, 0.0, -40.0));
    let env = EnvironmentConstants::at_latitude(0.0).without_earth_rate();

    let mut drift = [0.0; 2];
    for (slot, acc_sigma) in drift.iter_mut().zip([0.0, 0.02]) {
        let noise = SensorNoiseModel {
            acc_sigma,
            ..SensorNoiseModel::noiseless()
        };
        let setup = SensorSetup {
            sensor_id: "imu",
            sample_rate_hz: 100.0,
            field: &field,
            noise: &noise,
            distortion: None,
            seed: 3,
        };
        let (trace, truth) = synthesize_trace(&circle, &setup)?;
        let start = PoseState::new(0.0, truth[0].attitude, truth[0].velocity, truth[0].position);
        let states = dead_reckon(&trace, &start, &env)?;
        *slot = (states.last().expect("non-empty").s - truth.last().expect("non-empty").position).norm();
        println!("acc sigma {acc_sigma} m/s^2: error after one lap {:.4} m", *slot);
    }
    Ok((drift[0], drift[1]))
}

fn main() -> Result<()> {
    run().map(|_| ())
}
