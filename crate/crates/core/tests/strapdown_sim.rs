use std::f64::consts::TAU;

use geomag_align::sim::{
    field_kinematics_residual, synthesize_trace, Dipole, FieldSource, MagneticFieldModel, SensorSetup, SpeedProfile, TrajectorySpec,
};
use geomag_align::strapdown::{dead_reckon, EnvironmentConstants, PoseState, SensorNoiseModel, STANDARD_GRAVITY};
use geomag_align::{EulerAngles, Rotation, Vec3};

fn earth_field() -> MagneticFieldModel {
    MagneticFieldModel::uniform(Vec3::new(20.0, 0.0, -40.0))
}

fn setup<'a>(field: &'a MagneticFieldModel, noise: &'a SensorNoiseModel, rate: f64, seed: u64) -> SensorSetup<'a> {
    SensorSetup {
        sensor_id: "s",
        sample_rate_hz: rate,
        field,
        noise,
        distortion: None,
        seed,
    }
}

fn stationary(duration: f64) -> TrajectorySpec {
    TrajectorySpec::Stationary {
        position: Vec3::zeros(),
        attitude: EulerAngles::new(0.0, 0.0, 0.3),
        duration,
    }
}

#[test]
fn one_lap_of_noiseless_circle_closes_within_a_centimetre() {
    let (radius, speed) = (2.0, 0.5);
    let lap = TAU * radius / speed;
    let traj = TrajectorySpec::Circle {
        center: Vec3::zeros(),
        radius,
        profile: SpeedProfile::constant(speed),
        plane: Rotation::identity(),
        start_angle: 0.0,
        duration: lap,
    };
    let (field, noise) = (earth_field(), SensorNoiseModel::noiseless());
    let (trace, truth) = synthesize_trace(&traj, &setup(&field, &noise, 100.0, 0)).unwrap();
    let t0 = &truth[0];
    let initial = PoseState::new(0.0, t0.attitude, t0.velocity, t0.position);
    let env = EnvironmentConstants::at_latitude(0.0).without_earth_rate();
    let states = dead_reckon(&trace, &initial, &env).unwrap();
    let err = (states.last().unwrap().s - truth.last().unwrap().position).norm();
    assert!(err < 0.01, "drift over one lap: {err} m");
}

#[test]
fn unfiltered_accelerometer_noise_grows_like_a_random_walk() {
    // Per-sample sigma at 10 Hz, compared against the density form; see the
    // random-walk note in the README.
    let (sigma, rate, seeds) = (0.05, 10.0, 50);
    let field = earth_field();
    let noise = SensorNoiseModel {
        acc_sigma: sigma,
        ..SensorNoiseModel::noiseless()
    };
    let env = EnvironmentConstants::at_latitude(0.0).without_earth_rate();
    let mut at5 = Vec::new();
    let mut at10 = Vec::new();
    for seed in 0..seeds {
        let (trace, truth) = synthesize_trace(&stationary(10.0), &setup(&field, &noise, rate, seed)).unwrap();
        let states = dead_reckon(&trace, &PoseState::at_rest(0.0, truth[0].attitude), &env).unwrap();
        at5.push(states[50].s.norm());
        at10.push(states.last().unwrap().s.norm());
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (m5, m10) = (median(&mut at5), median(&mut at10));
    let predicted = sigma * 10f64.powf(1.5) / 3f64.sqrt();
    let ratio = m10 / predicted;
    assert!((1.0 / 3.0..3.0).contains(&ratio), "median {m10} m vs predicted {predicted} m");
    assert!(m10 / m5 > 2.0, "growth from 5 s to 10 s only {}", m10 / m5);
}

#[test]
fn stationary_noiseless_accelerometer_reads_one_g() {
    let (field, noise) = (earth_field(), SensorNoiseModel::noiseless());
    let (trace, _) = synthesize_trace(&stationary(5.0), &setup(&field, &noise, 50.0, 0)).unwrap();
    assert!(trace.iter().all(|s| (s.acc.norm() - STANDARD_GRAVITY).abs() < 1e-12));
}

#[test]
fn constant_velocity_line_has_no_specific_force_beyond_gravity() {
    let traj = TrajectorySpec::Line {
        start: Vec3::zeros(),
        direction: Vec3::new(1.0, 1.0, 0.0),
        profile: SpeedProfile::constant(1.5),
        attitude: EulerAngles::new(0.2, -0.1, 0.7),
        duration: 3.0,
    };
    let (field, noise) = (earth_field(), SensorNoiseModel::noiseless());
    let (trace, truth) = synthesize_trace(&traj, &setup(&field, &noise, 100.0, 0)).unwrap();
    for (s, t) in trace.iter().zip(&truth) {
        let world = t.attitude.rotate(&s.acc);
        assert!((world - Vec3::new(0.0, 0.0, STANDARD_GRAVITY)).norm() < 1e-12);
    }
}

#[test]
fn gyro_noise_statistics_match_the_model() {
    let sigma = 0.01;
    let bias = Vec3::new(0.002, -0.001, 0.0005);
    let field = earth_field();
    let noise = SensorNoiseModel {
        gyro_sigma: sigma,
        gyro_bias: bias,
        ..SensorNoiseModel::noiseless()
    };
    let (trace, truth) = synthesize_trace(&stationary(999.99), &setup(&field, &noise, 100.0, 5)).unwrap();
    let n = trace.len() as f64;
    assert_eq!(trace.len(), 100_000);
    let resid: Vec<Vec3> = trace.iter().zip(&truth).map(|(s, t)| s.gyro - t.angular_rate - bias).collect();
    let mean = resid.iter().sum::<Vec3>() / n;
    for axis in 0..3 {
        assert!(mean[axis].abs() < 3.0 * sigma / n.sqrt(), "axis {axis} mean {}", mean[axis]);
        let var = resid.iter().map(|r| (r[axis] - mean[axis]).powi(2)).sum::<f64>() / n;
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "axis {axis} variance {var}");
    }
}

#[test]
fn same_seed_same_trace() {
    let field = earth_field();
    let noise = SensorNoiseModel {
        acc_sigma: 0.1,
        gyro_sigma: 0.01,
        mag_sigma: 0.2,
        ..SensorNoiseModel::noiseless()
    };
    let a = synthesize_trace(&stationary(2.0), &setup(&field, &noise, 100.0, 9)).unwrap();
    let b = synthesize_trace(&stationary(2.0), &setup(&field, &noise, 100.0, 9)).unwrap();
    let c = synthesize_trace(&stationary(2.0), &setup(&field, &noise, 100.0, 10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

#[test]
fn field_kinematics_residuals() {
    let noise = SensorNoiseModel::noiseless();
    let dipole = MagneticFieldModel::new(FieldSource::Dipole(Dipole {
        location: Vec3::new(0.0, 0.0, -2.0),
        moment: Vec3::new(0.0, 20.0, 80.0),
    }));
    let (_, truth) = synthesize_trace(&stationary(2.0), &setup(&dipole, &noise, 100.0, 0)).unwrap();
    assert!(field_kinematics_residual(&truth) < 1e-12);

    let field = earth_field();
    let circle = TrajectorySpec::Circle {
        center: Vec3::new(1.0, 2.0, 0.0),
        radius: 1.5,
        profile: SpeedProfile::constant(0.8),
        plane: Rotation::identity(),
        start_angle: 0.4,
        duration: 5.0,
    };
    let (_, truth) = synthesize_trace(&circle, &setup(&field, &noise, 1000.0, 0)).unwrap();
    let b = field.field_at(&Vec3::zeros()).unwrap().b.norm();
    let r = field_kinematics_residual(&truth);
    assert!(r < 1e-6 * b, "circle residual {r}");
}
