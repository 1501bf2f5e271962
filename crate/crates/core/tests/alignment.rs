use geomag_align::align::{anchor_wcs, north_reference, transfer_functions, FusionMode, SensorInit};
use geomag_align::cloud::{benchmark_landmarks, merge_error, observe_landmarks, transform_cloud};
use geomag_align::config::RunConfig;
use geomag_align::filters::{min_eigenvalue, KalmanState};
use geomag_align::io::TruthRecord;
use geomag_align::magcal::MagCalibration;
use geomag_align::pipeline::{fuse_trace, simulate, track_rmse, TruthInWcs};
use geomag_align::sim::{synthesize_trace, FieldSource, MagneticFieldModel, SensorSetup, SpeedProfile, TrajectorySpec};
use geomag_align::strapdown::{PoseState, SensorNoiseModel};
use geomag_align::{EulerAngles, Mat3, Quaternion, Rotation, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn heading_of_rolled_sensor_in_dipping_field() {
    let field = MagneticFieldModel::uniform(MagneticFieldModel::earth_background(50.0, 60f64.to_radians()));
    let attitude = EulerAngles::new(30f64.to_radians(), 0.0, 40f64.to_radians());
    let traj = TrajectorySpec::Stationary {
        position: Vec3::zeros(),
        attitude,
        duration: 1.0,
    };
    let noise = SensorNoiseModel::noiseless();
    let setup = SensorSetup {
        sensor_id: "s",
        sample_rate_hz: 10.0,
        field: &field,
        noise: &noise,
        distortion: None,
        seed: 0,
    };
    let (trace, _) = synthesize_trace(&traj, &setup).unwrap();
    let r = north_reference(&trace[0].mag, &trace[0].acc).unwrap();
    let err = r.rotation.angle_to(&attitude.to_rotation()).to_degrees();
    assert!(err < 0.1, "heading error {err} deg");
}

#[test]
fn identical_poses_anchor_to_identity() {
    let r = north_reference(&Vec3::new(18.0, -4.0, -41.0), &Vec3::new(0.3, -0.2, 9.8)).unwrap();
    let inits: Vec<SensorInit> = ["a", "b"]
        .iter()
        .map(|id| SensorInit {
            sensor_id: id.to_string(),
            reference: Some(r),
            state: PoseState::at_rest(0.0, Quaternion::IDENTITY),
        })
        .collect();
    let anchoring = anchor_wcs(&inits, None).unwrap();
    let t = anchoring.transform("b").unwrap();
    assert!(t.d_1n.norm() < 1e-12);
    assert!(t.r_1n.angle_to(&Rotation::identity()) < 1e-12);
}

#[test]
fn transfer_function_in_linear_gradient() {
    let field = MagneticFieldModel::new(FieldSource::LinearGradient {
        base: Vec3::new(20.0, 0.0, -40.0),
        gradient: Mat3::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        origin: Vec3::zeros(),
    });
    let traj = TrajectorySpec::Line {
        start: Vec3::zeros(),
        direction: Vec3::x(),
        profile: SpeedProfile {
            hold: 0.5,
            ramp: 1.0,
            speed: 0.8,
        },
        attitude: EulerAngles::new(0.0, 0.0, 0.2),
        duration: 4.0,
    };
    let noise = SensorNoiseModel::noiseless();
    let setup = SensorSetup {
        sensor_id: "s",
        sample_rate_hz: 100.0,
        field: &field,
        noise: &noise,
        distortion: None,
        seed: 0,
    };
    let (trace, truth) = synthesize_trace(&traj, &setup).unwrap();
    let (first, last) = (&truth[0], truth.last().unwrap());
    let delta_s = last.position - first.position;
    let delta_r = first.attitude.to_rotation().unwrap().transpose() * last.attitude.to_rotation().unwrap();
    let tf = transfer_functions(&trace, &delta_s, &delta_r).unwrap();
    let f_s = tf.f_s.unwrap();
    assert!((f_s - 1.0).abs() < 0.01, "F_s = {f_s}");
    assert!(tf.f_phi.angle_to(&Rotation::identity()) < 1e-9);
}

const WALK: &str = r#"
sample_rate_hz = 100.0
[noise]
acc_sigma = 0.05
gyro_sigma = 0.0005
mag_sigma = 0.3
[field]
type = "anomalies"
base = [20.0, 0.0, -40.0]
dipoles = [{ location = [0.5, 0.0, -3.0], moment = [60.0, 0.0, 300.0] }]
[[sensors]]
id = "walker"
trajectory = { type = "line", velocity = [0.4, 0.0, 0.0], hold = 2.5, ramp = 1.0, duration = 8.0 }
"#;

#[test]
fn fusion_beats_either_channel_alone() {
    let cfg = RunConfig::parse(WALK).unwrap();
    let cal = MagCalibration::identity();
    let mut sums = [0.0; 3];
    let modes = [FusionMode::Fused, FusionMode::Inertial, FusionMode::Magnetic];
    for seed in 0..50 {
        let (samples, truth) = simulate(&cfg, seed).unwrap();
        let truth = TruthInWcs::new(truth.iter().map(TruthRecord::from).collect(), "walker", 0.0).unwrap();
        for (sum, mode) in sums.iter_mut().zip(modes) {
            let r = fuse_trace(samples.clone(), &cal, &cfg, Some(mode)).unwrap();
            assert_eq!(r.mode, mode);
            *sum += track_rmse(&r.tracks, &truth)["walker"].powi(2);
        }
    }
    let [fused, inertial, magnetic] = sums.map(|s| (s / 50.0f64).sqrt());
    assert!(fused < inertial && fused < magnetic, "fused {fused}, inertial {inertial}, magnetic {magnetic}");
}

#[test]
fn kalman_constant_acceleration_and_psd_covariance() {
    let mut k = KalmanState::at_rest(Vec3::zeros(), 0.01, 0.01, 0.05, 0.1);
    for _ in 0..200 {
        k.predict(&Vec3::new(1.0, 0.0, 0.0), 0.01).unwrap();
    }
    assert!((k.position().x - 2.0).abs() < 0.02, "{}", k.position().x);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut k = KalmanState::at_rest(Vec3::zeros(), 1.0, 1.0, 0.2, 0.5);
    for step in 0..100_000 {
        let acc = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        k.predict(&acc, rng.random_range(1e-3..0.05)).unwrap();
        if step % 3 == 0 {
            let z = k.position() + Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5));
            let r = Mat3::identity() * rng.random_range(1e-4..1.0);
            k.update(&z, &r).unwrap();
        }
        let asym = (k.p - k.p.transpose()).abs().max();
        assert!(asym < 1e-12 * (1.0 + k.p.abs().max()), "asymmetric at step {step}");
        assert!(min_eigenvalue(&k.p) > -1e-12, "not PSD at step {step}");
    }
}

#[test]
fn merge_error_tracks_anchor_error() {
    let lm = benchmark_landmarks();
    let pose_b = (Rotation::rot_z(0.4), Vec3::new(1.0, -0.5, 0.2));
    let a = observe_landmarks(&lm, &Rotation::identity(), &Vec3::zeros(), 0.01, 1, "a", 0.0);
    let b = observe_landmarks(&lm, &pose_b.0, &pose_b.1, 0.01, 2, "b", 0.0);
    let truth = merge_error(&a, &transform_cloud(&b, &pose_b.0, &pose_b.1)).unwrap().rmse;
    for err in [0.02, 0.05, 0.1, 0.2] {
        let shifted = pose_b.1 + Vec3::new(0.6, -0.8, 0.0) * err;
        let est = merge_error(&a, &transform_cloud(&b, &pose_b.0, &shifted)).unwrap().rmse;
        assert!(est >= truth && est - truth <= 2.0 * err, "error {err}: {est} vs {truth}");
    }
}

#[test]
fn transform_round_trip() {
    let lm = benchmark_landmarks();
    let c = observe_landmarks(&lm, &Rotation::identity(), &Vec3::zeros(), 0.0, 0, "c", 0.0);
    let r = EulerAngles::new(0.3, -0.2, 1.1).to_rotation();
    let t = Vec3::new(0.5, -2.0, 1.0);
    let there = transform_cloud(&c, &r, &t);
    let back = transform_cloud(&there, &r.transpose(), &(-(r.transpose().apply(&t))));
    let worst = c.points.iter().zip(&back.points).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
    assert!(worst < 1e-12);
}
