// Each example runs as a test so the examples directory cannot rot.

macro_rules! example {
    ($name:ident) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", stringify!($name), ".rs"));
        }
    };
}

example!(quaternion_kinematics);
example!(calibrate_magnetometer);
example!(dead_reckoning);
example!(wcs_alignment);
example!(kalman_fusion);
example!(simulate_trace);
example!(point_cloud_merge);
example!(full_pipeline);

#[test]
fn quaternion_kinematics_turns_ninety_degrees() {
    assert!((quaternion_kinematics::run().unwrap() - 90.0).abs() < 1e-6);
}

#[test]
fn calibrate_magnetometer_removes_distortion() {
    assert!(calibrate_magnetometer::run().unwrap() > 95.0);
}

#[test]
fn dead_reckoning_closes_noiseless_lap() {
    let (clean, noisy) = dead_reckoning::run().unwrap();
    assert!(clean < 0.01 && noisy > clean);
}

#[test]
fn wcs_alignment_recovers_separations() {
    assert!(wcs_alignment::run().unwrap() < 0.01);
}

#[test]
fn kalman_fusion_beats_double_integration() {
    assert!(kalman_fusion::run().unwrap() < 0.5);
}

#[test]
fn simulate_trace_writes_both_rigs() {
    assert_eq!(simulate_trace::run().unwrap(), 2402);
}

#[test]
fn point_cloud_merge_grows_with_anchor_error() {
    let e = point_cloud_merge::run().unwrap();
    assert!(e.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn full_pipeline_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let summary = full_pipeline::run(dir.path()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(summary).unwrap()).unwrap();
    assert_eq!(v["reports"].as_array().unwrap().len(), 3);
}
