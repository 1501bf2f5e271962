use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geomag_align::io::{parse_poses, parse_trace, read_truth};
use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geomag-align")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = bin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn json(p: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn bundled(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name).display().to_string()
}

const STATIONARY: &str = r#"
sample_rate_hz = 50.0
[[sensors]]
id = "still"
trajectory = { type = "stationary", attitude_deg = [3.0, -2.0, 25.0], duration = 4.0 }
"#;

#[test]
fn simulate_is_deterministic_and_stationary_reads_one_g() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "still.toml", STATIONARY);
    ok(&["simulate", "--config", &cfg, "--out", &path(dir.path(), "a.jsonl")]);
    ok(&["simulate", "--config", &cfg, "--out", &path(dir.path(), "b.jsonl")]);
    let a = fs::read(path(dir.path(), "a.jsonl")).unwrap();
    assert_eq!(a, fs::read(path(dir.path(), "b.jsonl")).unwrap());
    assert_eq!(
        fs::read(path(dir.path(), "a_truth.jsonl")).unwrap(),
        fs::read(path(dir.path(), "b_truth.jsonl")).unwrap()
    );
    let trace = parse_trace(std::str::from_utf8(&a).unwrap()).unwrap();
    assert_eq!(trace.len(), 201);
    assert!(trace.iter().all(|s| (s.acc.norm() - 9.81).abs() < 1e-12));

    ok(&["simulate", "--config", &cfg, "--seed", "99", "--out", &path(dir.path(), "c.jsonl")]);
    let noisy = write(dir.path(), "noisy.toml", &format!("{STATIONARY}[noise]\nacc_sigma = 0.1\n"));
    ok(&["simulate", "--config", &noisy, "--seed", "1", "--out", &path(dir.path(), "d.jsonl")]);
    ok(&["simulate", "--config", &noisy, "--seed", "2", "--out", &path(dir.path(), "e.jsonl")]);
    assert_ne!(fs::read(path(dir.path(), "d.jsonl")).unwrap(), fs::read(path(dir.path(), "e.jsonl")).unwrap());
}

#[test]
fn simulated_circle_lies_on_its_circle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "circle.toml",
        "[[sensors]]\nid = \"c\"\ntrajectory = { type = \"circle\", center = [1.0, -2.0, 0.5], radius = 1.5, speed = 0.7, duration = 12.0, hold = 1.0, ramp = 1.0 }\n",
    );
    ok(&["simulate", "--config", &cfg, "--out", &path(dir.path(), "t.jsonl")]);
    for r in read_truth(Path::new(&path(dir.path(), "t_truth.jsonl"))).unwrap() {
        let d = [r.position[0] - 1.0, r.position[1] + 2.0];
        assert!(((d[0] * d[0] + d[1] * d[1]).sqrt() - 1.5).abs() < 1e-9);
        assert!((r.position[2] - 0.5).abs() < 1e-12);
    }
}

#[test]
fn schema_errors_name_the_field_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[noise]\nacc_sigmaa = 0.1\n");
    let out = bin(&["simulate", "--config", &bad, "--out", &path(dir.path(), "t.jsonl")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("noise"), "{}", String::from_utf8_lossy(&out.stderr));

    let neg = write(dir.path(), "neg.json", r#"{"noise": {"mag_sigma": -1.0}}"#);
    let out = bin(&["simulate", "--config", &neg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("noise.mag_sigma"));
}

#[test]
fn calibrate_reports_improvement_and_rejects_short_traces() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--config", &bundled("calibration.toml"), "--out", &path(dir.path(), "sweep.jsonl")]);
    ok(&["calibrate", &path(dir.path(), "sweep.jsonl"), "--out", &path(dir.path(), "cal.json")]);
    let report = json(&path(dir.path(), "cal_report.json"));
    assert!(report["stability"]["epsilon"].as_f64().unwrap() > 90.0);
    assert_eq!(report["tool"], "geomag-align");
    assert_eq!(report["inputs"].as_object().unwrap().len(), 1);
    let cal = json(&path(dir.path(), "cal.json"));
    assert!(cal["C"].is_array() && cal["b_H"].is_array());

    let clean = fs::read_to_string(bundled("calibration.toml"))
        .unwrap()
        .replace("[distortion]", "[unused]")
        .lines()
        .filter(|l| !l.starts_with("hard_iron") && !l.starts_with("soft_iron") && !l.starts_with("[unused]"))
        .collect::<Vec<_>>()
        .join("\n");
    let clean = write(dir.path(), "clean.toml", &clean);
    ok(&["simulate", "--config", &clean, "--out", &path(dir.path(), "clean.jsonl")]);
    ok(&["calibrate", &path(dir.path(), "clean.jsonl"), "--out", &path(dir.path(), "clean_cal.json")]);
    let eps = json(&path(dir.path(), "clean_cal_report.json"))["stability"]["epsilon"].as_f64().unwrap();
    assert!(eps.abs() < 1.0, "epsilon on a clean sweep: {eps}");

    let short: String = fs::read_to_string(path(dir.path(), "sweep.jsonl")).unwrap().lines().take(5).map(|l| format!("{l}\n")).collect();
    let short = write(dir.path(), "short.jsonl", &short);
    let out = bin(&["calibrate", &short, "--out", &path(dir.path(), "x.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient data"));
}

#[test]
fn fuse_noiseless_stationary_stays_at_origin() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "still.toml", STATIONARY);
    ok(&["simulate", "--config", &cfg, "--out", &path(dir.path(), "t.jsonl")]);
    ok(&["fuse", &path(dir.path(), "t.jsonl"), "--config", &cfg, "--out", &path(dir.path(), "p.jsonl")]);
    let poses = parse_poses(&fs::read_to_string(path(dir.path(), "p.jsonl")).unwrap()).unwrap();
    assert_eq!(poses.len(), 201);
    assert!(poses.iter().all(|p| p.s.iter().all(|x| x.abs() < 1e-6)));
    let report = json(&path(dir.path(), "p_report.json"));
    assert_eq!(report["mode"], "inertial");
}

#[test]
fn fuse_noiseless_circle_drifts_under_a_centimetre_per_lap() {
    let dir = tempfile::tempdir().unwrap();
    // One lap after a 2.5 s hold and 1 s ramp.
    let lap = 2.0 * std::f64::consts::PI * 2.0 / 0.5;
    let cfg = write(
        dir.path(),
        "circle.toml",
        &format!(
            "sample_rate_hz = 100.0\n[environment]\nearth_rate = false\n[[sensors]]\nid = \"c\"\n\
             trajectory = {{ type = \"circle\", radius = 2.0, speed = 0.5, hold = 2.5, ramp = 1.0, duration = {} }}\n",
            3.5 + lap
        ),
    );
    ok(&["simulate", "--config", &cfg, "--out", &path(dir.path(), "t.jsonl")]);
    ok(&[
        "fuse",
        &path(dir.path(), "t.jsonl"),
        "--config",
        &cfg,
        "--truth",
        &path(dir.path(), "t_truth.jsonl"),
        "--out",
        &path(dir.path(), "p.jsonl"),
    ]);
    let poses = parse_poses(&fs::read_to_string(path(dir.path(), "p.jsonl")).unwrap()).unwrap();
    let truth = read_truth(Path::new(&path(dir.path(), "t_truth.jsonl"))).unwrap();
    // The WCS is the sensor's initial body frame, so express the true
    // displacement in that frame.
    let start = &truth[0];
    let q0 = start.attitude().to_rotation().unwrap();
    let end = truth.last().unwrap();
    let expected = q0.transpose().apply(&(end.position() - start.position()));
    let got = poses.last().unwrap().position();
    let drift = (got - expected).norm();
    assert!(drift < 0.01, "drift {drift} m");
}

#[test]
fn fuse_reports_partial_failure_and_filter_benefit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "mixed.toml",
        r#"
sample_rate_hz = 100.0
[noise]
acc_sigma = 0.05
mag_sigma = 0.5
[environment]
earth_rate = false
[field]
type = "anomalies"
dipoles = [{ location = [0.5, 0.0, -3.0], moment = [60.0, 0.0, 300.0] }]
[[sensors]]
id = "still"
trajectory = { type = "stationary", duration = 10.0 }
[[sensors]]
id = "spinner"
trajectory = { type = "circle", radius = 1.0, speed = 0.5, duration = 10.0 }
"#,
    );
    ok(&["simulate", "--config", &cfg, "--seed", "4", "--out", &path(dir.path(), "t.jsonl")]);
    let out = bin(&[
        "fuse",
        &path(dir.path(), "t.jsonl"),
        "--config",
        &cfg,
        "--truth",
        &path(dir.path(), "t_truth.jsonl"),
        "--out",
        &path(dir.path(), "p.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&path(dir.path(), "p_report.json"));
    let sensors = report["sensors"].as_array().unwrap();
    assert!(sensors.iter().any(|s| s["id"] == "spinner" && s["status"] == "failed"));
    assert_eq!(report["mode"], "fused");
    let ratio = report["accuracy"]["ratio_fused_over_inertial"]["still"].as_f64().unwrap();
    assert!(ratio < 0.5, "fused/inertial RMSE ratio {ratio}");
    assert!(report["config_hash"].as_str().unwrap().len() == 64);

    let only_spinner: String = fs::read_to_string(path(dir.path(), "t.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| l.contains("spinner"))
        .map(|l| format!("{l}\n"))
        .collect();
    let only = write(dir.path(), "spin.jsonl", &only_spinner);
    let out = bin(&["fuse", &only, "--config", &cfg, "--out", &path(dir.path(), "q.jsonl")]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn align_single_cloud_and_unmatched_ids() {
    let dir = tempfile::tempdir().unwrap();
    let poses = write(
        dir.path(),
        "p.jsonl",
        "{\"t\":0.0,\"sensor\":\"a\",\"q\":[0.7071067811865476,0.0,0.0,0.7071067811865476],\"v\":[0,0,0],\"s\":[1.0,2.0,3.0]}\n",
    );
    let cloud = write(dir.path(), "a.xyz", "# sensor=a t=0\n1 0 0\n0 1 0\n");
    ok(&["align", "--poses", &poses, &cloud, "--out", &path(dir.path(), "m.xyz")]);
    let merged = fs::read_to_string(path(dir.path(), "m.xyz")).unwrap();
    let pts: Vec<Vec<f64>> = merged
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|x| x.parse().unwrap()).collect())
        .collect();
    let want = [[1.0, 3.0, 3.0], [0.0, 2.0, 3.0]];
    for (p, w) in pts.iter().zip(want) {
        assert!(p.iter().zip(w).all(|(a, b)| (a - b).abs() < 1e-12), "{p:?} vs {w:?}");
    }

    let stray = write(dir.path(), "zz.xyz", "# sensor=zz t=0\n0 0 0\n");
    let out = bin(&["align", "--poses", &poses, &cloud, &stray, "--out", &path(dir.path(), "n.xyz")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zz"));
}

#[test]
fn bundled_scene_merge_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bundled("scene.toml");
    let p = |n: &str| path(dir.path(), n);
    let sweep = bundled("calibration.toml");
    ok(&["simulate", "--config", &sweep, "--out", &p("sweep.jsonl")]);
    ok(&["calibrate", &p("sweep.jsonl"), "--config", &sweep, "--out", &p("cal.json")]);
    ok(&["simulate", "--config", &cfg, "--out", &p("t.jsonl")]);
    ok(&["fuse", &p("t.jsonl"), "--cal", &p("cal.json"), "--config", &cfg, "--out", &p("poses.jsonl")]);
    ok(&[
        "align",
        "--poses",
        &p("poses.jsonl"),
        &p("rig-a.xyz"),
        &p("rig-b.xyz"),
        "--anchor",
        &p("poses_anchor.json"),
        "--truth",
        &p("t_truth.jsonl"),
        "--out",
        &p("merged.ply"),
    ]);
    let report = json(&p("merged_report.json"));
    let est = report["pairs"][0]["rmse_m"].as_f64().unwrap();
    let truth = report["pairs_truth_poses"][0]["rmse_m"].as_f64().unwrap();
    // Anchor errors are sub-millimetre here, far below the 1 cm point noise,
    // so the two scores agree to within sampling noise.
    assert!((est - truth).abs() < 0.1 * truth, "estimated {est} vs truth-pose {truth}");
    assert!(fs::read_to_string(p("merged.ply")).unwrap().starts_with("ply"));
    assert!(fs::read_to_string(p("merged_report_hist.csv")).unwrap().lines().count() > 1);
}

#[test]
fn log_level_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "still.toml", STATIONARY);
    let out = Command::new(env!("CARGO_BIN_EXE_geomag-align"))
        .args(["simulate", "--config", &cfg, "--out", &path(dir.path(), "t.jsonl")])
        .env("GEOMAG_ALIGN_LOG", "info")
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains("simulated 201 samples"));
    let quiet = bin(&["simulate", "--config", &cfg, "--out", &path(dir.path(), "u.jsonl")]);
    assert!(quiet.stderr.is_empty());
}
