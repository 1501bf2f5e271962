//! The end-to-end workflow behind the `geomag-align` binary:
//! simulate → calibrate → fuse → align, plus a summary report.
//!
//! Each command reads its inputs, writes every artifact atomically and
//! returns an [`Outcome`]. Reports embed the tool version, a hash of the
//! effective configuration and hashes of all input files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::align::{
    anchor_wcs, locomotion_step, north_reference, Anchoring, FieldContext, FieldInversion, FusionMode,
    LocomotionState, MagneticPositionSource, SensorInit, TransferFunctions, WcsAnchor,
};
use crate::cloud::{merge_clouds, merge_error, observe_landmarks, parse_ply, parse_xyz, to_ply, to_xyz, transform_cloud, Histogram, PointCloud};
use crate::config::{InitConfig, RunConfig};
use crate::error::{Error, Result};
use crate::filters::{KalmanState, LowPassState};
use crate::geometry::{Rotation, Vec3};
use crate::io::{
    format_poses, format_trace, format_truth, group_by_sensor, read_poses, read_trace, read_truth, sha256_file, sha256_hex,
    write_atomic, PoseRecord, TruthRecord,
};
use crate::magcal::{fit_calibration_with, MagnitudeGauge, stability_metrics, sweep_coverage, CalibrationFile, MagCalibration, MagSample, MagSweep};
use crate::sim::{sensor_seed, synthesize_trace, SensorSetup};
use crate::strapdown::{ImuSample, PoseState};

pub const TOOL: &str = "geomag-align";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Salt separating point-cloud noise streams from IMU noise streams.
const CLOUD_SEED_SALT: u64 = 0xC10D_5EED;
/// Coverage fraction below which the calibration report carries a warning.
const MIN_COVERAGE: f64 = 0.5;
/// Noise floors keeping the filter well-posed on noiseless data.
const MIN_MAG_SIGMA: f64 = 1e-3;
const MIN_Q_ACC: f64 = 1e-4;

/// Result of a command that ran to completion.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    /// Some, but not all, sensors failed.
    pub partial_failure: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.partial_failure {
            4
        } else {
            0
        }
    }
}

/// `dir/stem<suffix>` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn config_hash(cfg: &RunConfig) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(cfg)?.as_bytes()))
}

fn report_header(command: &str, cfg: Option<&RunConfig>, inputs: &[&Path]) -> Result<Value> {
    let mut hashes = BTreeMap::new();
    for p in inputs {
        hashes.insert(p.display().to_string(), sha256_file(p)?);
    }
    Ok(json!({
        "tool": TOOL,
        "version": VERSION,
        "command": command,
        "config_hash": cfg.map(config_hash).transpose()?,
        "config": cfg.map(serde_json::to_value).transpose()?,
        "inputs": hashes,
    }))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn merge_into(mut base: Value, extra: Value) -> Value {
    if let (Some(b), Value::Object(e)) = (base.as_object_mut(), extra) {
        b.extend(e);
    }
    base
}

// ---------------------------------------------------------------- simulate

pub struct SimulateArgs<'a> {
    pub config: &'a RunConfig,
    pub seed: Option<u64>,
    pub out: &'a Path,
    /// Defaults to `<out>_truth.jsonl`.
    pub truth: Option<&'a Path>,
    /// Directory for point clouds; defaults to the directory of `out`.
    pub clouds_dir: Option<&'a Path>,
}

/// Simulated samples for every configured sensor, interleaved by time.
pub fn simulate(cfg: &RunConfig, seed: u64) -> Result<(Vec<ImuSample>, Vec<crate::sim::TruthSample>)> {
    if cfg.sensors.is_empty() {
        return Err(Error::Schema {
            path: "sensors".into(),
            msg: "at least one sensor is required".into(),
        });
    }
    let field = cfg.field_model();
    let noise = cfg.noise_model();
    let distortion = cfg.distortion_calibration()?;
    let mut samples = Vec::new();
    let mut truth = Vec::new();
    for (i, s) in cfg.sensors.iter().enumerate() {
        let setup = SensorSetup {
            sensor_id: &s.id,
            sample_rate_hz: cfg.sample_rate_hz,
            field: &field,
            noise: &noise,
            distortion: distortion.as_ref(),
            seed: sensor_seed(seed, i),
        };
        let (a, b) = synthesize_trace(&s.trajectory.to_spec(), &setup).map_err(|e| match e {
            Error::Contract(msg) => Error::Schema {
                path: format!("sensors[{i}]"),
                msg,
            },
            other => other,
        })?;
        samples.extend(a);
        truth.extend(b);
    }
    // Stable sort keeps sensor order among equal timestamps.
    samples.sort_by(|a, b| a.t.total_cmp(&b.t));
    truth.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok((samples, truth))
}

/// Point clouds each sensor captures at the scene's capture time.
pub fn simulate_clouds(cfg: &RunConfig, seed: u64) -> Vec<PointCloud> {
    let Some(scene) = &cfg.scene else {
        return Vec::new();
    };
    let landmarks = cfg.landmarks();
    cfg.sensors
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let k = s.trajectory.to_spec().kinematics(scene.capture_time);
            let r = k.attitude.to_rotation().unwrap_or_else(|_| Rotation::identity());
            observe_landmarks(
                &landmarks,
                &r,
                &k.position,
                scene.point_noise,
                sensor_seed(seed ^ CLOUD_SEED_SALT, i),
                &s.id,
                scene.capture_time,
            )
        })
        .collect()
}

pub fn cmd_simulate(args: &SimulateArgs<'_>) -> Result<Outcome> {
    let mut cfg = args.config.clone();
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let (samples, truth) = simulate(&cfg, cfg.seed)?;
    let truth_path = args.truth.map(Path::to_path_buf).unwrap_or_else(|| sibling(args.out, "_truth.jsonl"));
    write_atomic(args.out, format_trace(&samples)?.as_bytes())?;
    write_atomic(&truth_path, format_truth(&truth)?.as_bytes())?;
    let mut artifacts = vec![args.out.to_path_buf(), truth_path];
    let dir = args
        .clouds_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| args.out.parent().map(Path::to_path_buf).unwrap_or_default());
    for cloud in simulate_clouds(&cfg, cfg.seed) {
        let path = dir.join(format!("{}.xyz", cloud.sensor_id));
        write_atomic(&path, to_xyz(&cloud).as_bytes())?;
        artifacts.push(path);
    }
    log::info!("simulated {} samples from {} sensor(s)", samples.len(), cfg.sensors.len());
    Ok(Outcome {
        artifacts,
        partial_failure: false,
    })
}

// --------------------------------------------------------------- calibrate

pub struct CalibrateArgs<'a> {
    pub trace: &'a Path,
    pub out: &'a Path,
    /// Defaults to `<out>_report.json`.
    pub report: Option<&'a Path>,
    /// Sensor to calibrate; defaults to the first in the trace.
    pub sensor: Option<&'a str>,
    pub config: Option<&'a RunConfig>,
}

pub fn cmd_calibrate(args: &CalibrateArgs<'_>) -> Result<Outcome> {
    let groups = group_by_sensor(read_trace(args.trace)?);
    let (id, samples) = match args.sensor {
        Some(want) => groups
            .into_iter()
            .find(|(id, _)| id == want)
            .ok_or_else(|| Error::UnmatchedSensors(vec![want.to_string()]))?,
        None => groups.into_iter().next().ok_or(Error::InsufficientData { needed: 12, got: 0 })?,
    };
    let sweep = MagSweep::new(samples.iter().map(|s| MagSample { t: s.t, b: s.mag }).collect())?;
    let gauge = args
        .config
        .and_then(|c| c.environment.reference_field_ut)
        .map_or(MagnitudeGauge::MeanRaw, MagnitudeGauge::Known);
    let cal = fit_calibration_with(&sweep, gauge)?;
    let stability = stability_metrics(&sweep, Some(&cal))?;
    let coverage = sweep_coverage(&sweep, &cal);
    let mut warnings = Vec::new();
    if coverage.fraction < MIN_COVERAGE {
        let w = format!(
            "sweep covers {:.0}% of field directions; rotate through several full turns",
            100.0 * coverage.fraction
        );
        log::warn!("{w}");
        warnings.push(w);
    }
    let report_path = args.report.map(Path::to_path_buf).unwrap_or_else(|| sibling(args.out, "_report.json"));
    let scatter_path = sibling(&report_path, "_sphere.csv");

    let mut scatter = String::from("t,raw_x,raw_y,raw_z,cal_x,cal_y,cal_z\n");
    for s in sweep.samples() {
        let c = cal.apply(&s.b);
        scatter.push_str(&format!("{},{},{},{},{},{},{}\n", s.t, s.b.x, s.b.y, s.b.z, c.x, c.y, c.z));
    }
    let report = merge_into(
        report_header("calibrate", args.config, &[args.trace])?,
        json!({
            "sensor": id,
            "calibration": cal.to_file(),
            "stability": stability,
            "coverage": coverage,
            "warnings": warnings,
            "sphere_scatter": scatter_path.display().to_string(),
        }),
    );
    write_json(args.out, &cal.to_file())?;
    write_atomic(&scatter_path, scatter.as_bytes())?;
    write_json(&report_path, &report)?;
    log::info!(
        "calibrated `{id}`: |B| = {:.2} uT, residual {:.3e} uT, epsilon {:.1}%",
        cal.field_magnitude,
        cal.fit_residual,
        stability.epsilon
    );
    Ok(Outcome {
        artifacts: vec![args.out.to_path_buf(), report_path, scatter_path],
        partial_failure: false,
    })
}

pub fn read_calibration(path: &Path) -> Result<MagCalibration> {
    let f: CalibrationFile = serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Schema {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    MagCalibration::from_file(&f)
}

// -------------------------------------------------------------------- fuse

/// First window of `cfg.static_window_s` seconds over which every sample is
/// static. Returns the inclusive index range.
pub fn detect_static_window(samples: &[ImuSample], cfg: &InitConfig, gravity: f64) -> Option<(usize, usize)> {
    let mut start = None;
    for (k, s) in samples.iter().enumerate() {
        let quiet = (s.acc.norm() - gravity).abs() <= cfg.acc_tolerance && s.gyro.norm() < cfg.gyro_threshold;
        if !quiet {
            start = None;
            continue;
        }
        let a = *start.get_or_insert(k);
        if s.t - samples[a].t >= cfg.static_window_s - 1e-9 {
            return Some((a, k));
        }
    }
    None
}

/// Initialization of one sensor from its static window.
#[derive(Clone, Debug)]
pub struct SensorStart {
    pub sensor_id: String,
    pub window: (usize, usize),
    pub init: SensorInit,
}

pub fn initialize_sensor(id: &str, samples: &[ImuSample], cfg: &RunConfig) -> Result<SensorStart> {
    let (a, b) = detect_static_window(samples, &cfg.initialization, cfg.environment.gravity).ok_or_else(|| {
        Error::Numerical(format!(
            "no {} s static window found for sensor `{id}`",
            cfg.initialization.static_window_s
        ))
    })?;
    let n = (b - a + 1) as f64;
    let acc = samples[a..=b].iter().map(|s| s.acc).sum::<Vec3>() / n;
    let mag = samples[a..=b].iter().map(|s| s.mag).sum::<Vec3>() / n;
    let t0 = samples[a].t;
    let reference = north_reference(&mag, &acc).map_err(|e| e.at_time(t0))?.with_time(t0);
    Ok(SensorStart {
        sensor_id: id.to_string(),
        window: (a, b),
        init: SensorInit {
            sensor_id: id.to_string(),
            reference: Some(reference),
            state: PoseState::at_rest(t0, reference.rotation.to_quaternion()),
        },
    })
}

/// Outcome of fusing one trace.
#[derive(Clone, Debug)]
pub struct FuseResult {
    pub anchoring: Anchoring,
    /// WCS poses per initialized sensor.
    pub tracks: Vec<(String, Vec<PoseState>)>,
    /// Sensors that could not be initialized or tracked, with the reason.
    pub failures: Vec<(String, String)>,
    pub init_times: Vec<f64>,
    pub mode: FusionMode,
}

fn choose_mode(cfg: &RunConfig, observable: bool) -> FusionMode {
    if cfg.filters.enabled && observable {
        FusionMode::Fused
    } else {
        FusionMode::Inertial
    }
}

/// Initialize, anchor and track every sensor of a calibrated trace.
/// `mode` overrides the configured fusion mode.
pub fn fuse_trace(samples: Vec<ImuSample>, cal: &MagCalibration, cfg: &RunConfig, mode: Option<FusionMode>) -> Result<FuseResult> {
    let groups: Vec<(String, Vec<ImuSample>)> = group_by_sensor(samples)
        .into_iter()
        .map(|(id, g)| {
            let g = g
                .into_iter()
                .map(|s| ImuSample {
                    mag: cal.apply(&s.mag),
                    ..s
                })
                .collect();
            (id, g)
        })
        .collect();
    if groups.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }

    let mut failures = Vec::new();
    let mut starts = Vec::new();
    let mut first_error = None;
    for (id, g) in &groups {
        match initialize_sensor(id, g, cfg) {
            Ok(s) => starts.push(s),
            Err(e) => {
                log::warn!("sensor `{id}` not initialized: {e}");
                failures.push((id.clone(), e.to_string()));
                first_error.get_or_insert(e);
            }
        }
    }
    if starts.is_empty() {
        return Err(first_error.unwrap_or(Error::InsufficientData { needed: 1, got: 0 }));
    }

    let model = cfg.field_model();
    let ctx = FieldContext {
        model: &model,
        origin: cfg.survey_origin_or_default(),
    };
    let field = (!model.is_uniform()).then_some(&ctx);
    let inits: Vec<SensorInit> = starts.iter().map(|s| s.init.clone()).collect();
    let anchoring = anchor_wcs(&inits, field)?;
    let observable = field.is_some() && !anchoring.anchor.heading_only;
    let mode = mode.unwrap_or_else(|| choose_mode(cfg, observable));
    let mode = if observable { mode } else { FusionMode::Inertial };
    let source = if observable {
        Some(FieldInversion::new(&ctx, &Vec3::zeros())?)
    } else {
        None
    };

    let mut tracks = Vec::new();
    for start in &starts {
        let g = &groups.iter().find(|(id, _)| *id == start.sensor_id).expect("group exists").1;
        let transform = anchoring.transform(&start.sensor_id).expect("anchored sensor");
        match track_sensor(g, start, &anchoring.anchor, &transform.d_1n, source.as_ref(), cfg, mode) {
            Ok(poses) => tracks.push((start.sensor_id.clone(), poses)),
            Err(e) => {
                log::warn!("sensor `{}` lost: {e}", start.sensor_id);
                failures.push((start.sensor_id.clone(), e.to_string()));
            }
        }
    }
    if tracks.is_empty() {
        return Err(Error::Numerical(format!("every sensor failed: {failures:?}")));
    }
    Ok(FuseResult {
        init_times: starts.iter().map(|s| s.init.state.t).collect(),
        anchoring,
        tracks,
        failures,
        mode,
    })
}

fn track_sensor(
    samples: &[ImuSample],
    start: &SensorStart,
    anchor: &WcsAnchor,
    d_wcs: &Vec3,
    source: Option<&FieldInversion<'_>>,
    cfg: &RunConfig,
    mode: FusionMode,
) -> Result<Vec<PoseState>> {
    let reference = start.init.reference.expect("initialized");
    let (a, b) = start.window;
    let env = cfg.environment();
    let noise = cfg.noise_model();
    // Sensors navigate in the north frame centred on the WCS origin.
    let s0 = anchor.r_world.apply(d_wcs);
    let q0 = reference.rotation.to_quaternion();
    let pose0 = PoseState::new(samples[a].t, q0, Vec3::zeros(), s0);
    let q_acc = cfg.filters.q_acc.unwrap_or(noise.acc_sigma).max(MIN_Q_ACC);
    let mag_sigma = cfg.filters.r_mag.unwrap_or(noise.mag_sigma).max(MIN_MAG_SIGMA);
    let kalman = KalmanState::at_rest(s0, 1e-3, 1e-3, q_acc, mag_sigma);
    let mut state = LocomotionState::new(
        pose0.clone(),
        &TransferFunctions::heading_only(Rotation::identity()),
        kalman,
        mode,
        env.clone(),
        mag_sigma,
    );
    if cfg.filters.remove_offset {
        let t_end = samples[a].t + cfg.filters.offset_window_s;
        let n = samples[a..=b].iter().take_while(|s| s.t <= t_end + 1e-9).count().max(1);
        let window = &samples[a..a + n];
        let offset = window.iter().map(|s| q0.rotate(&s.acc) + env.gravity).sum::<Vec3>() / window.len() as f64;
        state.acc_offset = offset;
    }
    let mut lowpass = match cfg.filters.cutoff_hz {
        Some(fc) => LowPassState::new(fc)?,
        None => LowPassState::passthrough(),
    };
    let fixed;
    let src: &dyn MagneticPositionSource = match (source, cfg.filters.r_mag_pos) {
        (Some(s), Some(sigma)) => {
            fixed = FixedCovariance { inner: s, sigma };
            &fixed
        }
        (Some(s), None) => s,
        (None, _) => &NoMagnetic,
    };
    let to_wcs = |p: &PoseState| anchor.north_pose_to_wcs(p, &Vec3::zeros());
    let mut poses = vec![to_wcs(&pose0)];
    for pair in samples[a..].windows(2) {
        let dt = pair[1].t - pair[0].t;
        let mut sample = pair[1].clone();
        sample.mag = lowpass.step(&sample.mag, dt).map_err(|e| e.at_time(sample.t))?;
        state = locomotion_step(&state, src, &sample, dt)?;
        poses.push(to_wcs(&state.pose));
    }
    Ok(poses)
}

/// Magnetic source with a fixed isotropic fix covariance.
struct FixedCovariance<'a> {
    inner: &'a dyn MagneticPositionSource,
    sigma: f64,
}

impl MagneticPositionSource for FixedCovariance<'_> {
    fn locate(&self, b: &Vec3, guess: &Vec3) -> Result<Vec3> {
        self.inner.locate(b, guess)
    }

    fn covariance(&self, _p: &Vec3, _s: f64) -> Result<crate::geometry::Mat3> {
        Ok(crate::geometry::Mat3::identity() * self.sigma * self.sigma)
    }
}

/// Placeholder source for inertial-only tracking; never consulted.
struct NoMagnetic;

impl MagneticPositionSource for NoMagnetic {
    fn locate(&self, _b: &Vec3, _guess: &Vec3) -> Result<Vec3> {
        Err(Error::contract("no magnetic position source"))
    }

    fn covariance(&self, _p: &Vec3, _s: f64) -> Result<crate::geometry::Mat3> {
        Err(Error::contract("no magnetic position source"))
    }
}

/// Ground truth re-expressed in the WCS of `anchor`.
pub struct TruthInWcs {
    origin_attitude: Rotation,
    origin_position: Vec3,
    records: BTreeMap<String, Vec<TruthRecord>>,
}

impl TruthInWcs {
    pub fn new(records: Vec<TruthRecord>, origin_sensor: &str, t0: f64) -> Result<Self> {
        let mut by_sensor: BTreeMap<String, Vec<TruthRecord>> = BTreeMap::new();
        for r in records {
            by_sensor.entry(r.sensor.clone()).or_default().push(r);
        }
        let origin = by_sensor
            .get(origin_sensor)
            .and_then(|v| nearest(v, t0))
            .ok_or_else(|| Error::UnmatchedSensors(vec![origin_sensor.to_string()]))?;
        Ok(TruthInWcs {
            origin_attitude: origin.attitude().to_rotation()?,
            origin_position: origin.position(),
            records: by_sensor,
        })
    }

    /// True WCS attitude and position of `sensor` at the sample nearest `t`.
    pub fn pose(&self, sensor: &str, t: f64) -> Option<(Rotation, Vec3)> {
        let r = nearest(self.records.get(sensor)?, t)?;
        let a1t = self.origin_attitude.transpose();
        let att = a1t * r.attitude().to_rotation().ok()?;
        Some((att, a1t.apply(&(r.position() - self.origin_position))))
    }
}

fn nearest(records: &[TruthRecord], t: f64) -> Option<&TruthRecord> {
    let i = records.partition_point(|r| r.t < t);
    [i.checked_sub(1), Some(i)]
        .into_iter()
        .flatten()
        .filter_map(|j| records.get(j))
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
}

/// Position RMSE of WCS tracks against ground truth [m].
pub fn track_rmse(tracks: &[(String, Vec<PoseState>)], truth: &TruthInWcs) -> BTreeMap<String, f64> {
    tracks
        .iter()
        .filter_map(|(id, poses)| {
            let (sum, n) = poses.iter().fold((0.0, 0usize), |(sum, n), p| match truth.pose(id, p.t) {
                Some((_, s)) => (sum + (p.s - s).norm_squared(), n + 1),
                None => (sum, n),
            });
            (n > 0).then(|| (id.clone(), (sum / n as f64).sqrt()))
        })
        .collect()
}

pub struct FuseArgs<'a> {
    pub trace: &'a Path,
    pub calibration: Option<&'a Path>,
    pub config: &'a RunConfig,
    pub out: &'a Path,
    /// Defaults to `<out>_anchor.json`.
    pub anchor: Option<&'a Path>,
    /// Defaults to `<out>_report.json`.
    pub report: Option<&'a Path>,
    /// Ground truth for accuracy figures in the report.
    pub truth: Option<&'a Path>,
}

pub fn cmd_fuse(args: &FuseArgs<'_>) -> Result<Outcome> {
    let samples = read_trace(args.trace)?;
    let cal = match args.calibration {
        Some(p) => read_calibration(p)?,
        None => MagCalibration::identity(),
    };
    let result = fuse_trace(samples.clone(), &cal, args.config, None)?;

    let mut records = Vec::new();
    for (id, poses) in &result.tracks {
        records.extend(poses.iter().map(|p| PoseRecord::new(id, p)));
    }
    records.sort_by(|a, b| a.t.total_cmp(&b.t));
    let anchor_path = args.anchor.map(Path::to_path_buf).unwrap_or_else(|| sibling(args.out, "_anchor.json"));
    let report_path = args.report.map(Path::to_path_buf).unwrap_or_else(|| sibling(args.out, "_report.json"));
    let track_csv = sibling(&report_path, "_tracks.csv");

    let mut inputs: Vec<&Path> = vec![args.trace];
    inputs.extend(args.calibration);
    inputs.extend(args.truth);
    let mut accuracy = Value::Null;
    if let Some(truth_path) = args.truth {
        let truth = TruthInWcs::new(read_truth(truth_path)?, &result.anchoring.anchor.origin_sensor, result.anchoring.anchor.t0)?;
        let rmse = track_rmse(&result.tracks, &truth);
        let mut acc = json!({ "mode": result.mode, "rmse_m": rmse });
        if result.mode == FusionMode::Fused {
            let inertial = fuse_trace(samples, &cal, args.config, Some(FusionMode::Inertial))?;
            let rmse_in = track_rmse(&inertial.tracks, &truth);
            let ratio: BTreeMap<&String, f64> = rmse
                .iter()
                .filter_map(|(id, r)| rmse_in.get(id).map(|ri| (id, if *ri > 0.0 { r / ri } else { f64::NAN })))
                .collect();
            acc = merge_into(acc, json!({ "rmse_inertial_m": rmse_in, "ratio_fused_over_inertial": ratio }));
        }
        accuracy = acc;
    }

    let mut csv = String::from("sensor,t,x,y,z,qw,qx,qy,qz\n");
    for r in &records {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.sensor, r.t, r.s[0], r.s[1], r.s[2], r.q[0], r.q[1], r.q[2], r.q[3]
        ));
    }
    let sensors: Vec<Value> = result
        .tracks
        .iter()
        .map(|(id, p)| {
            let last = p.last().expect("track has the initial pose");
            json!({ "id": id, "status": "ok", "poses": p.len(), "final_position": <[f64; 3]>::from(last.s) })
        })
        .chain(result.failures.iter().map(|(id, e)| json!({ "id": id, "status": "failed", "error": e })))
        .collect();
    let report = merge_into(
        report_header("fuse", Some(args.config), &inputs)?,
        json!({
            "origin_sensor": result.anchoring.anchor.origin_sensor,
            "heading_only": result.anchoring.anchor.heading_only,
            "mode": result.mode,
            "sensors": sensors,
            "accuracy": accuracy,
            "tracks_csv": track_csv.display().to_string(),
        }),
    );
    write_atomic(args.out, format_poses(&records)?.as_bytes())?;
    write_json(&anchor_path, &result.anchoring.to_file(&result.init_times))?;
    write_atomic(&track_csv, csv.as_bytes())?;
    write_json(&report_path, &report)?;
    Ok(Outcome {
        artifacts: vec![args.out.to_path_buf(), anchor_path, report_path, track_csv],
        partial_failure: !result.failures.is_empty(),
    })
}

// ------------------------------------------------------------------- align

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path)?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")) {
        parse_ply(&text, &stem)
    } else {
        parse_xyz(&text, &stem)
    }
}

fn pose_at<'a>(poses: &'a [PoseRecord], sensor: &str, t: f64) -> Option<&'a PoseRecord> {
    poses
        .iter()
        .filter(|p| p.sensor == sensor)
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
}

/// Clouds moved into the WCS by the given per-cloud poses.
pub fn place_clouds(clouds: &[PointCloud], poses: &[(Rotation, Vec3)]) -> Vec<PointCloud> {
    clouds.iter().zip(poses).map(|(c, (r, t))| transform_cloud(c, r, t)).collect()
}

/// Merge RMSE of every cloud against the first one.
pub fn pairwise_rmse(placed: &[PointCloud]) -> Result<Vec<(String, String, f64, Vec<f64>)>> {
    let Some(first) = placed.first() else {
        return Ok(Vec::new());
    };
    placed[1..]
        .iter()
        .map(|c| {
            let e = merge_error(first, c)?;
            let d: Vec<f64> = e.a_to_b.iter().chain(&e.b_to_a).copied().collect();
            Ok((first.sensor_id.clone(), c.sensor_id.clone(), e.rmse, d))
        })
        .collect()
}

pub struct AlignArgs<'a> {
    pub poses: &'a Path,
    pub clouds: &'a [PathBuf],
    pub out: &'a Path,
    /// Defaults to `<out>_report.json`.
    pub report: Option<&'a Path>,
    /// Ground truth, to report the merge error under true poses as well.
    pub truth: Option<&'a Path>,
    /// Anchor file naming the origin sensor; otherwise the first sensor of
    /// the pose stream is taken as origin.
    pub anchor: Option<&'a Path>,
    pub config: Option<&'a RunConfig>,
}

pub fn cmd_align(args: &AlignArgs<'_>) -> Result<Outcome> {
    if args.clouds.is_empty() {
        return Err(Error::contract("at least one cloud is required"));
    }
    let poses = read_poses(args.poses)?;
    let clouds = args.clouds.iter().map(|p| read_cloud(p)).collect::<Result<Vec<_>>>()?;
    let unmatched: Vec<String> = clouds
        .iter()
        .filter(|c| !poses.iter().any(|p| p.sensor == c.sensor_id))
        .map(|c| c.sensor_id.clone())
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::UnmatchedSensors(unmatched));
    }
    let estimated: Vec<(Rotation, Vec3)> = clouds
        .iter()
        .map(|c| {
            let p = pose_at(&poses, &c.sensor_id, c.t).expect("matched above");
            Ok((p.attitude().normalized().to_rotation()?, p.position()))
        })
        .collect::<Result<_>>()?;
    let placed = place_clouds(&clouds, &estimated);
    let merged = merge_clouds(&placed, "merged");
    let pairs = pairwise_rmse(&placed)?;

    let (origin, t0) = match args.anchor {
        Some(a) => {
            let f: crate::align::AnchorFile = serde_json::from_str(&std::fs::read_to_string(a)?)?;
            (f.origin_sensor, f.t0)
        }
        None => {
            let first = poses.first().ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
            let t0 = poses.iter().filter(|p| p.sensor == first.sensor).map(|p| p.t).fold(f64::INFINITY, f64::min);
            (first.sensor.clone(), t0)
        }
    };
    let mut truth_pairs = Value::Null;
    if let Some(tp) = args.truth {
        let truth = TruthInWcs::new(read_truth(tp)?, &origin, t0)?;
        let true_poses: Vec<(Rotation, Vec3)> = clouds
            .iter()
            .map(|c| {
                truth
                    .pose(&c.sensor_id, c.t)
                    .ok_or_else(|| Error::UnmatchedSensors(vec![c.sensor_id.clone()]))
            })
            .collect::<Result<_>>()?;
        let tp = pairwise_rmse(&place_clouds(&clouds, &true_poses))?;
        truth_pairs = tp.iter().map(|(a, b, r, _)| json!({ "a": a, "b": b, "rmse_m": r })).collect();
    }

    let report_path = args.report.map(Path::to_path_buf).unwrap_or_else(|| sibling(args.out, "_report.json"));
    let hist_path = sibling(&report_path, "_hist.csv");
    let all: Vec<f64> = pairs.iter().flat_map(|(_, _, _, d)| d.iter().copied()).collect();
    let hist = Histogram::from_values(&all, 20);

    let mut inputs: Vec<&Path> = vec![args.poses];
    inputs.extend(args.clouds.iter().map(PathBuf::as_path));
    inputs.extend(args.truth);
    inputs.extend(args.anchor);
    let report = merge_into(
        report_header("align", args.config, &inputs)?,
        json!({
            "origin_sensor": origin,
            "clouds": clouds.iter().map(|c| json!({ "sensor": c.sensor_id, "t": c.t, "points": c.len() })).collect::<Vec<_>>(),
            "pairs": pairs.iter().map(|(a, b, r, _)| json!({ "a": a, "b": b, "rmse_m": r })).collect::<Vec<_>>(),
            "pairs_truth_poses": truth_pairs,
            "merged_points": merged.len(),
            "histogram_csv": hist_path.display().to_string(),
        }),
    );
    let merged_text = if args.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")) {
        to_ply(&merged)
    } else {
        to_xyz(&merged)
    };
    write_atomic(args.out, merged_text.as_bytes())?;
    write_atomic(&hist_path, hist.to_csv().as_bytes())?;
    write_json(&report_path, &report)?;
    Ok(Outcome {
        artifacts: vec![args.out.to_path_buf(), report_path, hist_path],
        partial_failure: false,
    })
}

// ------------------------------------------------------------------ report

fn summarize(report: &Value) -> Value {
    let pick = |ptr: &str| report.pointer(ptr).cloned().unwrap_or(Value::Null);
    match report.get("command").and_then(Value::as_str) {
        Some("calibrate") => json!({
            "epsilon_pct": pick("/stability/epsilon"),
            "fit_residual_ut": pick("/calibration/fit_residual"),
            "coverage": pick("/coverage/fraction"),
        }),
        Some("fuse") => json!({
            "mode": pick("/mode"),
            "heading_only": pick("/heading_only"),
            "rmse_m": pick("/accuracy/rmse_m"),
            "ratio_fused_over_inertial": pick("/accuracy/ratio_fused_over_inertial"),
        }),
        Some("align") => json!({
            "pairs": pick("/pairs"),
            "pairs_truth_poses": pick("/pairs_truth_poses"),
        }),
        _ => Value::Null,
    }
}

/// Collect the key figures of several command reports into one summary.
pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<Outcome> {
    let mut entries = Vec::new();
    for p in inputs {
        let v: Value = serde_json::from_str(&std::fs::read_to_string(p)?).map_err(|e| Error::Schema {
            path: p.display().to_string(),
            msg: e.to_string(),
        })?;
        if v.get("tool").and_then(Value::as_str) != Some(TOOL) {
            return Err(Error::Schema {
                path: p.display().to_string(),
                msg: format!("not a {TOOL} report"),
            });
        }
        entries.push(json!({
            "path": p.display().to_string(),
            "sha256": sha256_file(p)?,
            "command": v["command"],
            "version": v["version"],
            "config_hash": v["config_hash"],
            "summary": summarize(&v),
        }));
    }
    write_json(out, &json!({ "tool": TOOL, "version": VERSION, "reports": entries }))?;
    Ok(Outcome {
        artifacts: vec![out.to_path_buf()],
        partial_failure: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still(t: f64, acc: Vec3, gyro: Vec3) -> ImuSample {
        ImuSample {
            t,
            acc,
            gyro,
            mag: Vec3::new(20.0, 0.0, -40.0),
            sensor_id: "a".into(),
        }
    }

    #[test]
    fn static_window_skips_motion() {
        let mut s: Vec<ImuSample> = (0..100)
            .map(|k| still(k as f64 * 0.05, Vec3::new(0.0, 0.0, 9.81), Vec3::zeros()))
            .collect();
        s[10].gyro = Vec3::new(0.2, 0.0, 0.0);
        let (a, b) = detect_static_window(&s, &InitConfig::default(), 9.81).unwrap();
        assert_eq!(a, 11);
        assert!((s[b].t - s[a].t - 2.0).abs() < 1e-9);
        s.iter_mut().for_each(|x| x.acc.z = 12.0);
        assert!(detect_static_window(&s, &InitConfig::default(), 9.81).is_none());
    }

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("out/poses.jsonl"), "_report.json"), PathBuf::from("out/poses_report.json"));
    }

    #[test]
    fn nearest_truth_record() {
        let rec = |t: f64| TruthRecord {
            t,
            sensor: "a".into(),
            position: [t, 0.0, 0.0],
            velocity: [0.0; 3],
            acceleration: [0.0; 3],
            q: [1.0, 0.0, 0.0, 0.0],
            omega: [0.0; 3],
            field: [0.0; 3],
            gradient: [[0.0; 3]; 3],
        };
        let v = vec![rec(0.0), rec(1.0), rec(2.0)];
        assert_eq!(nearest(&v, 1.4).unwrap().t, 1.0);
        assert_eq!(nearest(&v, 1.6).unwrap().t, 2.0);
        assert_eq!(nearest(&v, 9.0).unwrap().t, 2.0);
    }
}
