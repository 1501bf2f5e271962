//! Run configuration shared by every command, read from TOML or JSON.
//!
//! Every section is optional and falls back to the defaults documented on
//! its fields. Angles are given in degrees (`*_deg`) and converted on use.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::benchmark_landmarks;
use crate::error::{Error, Result};
use crate::geometry::{EulerAngles, Mat3, Vec3};
use crate::magcal::MagCalibration;
use crate::sim::{Dipole, FieldSource, MagneticFieldModel, SpeedProfile, TrajectorySpec, Waypoint, MIN_SAMPLE_RATE_HZ};
use crate::strapdown::{EnvironmentConstants, SensorNoiseModel, EARTH_RATE, STANDARD_GRAVITY};

type V3 = [f64; 3];

fn v(a: &V3) -> Vec3 {
    Vec3::from(*a)
}

fn deg(a: &V3) -> EulerAngles {
    EulerAngles::new(a[0].to_radians(), a[1].to_radians(), a[2].to_radians())
}

fn default_rate() -> f64 {
    100.0
}
fn default_true() -> bool {
    true
}
fn default_gravity() -> f64 {
    STANDARD_GRAVITY
}
fn default_b0() -> V3 {
    [20.0, 0.0, -40.0]
}
fn identity3() -> [V3; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// IMU sample rate [Hz], at least 10.
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Hard/soft iron injected by the simulator. Absent means none.
    #[serde(default)]
    pub distortion: Option<DistortionConfig>,
    #[serde(default)]
    pub filters: FilterConfig,
    #[serde(default)]
    pub initialization: InitConfig,
    #[serde(default)]
    pub field: FieldConfig,
    /// Model-frame position of the first sensor at initialization. Defaults
    /// to the start of the first sensor's trajectory.
    #[serde(default)]
    pub survey_origin: Option<V3>,
    #[serde(default)]
    pub sensors: Vec<SensorConfig>,
    /// Point-cloud capture for the merge benchmark. Absent means no clouds.
    #[serde(default)]
    pub scene: Option<SceneConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            sample_rate_hz: default_rate(),
            environment: EnvironmentConfig::default(),
            noise: NoiseConfig::default(),
            distortion: None,
            filters: FilterConfig::default(),
            initialization: InitConfig::default(),
            field: FieldConfig::default(),
            survey_origin: None,
            sensors: Vec::new(),
            scene: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    #[serde(default)]
    pub latitude_deg: f64,
    /// Include the earth-rate (Coriolis) correction.
    #[serde(default = "default_true")]
    pub earth_rate: bool,
    /// Gravity magnitude [m/s²].
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    /// Local field magnitude [µT]. Fixes the overall scale of a magnetometer
    /// calibration, which a sweep alone cannot observe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_field_ut: Option<f64>,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig {
            latitude_deg: 0.0,
            earth_rate: true,
            gravity: STANDARD_GRAVITY,
            reference_field_ut: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub gyro_sigma: f64,
    #[serde(default)]
    pub gyro_bias: V3,
    #[serde(default)]
    pub acc_sigma: f64,
    #[serde(default)]
    pub acc_bias: V3,
    #[serde(default)]
    pub mag_sigma: f64,
}

/// Sensed field = `soft_iron · B + hard_iron`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionConfig {
    #[serde(default)]
    pub hard_iron: V3,
    /// Symmetric positive definite distortion matrix, row-major.
    #[serde(default = "identity3")]
    pub soft_iron: [V3; 3],
}

fn default_q_window() -> f64 {
    crate::filters::DEFAULT_OFFSET_WINDOW
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    /// Fuse magnetic position fixes with the inertial prediction. Off means
    /// pure strapdown.
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Low-pass cutoff applied to the magnetometer channel before use [Hz].
    #[serde(default)]
    pub cutoff_hz: Option<f64>,
    /// Acceleration noise driving the Kalman process model [m/s²].
    /// Defaults to the configured accelerometer noise.
    #[serde(default)]
    pub q_acc: Option<f64>,
    /// Magnetometer noise used to weight position fixes [µT]. Defaults to the
    /// configured magnetometer noise.
    #[serde(default)]
    pub r_mag: Option<f64>,
    /// Fixed standard deviation of magnetic position fixes [m]. When set it
    /// replaces the covariance propagated from `r_mag` through the gradient.
    #[serde(default)]
    pub r_mag_pos: Option<f64>,
    /// Subtract the mean world-frame acceleration of the initialization window.
    #[serde(default)]
    pub remove_offset: bool,
    #[serde(default = "default_q_window")]
    pub offset_window_s: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            enabled: true,
            cutoff_hz: None,
            q_acc: None,
            r_mag: None,
            r_mag_pos: None,
            remove_offset: false,
            offset_window_s: default_q_window(),
        }
    }
}

fn d_window() -> f64 {
    2.0
}
fn d_acc_tol() -> f64 {
    0.3
}
fn d_gyro() -> f64 {
    0.05
}

/// Static-window detection thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    #[serde(default = "d_window")]
    pub static_window_s: f64,
    /// Allowed deviation of |acc| from gravity [m/s²].
    #[serde(default = "d_acc_tol")]
    pub acc_tolerance: f64,
    /// Largest |gyro| counted as static [rad/s].
    #[serde(default = "d_gyro")]
    pub gyro_threshold: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            static_window_s: d_window(),
            acc_tolerance: d_acc_tol(),
            gyro_threshold: d_gyro(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipoleConfig {
    pub location: V3,
    /// Dipole moment [µT·m³].
    pub moment: V3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    Uniform {
        #[serde(default = "default_b0")]
        b0: V3,
    },
    Dipole {
        location: V3,
        moment: V3,
    },
    Anomalies {
        #[serde(default = "default_b0")]
        base: V3,
        dipoles: Vec<DipoleConfig>,
    },
    Linear {
        #[serde(default = "default_b0")]
        base: V3,
        gradient: [V3; 3],
        #[serde(default)]
        origin: V3,
    },
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig::Uniform { b0: default_b0() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub id: String,
    pub trajectory: TrajectoryConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointConfig {
    pub time: f64,
    pub position: V3,
    #[serde(default)]
    pub yaw_deg: f64,
}

fn d_sweep_yaw() -> f64 {
    36.0
}
fn d_sweep_pitch_amp() -> f64 {
    70.0
}
fn d_sweep_pitch_rate() -> f64 {
    21.0
}
fn d_sweep_roll_amp() -> f64 {
    60.0
}
fn d_sweep_roll_rate() -> f64 {
    30.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectoryConfig {
    Stationary {
        #[serde(default)]
        position: V3,
        #[serde(default)]
        attitude_deg: V3,
        duration: f64,
    },
    Line {
        #[serde(default)]
        start: V3,
        /// Cruise velocity [m/s]; its direction is the direction of travel.
        velocity: V3,
        duration: f64,
        #[serde(default)]
        attitude_deg: V3,
        #[serde(default)]
        hold: f64,
        #[serde(default)]
        ramp: f64,
    },
    Circle {
        #[serde(default)]
        center: V3,
        radius: f64,
        speed: f64,
        duration: f64,
        #[serde(default)]
        hold: f64,
        #[serde(default)]
        ramp: f64,
        /// Orientation of the circle plane as roll/pitch/yaw.
        #[serde(default)]
        plane_deg: V3,
        #[serde(default)]
        start_angle_deg: f64,
    },
    Stairs {
        #[serde(default)]
        start: V3,
        #[serde(default)]
        heading_deg: f64,
        step_length: f64,
        step_height: f64,
        /// Steps per second.
        cadence: f64,
        count: usize,
        #[serde(default)]
        sway_deg: f64,
        #[serde(default)]
        hold: f64,
        duration: f64,
    },
    Waypoints {
        points: Vec<WaypointConfig>,
    },
    Sweep {
        #[serde(default)]
        position: V3,
        duration: f64,
        #[serde(default = "d_sweep_yaw")]
        yaw_rate_deg_s: f64,
        #[serde(default = "d_sweep_pitch_amp")]
        pitch_amplitude_deg: f64,
        #[serde(default = "d_sweep_pitch_rate")]
        pitch_rate_deg_s: f64,
        #[serde(default = "d_sweep_roll_amp")]
        roll_amplitude_deg: f64,
        #[serde(default = "d_sweep_roll_rate")]
        roll_rate_deg_s: f64,
    },
}

fn d_point_noise() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// 3D RMS noise of each captured point [m].
    #[serde(default = "d_point_noise")]
    pub point_noise: f64,
    /// Capture time of every sensor's cloud [s].
    #[serde(default)]
    pub capture_time: f64,
    /// World-frame landmarks; defaults to the bundled 1 m lattice.
    #[serde(default)]
    pub landmarks: Option<Vec<V3>>,
}

fn schema(path: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        msg: msg.into(),
    }
}

fn finite_nonneg(path: &str, x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(schema(path, format!("must be finite and non-negative, got {x}")))
    }
}

fn positive(path: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(schema(path, format!("must be positive, got {x}")))
    }
}

impl RunConfig {
    /// Parse TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = if text.trim_start().starts_with('{') {
            let de = &mut serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de).map_err(|e| schema(e.path().to_string(), e.inner().to_string()))?
        } else {
            let de = toml::Deserializer::parse(text).map_err(|e| schema(".", e.to_string()))?;
            serde_path_to_error::deserialize(de).map_err(|e| schema(e.path().to_string(), e.inner().to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz >= MIN_SAMPLE_RATE_HZ) || !self.sample_rate_hz.is_finite() {
            return Err(schema(
                "sample_rate_hz",
                format!("must be at least {MIN_SAMPLE_RATE_HZ} Hz, got {}", self.sample_rate_hz),
            ));
        }
        positive("environment.gravity", self.environment.gravity)?;
        if let Some(b) = self.environment.reference_field_ut {
            positive("environment.reference_field_ut", b)?;
        }
        let n = &self.noise;
        finite_nonneg("noise.gyro_sigma", n.gyro_sigma)?;
        finite_nonneg("noise.acc_sigma", n.acc_sigma)?;
        finite_nonneg("noise.mag_sigma", n.mag_sigma)?;
        if let Some(d) = &self.distortion {
            self.distortion_calibration_of(d)?;
        }
        if let Some(c) = self.filters.cutoff_hz {
            positive("filters.cutoff_hz", c)?;
        }
        if let Some(q) = self.filters.q_acc {
            finite_nonneg("filters.q_acc", q)?;
        }
        if let Some(r) = self.filters.r_mag {
            finite_nonneg("filters.r_mag", r)?;
        }
        if let Some(r) = self.filters.r_mag_pos {
            positive("filters.r_mag_pos", r)?;
        }
        positive("filters.offset_window_s", self.filters.offset_window_s)?;
        positive("initialization.static_window_s", self.initialization.static_window_s)?;
        positive("initialization.acc_tolerance", self.initialization.acc_tolerance)?;
        positive("initialization.gyro_threshold", self.initialization.gyro_threshold)?;
        for (i, s) in self.sensors.iter().enumerate() {
            if s.id.is_empty() {
                return Err(schema(format!("sensors[{i}].id"), "must not be empty"));
            }
            if self.sensors[..i].iter().any(|o| o.id == s.id) {
                return Err(schema(format!("sensors[{i}].id"), format!("duplicate sensor id `{}`", s.id)));
            }
            s.trajectory
                .to_spec()
                .validate()
                .map_err(|e| schema(format!("sensors[{i}].trajectory"), e.to_string()))?;
        }
        if let Some(sc) = &self.scene {
            finite_nonneg("scene.point_noise", sc.point_noise)?;
        }
        Ok(())
    }

    pub fn noise_model(&self) -> SensorNoiseModel {
        let n = &self.noise;
        SensorNoiseModel {
            gyro_sigma: n.gyro_sigma,
            gyro_bias: v(&n.gyro_bias),
            acc_sigma: n.acc_sigma,
            acc_bias: v(&n.acc_bias),
            mag_sigma: n.mag_sigma,
        }
    }

    pub fn environment(&self) -> EnvironmentConstants {
        let e = &self.environment;
        let mut env = EnvironmentConstants::at_latitude(e.latitude_deg.to_radians());
        env.gravity = Vec3::new(0.0, 0.0, -e.gravity);
        if !e.earth_rate {
            env = env.without_earth_rate();
        }
        debug_assert!(!e.earth_rate || (env.earth_rate.norm() - EARTH_RATE).abs() < 1e-12);
        env
    }

    pub fn field_model(&self) -> MagneticFieldModel {
        let dip = |d: &DipoleConfig| Dipole {
            location: v(&d.location),
            moment: v(&d.moment),
        };
        let source = match &self.field {
            FieldConfig::Uniform { b0 } => FieldSource::Uniform(v(b0)),
            FieldConfig::Dipole { location, moment } => FieldSource::Dipole(Dipole {
                location: v(location),
                moment: v(moment),
            }),
            FieldConfig::Anomalies { base, dipoles } => FieldSource::UniformPlusAnomalies {
                base: v(base),
                anomalies: dipoles.iter().map(dip).collect(),
            },
            FieldConfig::Linear { base, gradient, origin } => FieldSource::LinearGradient {
                base: v(base),
                gradient: Mat3::from_fn(|i, j| gradient[i][j]),
                origin: v(origin),
            },
        };
        MagneticFieldModel::new(source)
    }

    fn distortion_calibration_of(&self, d: &DistortionConfig) -> Result<MagCalibration> {
        let m = Mat3::from_fn(|i, j| d.soft_iron[i][j]);
        if (m - m.transpose()).abs().max() > 1e-9 {
            return Err(schema("distortion.soft_iron", "must be symmetric"));
        }
        if m.symmetric_eigen().eigenvalues.min() <= 0.0 {
            return Err(schema("distortion.soft_iron", "must be positive definite"));
        }
        let c = m.try_inverse().ok_or_else(|| schema("distortion.soft_iron", "not invertible"))?;
        Ok(MagCalibration {
            soft_iron: 0.5 * (c + c.transpose()),
            hard_iron: v(&d.hard_iron),
            field_magnitude: 0.0,
            fit_residual: 0.0,
        })
    }

    /// The calibration that undoes the configured distortion.
    pub fn distortion_calibration(&self) -> Result<Option<MagCalibration>> {
        self.distortion.as_ref().map(|d| self.distortion_calibration_of(d)).transpose()
    }

    /// Model-frame position of the first sensor at initialization.
    pub fn survey_origin_or_default(&self) -> Vec3 {
        match (&self.survey_origin, self.sensors.first()) {
            (Some(p), _) => v(p),
            (None, Some(s)) => s.trajectory.to_spec().kinematics(0.0).position,
            (None, None) => Vec3::zeros(),
        }
    }

    pub fn landmarks(&self) -> Vec<Vec3> {
        match self.scene.as_ref().and_then(|s| s.landmarks.as_ref()) {
            Some(l) => l.iter().map(v).collect(),
            None => benchmark_landmarks(),
        }
    }
}

impl TrajectoryConfig {
    pub fn to_spec(&self) -> TrajectorySpec {
        match self {
            TrajectoryConfig::Stationary {
                position,
                attitude_deg,
                duration,
            } => TrajectorySpec::Stationary {
                position: v(position),
                attitude: deg(attitude_deg),
                duration: *duration,
            },
            TrajectoryConfig::Line {
                start,
                velocity,
                duration,
                attitude_deg,
                hold,
                ramp,
            } => {
                let vel = v(velocity);
                let speed = vel.norm();
                TrajectorySpec::Line {
                    start: v(start),
                    direction: if speed > 0.0 { vel / speed } else { Vec3::x() },
                    profile: SpeedProfile {
                        hold: *hold,
                        ramp: *ramp,
                        speed,
                    },
                    attitude: deg(attitude_deg),
                    duration: *duration,
                }
            }
            TrajectoryConfig::Circle {
                center,
                radius,
                speed,
                duration,
                hold,
                ramp,
                plane_deg,
                start_angle_deg,
            } => TrajectorySpec::Circle {
                center: v(center),
                radius: *radius,
                profile: SpeedProfile {
                    hold: *hold,
                    ramp: *ramp,
                    speed: *speed,
                },
                plane: deg(plane_deg).to_rotation(),
                start_angle: start_angle_deg.to_radians(),
                duration: *duration,
            },
            TrajectoryConfig::Stairs {
                start,
                heading_deg,
                step_length,
                step_height,
                cadence,
                count,
                sway_deg,
                hold,
                duration,
            } => TrajectorySpec::Stairs {
                start: v(start),
                heading: heading_deg.to_radians(),
                step_length: *step_length,
                step_height: *step_height,
                cadence: *cadence,
                count: *count,
                sway: sway_deg.to_radians(),
                hold: *hold,
                duration: *duration,
            },
            TrajectoryConfig::Waypoints { points } => TrajectorySpec::Waypoints(
                points
                    .iter()
                    .map(|w| Waypoint {
                        time: w.time,
                        position: v(&w.position),
                        yaw: w.yaw_deg.to_radians(),
                    })
                    .collect(),
            ),
            TrajectoryConfig::Sweep {
                position,
                duration,
                yaw_rate_deg_s,
                pitch_amplitude_deg,
                pitch_rate_deg_s,
                roll_amplitude_deg,
                roll_rate_deg_s,
            } => TrajectorySpec::Sweep {
                position: v(position),
                yaw_rate: yaw_rate_deg_s.to_radians(),
                pitch_amplitude: pitch_amplitude_deg.to_radians(),
                pitch_rate: pitch_rate_deg_s.to_radians(),
                roll_amplitude: roll_amplitude_deg.to_radians(),
                roll_rate: roll_rate_deg_s.to_radians(),
                duration: *duration,
            },
        }
    }
}
