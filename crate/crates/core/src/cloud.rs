//! Point-cloud merge scoring: apply per-sensor world poses to clouds and
//! measure how well the results coincide.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Rotation, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub sensor_id: String,
    pub t: f64,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, sensor_id: impl Into<String>, t: f64) -> Self {
        PointCloud {
            points,
            sensor_id: sensor_id.into(),
            t,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn check_scorable(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::contract(format!("cloud `{}` is empty", self.sensor_id)));
        }
        if !self.points.iter().all(|p| p.iter().all(|v| v.is_finite())) {
            return Err(Error::contract(format!("cloud `{}` has non-finite points", self.sensor_id)));
        }
        Ok(())
    }
}

/// `p ↦ R·p + T` for every point.
pub fn transform_cloud(cloud: &PointCloud, rotation: &Rotation, translation: &Vec3) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| rotation.apply(p) + translation).collect(),
        sensor_id: cloud.sensor_id.clone(),
        t: cloud.t,
    }
}

/// Concatenate clouds that are already in a common frame.
pub fn merge_clouds(clouds: &[PointCloud], sensor_id: &str) -> PointCloud {
    PointCloud {
        points: clouds.iter().flat_map(|c| c.points.iter().copied()).collect(),
        sensor_id: sensor_id.to_string(),
        t: clouds.iter().map(|c| c.t).fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn from_values(values: &[f64], bins: usize) -> Self {
        let max = values.iter().copied().fold(0.0, f64::max);
        let bins = bins.max(1);
        let bin_width = if max > 0.0 { max / bins as f64 } else { 1.0 };
        let mut counts = vec![0; bins];
        for v in values {
            let i = ((v / bin_width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Histogram { bin_width, counts }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start_m,bin_end_m,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let lo = i as f64 * self.bin_width;
            let _ = writeln!(out, "{lo},{},{c}", lo + self.bin_width);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeError {
    /// Symmetric nearest-neighbour RMSE [m].
    pub rmse: f64,
    /// Distance of each point of `a` to its nearest neighbour in `b`.
    pub a_to_b: Vec<f64>,
    pub b_to_a: Vec<f64>,
}

impl MergeError {
    pub fn histogram(&self, bins: usize) -> Histogram {
        let all: Vec<f64> = self.a_to_b.iter().chain(&self.b_to_a).copied().collect();
        Histogram::from_values(&all, bins)
    }
}

fn nearest_distances(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    from.iter()
        .map(|p| to.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt())
        .collect()
}

/// Brute-force symmetric nearest-neighbour error between two clouds in the
/// same frame.
pub fn merge_error(a: &PointCloud, b: &PointCloud) -> Result<MergeError> {
    a.check_scorable()?;
    b.check_scorable()?;
    let a_to_b = nearest_distances(&a.points, &b.points);
    let b_to_a = nearest_distances(&b.points, &a.points);
    let n = (a_to_b.len() + b_to_a.len()) as f64;
    let sum_sq: f64 = a_to_b.iter().chain(&b_to_a).map(|d| d * d).sum();
    Ok(MergeError {
        rmse: (sum_sq / n).sqrt(),
        a_to_b,
        b_to_a,
    })
}

/// Landmarks of the bundled benchmark: a 1 m lattice filling a small room
/// (8 × 7 × 3 points), sparse relative to any pose error of interest.
pub fn benchmark_landmarks() -> Vec<Vec3> {
    let mut out = Vec::new();
    for i in 0..8 {
        for j in 0..7 {
            for k in 0..3 {
                out.push(Vec3::new(i as f64 - 2.0, j as f64 - 3.0, k as f64));
            }
        }
    }
    out
}

/// What a sensor at world pose `(R, T)` sees of `landmarks`, with isotropic
/// Gaussian noise whose 3D RMS magnitude is `noise_rms`.
pub fn observe_landmarks(
    landmarks: &[Vec3],
    rotation: &Rotation,
    translation: &Vec3,
    noise_rms: f64,
    seed: u64,
    sensor_id: &str,
    t: f64,
) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_axis = noise_rms / 3f64.sqrt();
    let rt = rotation.transpose();
    let points = landmarks
        .iter()
        .map(|l| {
            let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
            let n = Vec3::new(draw(), draw(), draw()) * per_axis;
            rt.apply(&(l - translation)) + n
        })
        .collect();
    PointCloud::new(points, sensor_id, t)
}

/// ASCII XYZ with a `# sensor=<id> t=<t>` header comment.
pub fn to_xyz(cloud: &PointCloud) -> String {
    let mut out = format!("# sensor={} t={}\n", cloud.sensor_id, cloud.t);
    for p in &cloud.points {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

fn parse_header(line: &str, id: &mut String, t: &mut f64) {
    for tok in line.split_whitespace() {
        if let Some(v) = tok.strip_prefix("sensor=") {
            *id = v.to_string();
        } else if let Some(v) = tok.strip_prefix("t=") {
            if let Ok(x) = v.parse() {
                *t = x;
            }
        }
    }
}

fn parse_point(line: &str, lineno: usize) -> Result<Vec3> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .take(3)
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
    if vals.len() != 3 {
        return Err(Error::Parse {
            line: lineno,
            msg: "expected three coordinates".into(),
        });
    }
    Ok(Vec3::new(vals[0], vals[1], vals[2]))
}

/// Parse ASCII XYZ; `default_id` is used when the header names no sensor.
pub fn parse_xyz(text: &str, default_id: &str) -> Result<PointCloud> {
    let mut id = default_id.to_string();
    let mut t = 0.0;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            parse_header(c, &mut id, &mut t);
            continue;
        }
        points.push(parse_point(line, i + 1)?);
    }
    Ok(PointCloud::new(points, id, t))
}

/// ASCII PLY, vertex elements only.
pub fn to_ply(cloud: &PointCloud) -> String {
    let mut out = String::from("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "comment sensor={} t={}", cloud.sensor_id, cloud.t);
    let _ = writeln!(out, "element vertex {}", cloud.points.len());
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in &cloud.points {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

pub fn parse_ply(text: &str, default_id: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing `ply` magic".into(),
            })
        }
    }
    let mut id = default_id.to_string();
    let mut t = 0.0;
    let mut count = None;
    for (i, line) in lines.by_ref() {
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        if let Some(c) = line.strip_prefix("comment") {
            parse_header(c, &mut id, &mut t);
        } else if let Some(rest) = line.strip_prefix("element vertex") {
            count = Some(rest.trim().parse::<usize>().map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?);
        } else if line.starts_with("format") && !line.contains("ascii") {
            return Err(Error::Parse {
                line: i + 1,
                msg: "only ASCII PLY is supported".into(),
            });
        }
    }
    let count = count.ok_or(Error::Parse {
        line: 0,
        msg: "no vertex element in header".into(),
    })?;
    let mut points = Vec::with_capacity(count);
    for (i, line) in lines {
        if points.len() == count {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        points.push(parse_point(line, i + 1)?);
    }
    if points.len() != count {
        return Err(Error::Parse {
            line: 0,
            msg: format!("header declares {count} vertices, found {}", points.len()),
        });
    }
    Ok(PointCloud::new(points, id, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PointCloud {
        PointCloud::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.5, -2.0, 0.25), Vec3::new(-3.0, 4.0, 1.0)],
            "s1",
            2.5,
        )
    }

    #[test]
    fn identity_and_translation() {
        let c = sample();
        assert_eq!(transform_cloud(&c, &Rotation::identity(), &Vec3::zeros()), c);
        let one = PointCloud::new(vec![Vec3::zeros()], "a", 0.0);
        let moved = transform_cloud(&one, &Rotation::identity(), &Vec3::x());
        assert_eq!(moved.points[0], Vec3::x());
    }

    #[test]
    fn transform_then_inverse() {
        let c = sample();
        let r = Rotation::rot_z(0.4) * Rotation::rot_x(-1.1);
        let t = Vec3::new(0.3, -7.0, 2.0);
        let there = transform_cloud(&c, &r, &t);
        let back = transform_cloud(&there, &r.transpose(), &(-r.transpose().apply(&t)));
        for (a, b) in back.points.iter().zip(&c.points) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn merge_error_of_identical_and_shifted() {
        let lm = benchmark_landmarks();
        let a = PointCloud::new(lm.clone(), "a", 0.0);
        assert_eq!(merge_error(&a, &a).unwrap().rmse, 0.0);
        let b = transform_cloud(&a, &Rotation::identity(), &Vec3::new(0.1, 0.0, 0.0));
        let e = merge_error(&a, &b).unwrap();
        assert!((e.rmse - 0.1).abs() < 1e-9);
        assert_eq!(e.histogram(10).counts.iter().sum::<usize>(), 2 * lm.len());
    }

    #[test]
    fn empty_cloud_is_rejected() {
        let empty = PointCloud::new(vec![], "e", 0.0);
        assert!(merge_error(&empty, &sample()).is_err());
    }

    #[test]
    fn xyz_and_ply_round_trip() {
        let c = sample();
        assert_eq!(parse_xyz(&to_xyz(&c), "x").unwrap(), c);
        assert_eq!(parse_ply(&to_ply(&c), "x").unwrap(), c);
        let bare = parse_xyz("1 2 3\n4 5 6\n", "fallback").unwrap();
        assert_eq!(bare.sensor_id, "fallback");
        assert!(matches!(parse_xyz("1 2\n", "x"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn observed_cloud_maps_back_to_landmarks() {
        let lm = benchmark_landmarks();
        let r = Rotation::rot_z(0.7);
        let t = Vec3::new(1.0, 2.0, 0.5);
        let c = observe_landmarks(&lm, &r, &t, 0.0, 3, "s", 0.0);
        let world = transform_cloud(&c, &r, &t);
        for (a, b) in world.points.iter().zip(&lm) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
