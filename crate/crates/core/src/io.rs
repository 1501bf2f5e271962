//! File formats: trace, ground-truth and pose JSON Lines, plus atomic writes
//! and content hashes for reports.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Quaternion, Vec3};
use crate::sim::TruthSample;
use crate::strapdown::{ImuSample, PoseState};

/// Write `bytes` to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::contract(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// One line of a trace file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub sensor: String,
    pub acc: [f64; 3],
    pub gyro: [f64; 3],
    pub mag: [f64; 3],
}

impl From<&ImuSample> for TraceRecord {
    fn from(s: &ImuSample) -> Self {
        TraceRecord {
            t: s.t,
            sensor: s.sensor_id.clone(),
            acc: s.acc.into(),
            gyro: s.gyro.into(),
            mag: s.mag.into(),
        }
    }
}

impl From<TraceRecord> for ImuSample {
    fn from(r: TraceRecord) -> Self {
        ImuSample {
            t: r.t,
            acc: r.acc.into(),
            gyro: r.gyro.into(),
            mag: r.mag.into(),
            sensor_id: r.sensor,
        }
    }
}

fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item)?);
        out.push('\n');
    }
    Ok(out)
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<(usize, T)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map(|r| (i + 1, r)).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn format_trace(samples: &[ImuSample]) -> Result<String> {
    to_jsonl(samples.iter().map(TraceRecord::from))
}

/// Parse a trace. Unknown keys are ignored; timestamps must be finite and
/// non-decreasing per sensor.
pub fn parse_trace(text: &str) -> Result<Vec<ImuSample>> {
    let records: Vec<(usize, TraceRecord)> = parse_jsonl(text)?;
    let mut last: Vec<(String, f64)> = Vec::new();
    let mut out = Vec::with_capacity(records.len());
    for (line, r) in records {
        let finite = r.t.is_finite() && r.acc.iter().chain(&r.gyro).chain(&r.mag).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Parse {
                line,
                msg: "non-finite value".into(),
            });
        }
        match last.iter_mut().find(|(id, _)| *id == r.sensor) {
            Some((_, t)) if r.t < *t => {
                return Err(Error::Parse {
                    line,
                    msg: format!("time {} precedes {} for sensor `{}`", r.t, t, r.sensor),
                })
            }
            Some((_, t)) => *t = r.t,
            None => last.push((r.sensor.clone(), r.t)),
        }
        out.push(r.into());
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> Result<Vec<ImuSample>> {
    parse_trace(&fs::read_to_string(path)?)
}

/// Split samples by sensor, keeping first-appearance order.
pub fn group_by_sensor(samples: Vec<ImuSample>) -> Vec<(String, Vec<ImuSample>)> {
    let mut groups: Vec<(String, Vec<ImuSample>)> = Vec::new();
    for s in samples {
        match groups.iter_mut().find(|(id, _)| *id == s.sensor_id) {
            Some((_, g)) => g.push(s),
            None => groups.push((s.sensor_id.clone(), vec![s])),
        }
    }
    groups
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub t: f64,
    pub sensor: String,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub acceleration: [f64; 3],
    /// Body → world, scalar first.
    pub q: [f64; 4],
    pub omega: [f64; 3],
    pub field: [f64; 3],
    pub gradient: [[f64; 3]; 3],
}

impl From<&TruthSample> for TruthRecord {
    fn from(s: &TruthSample) -> Self {
        let g = &s.gradient;
        TruthRecord {
            t: s.t,
            sensor: s.sensor_id.clone(),
            position: s.position.into(),
            velocity: s.velocity.into(),
            acceleration: s.acceleration.into(),
            q: s.attitude.to_array(),
            omega: s.angular_rate.into(),
            field: s.field.into(),
            gradient: [0, 1, 2].map(|i| [g[(i, 0)], g[(i, 1)], g[(i, 2)]]),
        }
    }
}

impl TruthRecord {
    pub fn attitude(&self) -> Quaternion {
        Quaternion::from_array(self.q)
    }

    pub fn position(&self) -> Vec3 {
        Vec3::from(self.position)
    }
}

pub fn format_truth(truth: &[TruthSample]) -> Result<String> {
    to_jsonl(truth.iter().map(TruthRecord::from))
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRecord>> {
    Ok(parse_jsonl(&fs::read_to_string(path)?)?.into_iter().map(|(_, r)| r).collect())
}

/// One line of a pose stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub t: f64,
    pub sensor: String,
    /// Body → WCS, scalar first.
    pub q: [f64; 4],
    pub v: [f64; 3],
    pub s: [f64; 3],
}

impl PoseRecord {
    pub fn new(sensor: &str, p: &PoseState) -> Self {
        PoseRecord {
            t: p.t,
            sensor: sensor.to_string(),
            q: p.q.to_array(),
            v: p.v.into(),
            s: p.s.into(),
        }
    }

    pub fn attitude(&self) -> Quaternion {
        Quaternion::from_array(self.q)
    }

    pub fn position(&self) -> Vec3 {
        Vec3::from(self.s)
    }
}

pub fn format_poses(poses: &[PoseRecord]) -> Result<String> {
    to_jsonl(poses)
}

pub fn parse_poses(text: &str) -> Result<Vec<PoseRecord>> {
    Ok(parse_jsonl(text)?.into_iter().map(|(_, r)| r).collect())
}

pub fn read_poses(path: &Path) -> Result<Vec<PoseRecord>> {
    parse_poses(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_round_trip() {
        let s = ImuSample {
            t: 0.25,
            acc: Vec3::new(0.1, -0.2, 9.81),
            gyro: Vec3::new(1e-3, 0.0, -2e-3),
            mag: Vec3::new(20.0, 0.5, -40.0),
            sensor_id: "imu-1".into(),
        };
        let text = format_trace(std::slice::from_ref(&s)).unwrap();
        assert_eq!(parse_trace(&text).unwrap(), vec![s]);
    }

    #[test]
    fn unknown_keys_ignored_missing_keys_reported() {
        let ok = r#"{"t":0,"sensor":"a","acc":[0,0,9.81],"gyro":[0,0,0],"mag":[1,0,0],"temp":21.5}"#;
        assert_eq!(parse_trace(ok).unwrap().len(), 1);
        let text = format!("{ok}\n\n{}", r#"{"t":1,"sensor":"a","acc":[0,0,9.81],"gyro":[0,0,0]}"#);
        let err = parse_trace(&text).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, ref msg } if msg.contains("mag")), "{err}");
    }

    #[test]
    fn time_must_not_go_backwards_per_sensor() {
        let line = |t: f64, s: &str| {
            format!(r#"{{"t":{t},"sensor":"{s}","acc":[0,0,9.81],"gyro":[0,0,0],"mag":[1,0,0]}}"#)
        };
        let interleaved = [line(0.0, "a"), line(0.5, "b"), line(0.1, "a"), line(0.1, "b")].join("\n");
        let err = parse_trace(&interleaved).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }));
        let fine = [line(0.0, "a"), line(0.5, "b"), line(0.1, "a"), line(0.6, "b")].join("\n");
        let groups = group_by_sensor(parse_trace(&fine).unwrap());
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].0, "a");
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = std::env::temp_dir().join(format!("geomag-io-{}", std::process::id()));
        let path = dir.join("out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        assert_eq!(fs::read_dir(&dir).unwrap().count(), 1);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
