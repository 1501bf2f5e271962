// Simulate the bundled two-rig scene and check the generated field against
// its kinematics.

use std::path::PathBuf;

use geomag_align::config::RunConfig;
use geomag_align::io::{format_trace, write_atomic};
use geomag_align::pipeline::simulate;
use geomag_align::sim::field_kinematics_residual;
use geomag_align::Result;

pub fn run() -> Result<usize> {
    let cfg = RunConfig::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/scene.toml"))?;
    let (samples, truth) = simulate(&cfg, cfg.seed)?;
    for s in &cfg.sensors {
        let track: Vec<_> = truth.iter().filter(|t| t.sensor_id == s.id).cloned().collect();
        let b = track[0].field.norm();
        println!(
            "{}: {} samples, |B| {b:.2} uT, field kinematics residual {:.2e} uT/s",
            s.id,
            track.len(),
            field_kinematics_residual(&track)
        );
    }
    let dir = std::env::temp_dir().join("geomag-align-example");
    let out = dir.join("scene_trace.jsonl");
    write_atomic(&out, format_trace(&samples)?.as_bytes())?;
    println!("wrote {}", out.display());
    Ok(samples.len())
}

fn main() -> Result<()> {
    run().map(|_| ())
}
