// Magnetic position fixes fused with accelerometer prediction on a noisy
// stationary rig, against plain double integration.

use geomag_align::align::FusionMode;
use geomag_align::config::RunConfig;
use geomag_align::io::TruthRecord;
use geomag_align::magcal::MagCalibration;
use geomag_align::pipeline::{fuse_trace, simulate, track_rmse, TruthInWcs};
use geomag_align::Result;

const RIG: &str = r#"
[noise]
acc_sigma = 0.05
mag_sigma = 0.5
[field]
type = "anomalies"
dipoles = [{ location = [0.5, 0.0, -3.0], moment = [60.0, 0.0, 300.0] }]
[[sensors]]
id = "rig"
trajectory = { type = "stationary", duration = 10.0 }
"#;

pub fn run() -> Result<f64> {
    let cfg = RunConfig::parse(RIG)?;
    let cal = MagCalibration::identity();
    let (mut fused, mut raw) = (0.0, 0.0);
    let seeds = 10;
    for seed in 0..seeds {
        let (samples, truth) = simulate(&cfg, seed)?;
        let truth = TruthInWcs::new(truth.iter().map(TruthRecord::from).collect(), "rig", 0.0)?;
        let f = fuse_trace(samples.clone(), &cal, &cfg, Some(FusionMode::Fused))?;
        let r = fuse_trace(samples, &cal, &cfg, Some(FusionMode::Inertial))?;
        fused += track_rmse(&f.tracks, &truth)["rig"] / seeds as f64;
        raw += track_rmse(&r.tracks, &truth)["rig"] / seeds as f64;
    }
    println!("mean position RMSE over {seeds} seeds: fused {fused:.4} m, double integration {raw:.4} m");
    println!("ratio {:.3}", fused / raw);
    Ok(fused / raw)
}

fn main() -> Result<()> {
    run().map(|_| ())
}
