// simulate → calibrate → fuse → align → report on the bundled configs, the
// same steps as the `geomag-align` binary.

use std::path::{Path, PathBuf};

use geomag_align::config::RunConfig;
use geomag_align::pipeline::{
    cmd_align, cmd_calibrate, cmd_fuse, cmd_report, cmd_simulate, AlignArgs, CalibrateArgs, FuseArgs, SimulateArgs,
};
use geomag_align::Result;

pub fn run(dir: &Path) -> Result<PathBuf> {
    let configs = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs");
    let sweep_cfg = RunConfig::load(&configs.join("calibration.toml"))?;
    let scene = RunConfig::load(&configs.join("scene.toml"))?;
    let p = |name: &str| dir.join(name);

    cmd_simulate(&SimulateArgs {
        config: &sweep_cfg,
        seed: None,
        out: &p("sweep.jsonl"),
        truth: None,
        clouds_dir: None,
    })?;
    cmd_calibrate(&CalibrateArgs {
        trace: &p("sweep.jsonl"),
        out: &p("cal.json"),
        report: None,
        sensor: None,
        config: Some(&sweep_cfg),
    })?;
    cmd_simulate(&SimulateArgs {
        config: &scene,
        seed: None,
        out: &p("trace.jsonl"),
        truth: None,
        clouds_dir: None,
    })?;
    let fused = cmd_fuse(&FuseArgs {
        trace: &p("trace.jsonl"),
        calibration: Some(&p("cal.json")),
        config: &scene,
        out: &p("poses.jsonl"),
        anchor: None,
        report: None,
        truth: Some(&p("trace_truth.jsonl")),
    })?;
    let clouds = [p("rig-a.xyz"), p("rig-b.xyz")];
    cmd_align(&AlignArgs {
        poses: &p("poses.jsonl"),
        clouds: &clouds,
        out: &p("merged.xyz"),
        report: None,
        truth: Some(&p("trace_truth.jsonl")),
        anchor: Some(&p("poses_anchor.json")),
        config: Some(&scene),
    })?;
    let reports = [p("cal_report.json"), p("poses_report.json"), p("merged_report.json")];
    cmd_report(&reports, &p("summary.json"))?;
    println!("fuse exit code would be {}", fused.exit_code());
    println!("{}", std::fs::read_to_string(p("summary.json"))?);
    Ok(p("summary.json"))
}

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join("geomag-align-pipeline");
    run(&dir).map(|_| ())
}
