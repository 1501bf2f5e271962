use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use geomag_align::config::RunConfig;
use geomag_align::pipeline::{self, AlignArgs, CalibrateArgs, FuseArgs, Outcome, SimulateArgs};
use geomag_align::Result;

/// Geomagnetic world-frame alignment of IMU + magnetometer rigs.
///
/// Log level comes from GEOMAG_ALIGN_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "geomag-align", version)]
struct Cli {
    /// Run configuration, TOML or JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Primary output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit hard- and soft-iron calibration to a sweep.
    Calibrate {
        trace: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Sensor to calibrate; defaults to the first in the trace.
        #[arg(long)]
        sensor: Option<String>,
    },
    /// Synthesize a trace, ground truth and point clouds from a config.
    Simulate {
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        clouds_dir: Option<PathBuf>,
    },
    /// Initialize, anchor and track every sensor of a trace in the WCS.
    Fuse {
        trace: PathBuf,
        #[arg(long)]
        cal: Option<PathBuf>,
        #[arg(long)]
        anchor: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Merge per-sensor point clouds with fused poses and score the merge.
    Align {
        #[arg(long)]
        poses: PathBuf,
        #[arg(required = true)]
        clouds: Vec<PathBuf>,
        #[arg(long)]
        anchor: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Summarize command reports.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Option<RunConfig>> {
    let Some(path) = path else {
        return Ok(None);
    };
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(Some(cfg))
}

fn run(cli: Cli) -> Result<Outcome> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    match cli.cmd {
        Cmd::Calibrate { trace, report, sensor } => pipeline::cmd_calibrate(&CalibrateArgs {
            trace: &trace,
            out: &out("cal.json"),
            report: report.as_deref(),
            sensor: sensor.as_deref(),
            config: cfg.as_ref(),
        }),
        Cmd::Simulate { truth, clouds_dir } => {
            let cfg = cfg.ok_or_else(|| missing_config("simulate"))?;
            pipeline::cmd_simulate(&SimulateArgs {
                config: &cfg,
                seed: cli.seed,
                out: &out("trace.jsonl"),
                truth: truth.as_deref(),
                clouds_dir: clouds_dir.as_deref(),
            })
        }
        Cmd::Fuse {
            trace,
            cal,
            anchor,
            report,
            truth,
        } => {
            let cfg = cfg.unwrap_or_default();
            pipeline::cmd_fuse(&FuseArgs {
                trace: &trace,
                calibration: cal.as_deref(),
                config: &cfg,
                out: &out("poses.jsonl"),
                anchor: anchor.as_deref(),
                report: report.as_deref(),
                truth: truth.as_deref(),
            })
        }
        Cmd::Align {
            poses,
            clouds,
            anchor,
            report,
            truth,
        } => pipeline::cmd_align(&AlignArgs {
            poses: &poses,
            clouds: &clouds,
            out: &out("merged.xyz"),
            report: report.as_deref(),
            truth: truth.as_deref(),
            anchor: anchor.as_deref(),
            config: cfg.as_ref(),
        }),
        Cmd::Report { inputs } => pipeline::cmd_report(&inputs, &out("summary.json")),
    }
}

fn missing_config(cmd: &str) -> geomag_align::Error {
    geomag_align::Error::Schema {
        path: "--config".into(),
        msg: format!("`{cmd}` requires a run configuration"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GEOMAG_ALIGN_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            for a in &outcome.artifacts {
                println!("{}", a.display());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
