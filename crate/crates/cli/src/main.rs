use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use spherical_tap_cli::config::{parse_config, Experiment};
use spherical_tap_cli::{run, RunError};

/// Run one spherical-tap experiment from a JSON configuration.
#[derive(Debug, Parser)]
#[command(name = "spherical-tap", version)]
struct Args {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, env = "SPHERICAL_TAP_THREADS", default_value_t = 0)]
    threads: usize,
    /// Experiment to run; overrides `experiment`.
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    /// Run this seed only; overrides `seeds`.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let mut config = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(dir) = args.output {
        config.output_dir = dir;
    }
    if let Some(e) = args.experiment {
        config.experiment = e;
    }
    if let Some(s) = args.seed {
        config.seeds = vec![s];
    }
    match run(&config, args.threads) {
        Ok(report) => {
            let m = &report.manifest;
            eprintln!(
                "{}: {} rows, {} failures, {:.2} s on {} threads -> {}",
                m.experiment,
                m.rows,
                m.failures,
                m.wall_time_seconds,
                m.threads,
                report.output_dir.display()
            );
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                for f in &report.failures {
                    eprintln!("FAIL {f}");
                }
                ExitCode::from(1)
            }
        }
        Err(RunError::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
