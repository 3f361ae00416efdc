use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use m2d_core::config::{load_config, ExperimentConfig};
use m2d_core::experiment::{self, render_horizons};
use m2d_core::Error;

/// EEG driver-intention pipeline.
#[derive(Debug, Parser)]
#[command(name = "m2d", version)]
struct Cli {
    #[command(subcommand)]
    stage: Stage,

    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Stage {
    /// Generate synthetic sessions.
    Synth,
    /// Label sessions from kinematics.
    Label,
    /// Build windowed datasets per horizon.
    Build,
    /// Train one model per horizon.
    Train,
    /// Evaluate models and write the horizon table.
    Eval,
    /// Run synth through eval.
    Sweep,
    /// Summarise the horizon table.
    Report,
}

fn resolve(cli: &Cli) -> m2d_core::Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let mut cfg = load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> m2d_core::Result<()> {
    let cfg = resolve(cli)?;
    match cli.stage {
        Stage::Synth => experiment::run_synth(&cfg)?,
        Stage::Label => {
            let th = experiment::run_label(&cfg)?;
            println!("v_th = {} m/s, omega_th = {} rad/s", th.v_th, th.omega_th);
        }
        Stage::Build => {
            for b in experiment::run_build(&cfg)? {
                println!(
                    "horizon {} ms: rejected fraction {:.4}, train {:?}, val {:?}, test {:?}",
                    b.horizon_ms, b.rejected_fraction, b.stats.train_counts, b.stats.val_counts, b.stats.test_counts
                );
            }
        }
        Stage::Train => experiment::run_train(&cfg)?,
        Stage::Eval => print!("{}", render_horizons(&experiment::run_eval(&cfg)?)),
        Stage::Sweep => print!("{}", render_horizons(&experiment::run_experiment(&cfg)?)),
        Stage::Report => print!("{}", experiment::run_report(&cfg)?),
    }
    Ok(())
}

fn init_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("M2D_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("M2D_THREADS must be a positive integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
