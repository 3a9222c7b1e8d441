//! Experiment runner: `rwre <experiment> --config path.json [--workers N]
//! [--seed S] [--out DIR]`.
//!
//! Exit codes: 0 success, 1 config error, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use rwre::error::Error;
use rwre::experiment::{run, ExperimentConfig, ExperimentKind};

#[derive(Parser, Debug)]
#[command(
    name = "rwre",
    version,
    about = "Random walk in random environment experiments"
)]
struct Cli {
    /// Experiment to run; must match the config's `experiment` field if set.
    #[arg(value_enum)]
    experiment: ExperimentKind,

    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,

    /// Worker threads; falls back to RWRE_WORKERS, then all cores.
    #[arg(long)]
    workers: Option<usize>,

    /// Overrides the config's master_seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(&cli.config).map_err(|e| {
        Error::config(
            "config",
            format!("cannot read {}: {e}", cli.config.display()),
        )
    })?;
    let mut config = ExperimentConfig::from_json(&text)?;
    match config.experiment {
        None => config.experiment = Some(cli.experiment),
        Some(kind) if kind != cli.experiment => {
            return Err(Error::config(
                "experiment",
                format!(
                    "config says {} but the command line says {}",
                    kind.name(),
                    cli.experiment.name()
                ),
            ));
        }
        Some(_) => {}
    }
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = Some(out.clone());
    }
    if let Some(workers) = cli.workers {
        config.workers = Some(workers);
    } else if config.workers.is_none() {
        if let Ok(var) = std::env::var("RWRE_WORKERS") {
            let parsed = var.parse::<usize>().map_err(|_| {
                Error::config("workers", format!("RWRE_WORKERS is not a number: {var}"))
            })?;
            config.workers = Some(parsed);
        }
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match load_config(&cli) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("rwre: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = config.validate() {
        eprintln!("rwre: {e}");
        return ExitCode::from(1);
    }
    match run(&config) {
        Ok(manifest) => {
            println!(
                "{}: wrote {} file(s) to {} in {:.2}s",
                manifest.experiment,
                manifest.outputs.len() + 1,
                config
                    .output_dir
                    .as_deref()
                    .unwrap_or_else(|| std::path::Path::new("rwre-out"))
                    .display(),
                manifest.wall_time_secs,
            );
            ExitCode::SUCCESS
        }
        Err(e @ Error::Config { .. }) => {
            eprintln!("rwre: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("rwre: {e}");
            ExitCode::from(2)
        }
    }
}
