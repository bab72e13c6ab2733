use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seesaw_cli::config::{load_config, Engine};
use seesaw_cli::output::{read_trajectory_csv, write_bytes};
use seesaw_cli::run::{run_experiment, RunError, RunOptions};
use seesaw_cli::suites::{builtin_suites, run_suite, SuiteOptions, DEFAULT_SEED};
use seesaw_cli::svg::{risk_plot, Series};

#[derive(Parser)]
#[command(
    name = "seesaw",
    version,
    about = "Learning-rate decay vs batch-size ramp on noisy linear regression"
)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for Monte Carlo runs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run schedules that fail the divergence guard.
    #[arg(long, global = true)]
    allow_divergent: bool,
    #[arg(long, global = true, value_enum)]
    engine: Option<Engine>,
    /// Monte Carlo worker threads (suites only).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact trajectories for every schedule in the config.
    Evolve,
    /// Monte Carlo trajectories for every schedule in the config.
    Mc,
    /// Phase-by-phase comparison of the config's `run.compare` pair.
    Compare,
    /// Lemma sweeps and the two-half-steps check.
    Lemmas,
    /// Serial-step reduction of Seesaw built from cosine decay.
    Speedup,
    /// Run a built-in suite by name (`list` prints the names).
    Suite { name: String },
    /// Overlay trajectory CSVs into one SVG.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

fn config_run(cli: &Cli, engine: Option<Engine>, need_compare: bool) -> Result<bool, RunError> {
    let path = cli.config.as_ref().ok_or_else(|| seesaw_cli::ConfigError::Invalid {
        field: "--config".into(),
        message: "this command needs a config file".into(),
    })?;
    let config = load_config(path)?;
    if need_compare && config.run.compare.is_none() {
        return Err(seesaw_cli::ConfigError::Invalid {
            field: "run.compare".into(),
            message: "`compare` needs a [run] compare = [\"a\", \"b\"] entry".into(),
        }
        .into());
    }
    let options = RunOptions {
        out: cli.out.clone(),
        seed: cli.seed,
        engine: cli.engine.or(engine),
        allow_divergent: cli.allow_divergent,
    };
    let summary = run_experiment(&config, &options)?;
    for path in &summary.artifacts {
        println!("{}", path.display());
    }
    if let Some(c) = &summary.comparison {
        println!(
            "ratio band [{:.4}, {:.4}], C = {:.4}",
            c.ratio_min, c.ratio_max, c.band_constant
        );
    }
    Ok(true)
}

fn suite_run(cli: &Cli, name: &str) -> Result<bool, RunError> {
    if name == "list" {
        for s in builtin_suites() {
            println!("{s}");
        }
        return Ok(true);
    }
    let options = SuiteOptions {
        out: cli.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        seed: cli.seed.unwrap_or(DEFAULT_SEED),
        workers: cli.workers,
    };
    let outcome = run_suite(name, &options)?;
    for path in &outcome.artifacts {
        println!("{}", path.display());
    }
    println!("{}: {}", outcome.name, if outcome.passed { "PASS" } else { "FAIL" });
    Ok(outcome.passed)
}

fn plot(cli: &Cli, files: &[PathBuf]) -> Result<bool, RunError> {
    let mut series = Vec::new();
    for path in files {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Other(format!("{}: {e}", path.display())))?;
        let points = read_trajectory_csv(&text).map_err(|e| RunError::Other(format!("{}: {e}", path.display())))?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        series.push(Series { label, points });
    }
    let target = cli.out.clone().unwrap_or_else(|| PathBuf::from(".")).join("plot.svg");
    write_bytes(&target, risk_plot(&series).as_bytes())?;
    println!("{}", target.display());
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Evolve => config_run(&cli, Some(Engine::Exact), false),
        Command::Mc => config_run(&cli, Some(Engine::Mc), false),
        Command::Compare => config_run(&cli, None, true),
        Command::Lemmas => suite_run(&cli, "lemma-grid"),
        Command::Speedup => suite_run(&cli, "speedup"),
        Command::Suite { name } => suite_run(&cli, name),
        Command::Plot { csv } => plot(&cli, csv),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
