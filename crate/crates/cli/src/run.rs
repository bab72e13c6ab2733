//! Config-driven experiment runs.

use std::path::PathBuf;

use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use seesaw_core::dynamics::{evolve, DynamicsError, RiskTrajectory};
use seesaw_core::equivalence::{
    assumption1_monitor, compare_procedures_with, ComparisonOptions, EquivalenceError, EquivalenceReport,
};
use seesaw_core::montecarlo::{run_nsgd_trials, run_sgd_trials, McError, McTrajectory};
use seesaw_core::nsgd::{nsgd_evolve, NsgdError, NsgdMode};
use seesaw_core::problem::ProblemInstance;
use seesaw_core::schedules::{GuardStatus, OptimizerFamily, ScheduleSpec};

use crate::config::{ConfigError, Engine, ExperimentConfig, Format};
use crate::output::{self, OutputError, TrajectoryPoint};
use crate::svg::{risk_plot, Series};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("schedule `{name}` (alpha = {alpha}, beta = {beta}, {family}) will diverge; pass --allow-divergent to run it anyway")]
    Guard {
        name: String,
        alpha: f64,
        beta: f64,
        family: OptimizerFamily,
    },
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Nsgd(#[from] NsgdError),
    #[error(transparent)]
    MonteCarlo(#[from] McError),
    #[error(transparent)]
    Equivalence(#[from] EquivalenceError),
    #[error("{0}")]
    Other(String),
}

impl RunError {
    /// 0 success, 1 runtime failure, 2 config error, 3 guard failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::UnknownSuite(_) => 2,
            RunError::Guard { .. } => 3,
            RunError::Equivalence(EquivalenceError::Guard(_)) => 3,
            _ => 1,
        }
    }
}

/// Command-line overrides applied on top of a config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub engine: Option<Engine>,
    pub allow_divergent: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleSummary {
    pub name: String,
    pub family: OptimizerFamily,
    pub alpha: f64,
    pub beta: f64,
    pub phases: usize,
    pub guard: GuardStatus,
    pub serial_steps: u64,
    pub total_samples: u64,
    pub exact_terminal_risk: Option<f64>,
    pub exact_diverged_at: Option<u64>,
    pub max_decomposition_error: Option<f64>,
    pub assumption1_constant: Option<f64>,
    pub min_dominance_ratio: Option<f64>,
    pub mc_terminal_mean: Option<f64>,
    pub mc_terminal_stderr: Option<f64>,
    pub mc_trials: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub engine: Engine,
    pub family: OptimizerFamily,
    pub nsgd_mode: Option<NsgdMode>,
    pub seed: Option<u64>,
    pub schedules: Vec<ScheduleSummary>,
    pub comparison: Option<EquivalenceReport>,
    #[serde(skip)]
    pub artifacts: Vec<PathBuf>,
}

/// Exact trajectory for either family.
pub fn exact_run(
    problem: &ProblemInstance,
    schedule: &ScheduleSpec,
    family: OptimizerFamily,
    mode: NsgdMode,
) -> Result<RiskTrajectory, RunError> {
    Ok(match family {
        OptimizerFamily::Sgd => evolve(problem, schedule)?,
        OptimizerFamily::Nsgd => nsgd_evolve(problem, schedule, mode)?,
    })
}

pub fn exact_points(traj: &RiskTrajectory) -> Vec<TrajectoryPoint> {
    traj.records
        .iter()
        .map(|r| TrajectoryPoint {
            step: r.step,
            samples: r.samples,
            excess_risk: r.excess_risk,
            stderr: None,
        })
        .collect()
}

pub fn mc_points(mc: &McTrajectory) -> Vec<TrajectoryPoint> {
    mc.records
        .iter()
        .map(|r| TrajectoryPoint {
            step: r.step,
            samples: r.samples,
            excess_risk: r.mean_excess_risk,
            stderr: Some(r.stderr_excess_risk),
        })
        .collect()
}

pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunSummary, RunError> {
    config.validate()?;
    let engine = options.engine.unwrap_or(config.run.engine);
    let mut mc_config = config.mc_config();
    if engine.mc() && mc_config.is_none() {
        return Err(ConfigError::MissingMc(engine.as_str()).into());
    }
    if let (Some(mc), Some(seed)) = (mc_config.as_mut(), options.seed) {
        mc.seed = seed;
    }
    let allow_divergent = options.allow_divergent || config.run.allow_divergent;
    let family = config.run.family;
    let mode = config.run.nsgd_mode;
    let out_dir = options.out.clone().unwrap_or_else(|| config.output.directory.clone());
    let problem = config.build_problem()?;

    let names = config.selected_schedules();
    let mut schedules = Vec::with_capacity(names.len());
    for name in &names {
        let s = config.build_schedule(name)?;
        if s.guard() == GuardStatus::WillDiverge {
            if !allow_divergent {
                return Err(RunError::Guard {
                    name: name.clone(),
                    alpha: s.lr_decay_factor,
                    beta: s.batch_ramp_factor,
                    family,
                });
            }
            warn!("running divergent schedule `{name}`");
        }
        schedules.push(s);
    }

    let mut artifacts = Vec::new();
    let mut emit = |file: String, bytes: Vec<u8>| -> Result<(), RunError> {
        let path = out_dir.join(file);
        output::write_bytes(&path, &bytes)?;
        info!("wrote {}", path.display());
        artifacts.push(path);
        Ok(())
    };

    let mut summaries = Vec::new();
    let mut series = Vec::new();
    for (name, s) in names.iter().zip(&schedules) {
        let mut summary = ScheduleSummary {
            name: name.clone(),
            family,
            alpha: s.lr_decay_factor,
            beta: s.batch_ramp_factor,
            phases: s.num_phases(),
            guard: s.guard(),
            serial_steps: seesaw_core::schedules::serial_steps(s),
            total_samples: s.total_samples(),
            exact_terminal_risk: None,
            exact_diverged_at: None,
            max_decomposition_error: None,
            assumption1_constant: None,
            min_dominance_ratio: None,
            mc_terminal_mean: None,
            mc_terminal_stderr: None,
            mc_trials: None,
        };
        if engine.exact() {
            let traj = exact_run(&problem, s, family, mode)?;
            summary.exact_terminal_risk = Some(traj.terminal_risk());
            summary.exact_diverged_at = traj.diverged_at;
            summary.max_decomposition_error = Some(traj.max_decomposition_error);
            summary.min_dominance_ratio = traj.min_dominance_ratio;
            if let Some(t0) = traj.first_cut_step() {
                if problem.noise_variance() > 0.0 && t0 > 0 && traj.final_record().step > t0 {
                    let report = assumption1_monitor(&traj, problem.noise_variance().sqrt(), t0)?;
                    summary.assumption1_constant = Some(report.observed_c);
                }
            }
            if config.output.wants(Format::Csv) {
                let bytes =
                    output::trajectory_csv(&traj, family == OptimizerFamily::Nsgd, config.output.record_stride)?;
                emit(format!("{name}_exact.csv"), bytes)?;
            }
            series.push(Series {
                label: format!("{name} (exact)"),
                points: exact_points(&traj),
            });
        }
        if let (true, Some(mc_config)) = (engine.mc(), mc_config.as_ref()) {
            let mc = match family {
                OptimizerFamily::Sgd => run_sgd_trials(&problem, s, mc_config)?,
                OptimizerFamily::Nsgd => run_nsgd_trials(&problem, s, mc_config, mode)?,
            };
            let last = mc.final_record();
            summary.mc_terminal_mean = Some(last.mean_excess_risk);
            summary.mc_terminal_stderr = Some(last.stderr_excess_risk);
            summary.mc_trials = Some(mc.trials);
            if config.output.wants(Format::Csv) {
                emit(format!("{name}_mc.csv"), output::mc_csv(&mc)?)?;
            }
            series.push(Series {
                label: format!("{name} (mc)"),
                points: mc_points(&mc),
            });
        }
        summaries.push(summary);
    }

    let comparison = match &config.run.compare {
        Some(pair) => {
            let a = config.build_schedule(&pair[0])?;
            let b = config.build_schedule(&pair[1])?;
            let opts = ComparisonOptions {
                lr_inflation: config.run.lr_inflation,
                nsgd_mode: mode,
                allow_divergent,
                enforce_product: true,
            };
            let report = compare_procedures_with(&problem, &a, &b, family, &opts)?;
            if config.output.wants(Format::Csv) {
                emit(
                    format!("compare_{}_vs_{}.csv", pair[0], pair[1]),
                    output::comparison_csv(&report)?,
                )?;
            }
            Some(report)
        }
        None => None,
    };

    let summary = RunSummary {
        engine,
        family,
        nsgd_mode: (family == OptimizerFamily::Nsgd).then_some(mode),
        seed: mc_config.as_ref().map(|c| c.seed),
        schedules: summaries,
        comparison,
        artifacts: Vec::new(),
    };
    if config.output.wants(Format::Json) {
        emit("summary.json".to_string(), output::json_bytes(&summary)?)?;
    }
    if config.output.wants(Format::Svg) && !series.is_empty() {
        emit("risk.svg".to_string(), risk_plot(&series).into_bytes())?;
    }
    Ok(RunSummary { artifacts, ..summary })
}
