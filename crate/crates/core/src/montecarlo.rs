//! Sample-level mini-batch SGD and NSGD on Gaussian data, used as an oracle
//! for the exact moment recursion.
//!
//! Inputs have independent coordinates `x_i ~ N(0, lambda_i)` and labels
//! carry `N(0, sigma^2)` noise. Each trial owns a ChaCha8 stream selected by
//! the trial index; step `t` reads from word position `t << 32` of that
//! stream, so results do not depend on how trials are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nsgd::{self, NsgdError, NsgdMode};
use crate::problem::ProblemInstance;
use crate::schedules::{Phase, ScheduleError, ScheduleSpec};

/// Trials handed to one parallel task; reduction happens chunk by chunk in
/// trial order.
const CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum McError {
    #[error("need at least 2 trials for a standard error (got {0})")]
    TooFewTrials(usize),
    #[error("record_every must be positive")]
    ZeroStride,
    #[error("dimension {dimension} exceeds max_dimension {max}")]
    DimensionTooLarge { dimension: usize, max: usize },
    #[error("Monte Carlo NSGD needs sigma^2 > 0")]
    Noiseless,
    #[error("worker count must be positive")]
    ZeroWorkers,
    #[error("exact side-run diverged at step {0}; no denominators past it")]
    SideRunDiverged(u64),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Nsgd(#[from] NsgdError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub trials: usize,
    pub seed: u64,
    /// Record every `record_every` steps; step 0 and phase ends are always
    /// recorded.
    pub record_every: u64,
    pub max_dimension: usize,
    /// Rayon worker count; `None` uses the global pool.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl McConfig {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            seed,
            record_every: 1,
            max_dimension: 1024,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<(), McError> {
        if self.trials < 2 {
            return Err(McError::TooFewTrials(self.trials));
        }
        if self.record_every == 0 {
            return Err(McError::ZeroStride);
        }
        if self.workers == Some(0) {
            return Err(McError::ZeroWorkers);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRecord {
    pub step: u64,
    pub samples: f64,
    pub lr: f64,
    pub batch: f64,
    pub mean_excess_risk: f64,
    pub stderr_excess_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McTrajectory {
    pub records: Vec<McRecord>,
    /// Integer batch actually sampled in each phase.
    pub realized_batches: Vec<u64>,
    /// Samples consumed by the end of each phase.
    pub phase_samples_consumed: Vec<u64>,
    pub trials: usize,
    pub seed: u64,
}

impl McTrajectory {
    pub fn final_record(&self) -> &McRecord {
        self.records.last().expect("trajectory always holds step 0")
    }

    pub fn record_at_step(&self, step: u64) -> Option<&McRecord> {
        self.records
            .binary_search_by_key(&step, |r| r.step)
            .ok()
            .map(|i| &self.records[i])
    }
}

/// Where to record, and the phase metadata attached to each point.
struct Grid {
    steps: Vec<u64>,
    samples: Vec<u64>,
    phase: Vec<usize>,
}

fn recording_grid(phases: &[Phase], stride: u64) -> Grid {
    let mut grid = Grid {
        steps: vec![0],
        samples: vec![0],
        phase: vec![0],
    };
    let mut step = 0u64;
    let mut samples = 0u64;
    for (k, p) in phases.iter().enumerate() {
        let b = p.batch as u64;
        for i in 0..p.steps {
            step += 1;
            samples += b;
            if step.is_multiple_of(stride) || i + 1 == p.steps {
                grid.steps.push(step);
                grid.samples.push(samples);
                grid.phase.push(k);
            }
        }
    }
    grid
}

/// Learning rate applied at each step, per phase or per step.
enum Rates {
    PerPhase(Vec<f64>),
    PerStep(Vec<f64>),
}

impl Rates {
    fn at(&self, phase: usize, step: u64) -> f64 {
        match self {
            Rates::PerPhase(r) => r[phase],
            Rates::PerStep(r) => r[step as usize],
        }
    }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn initial_displacement(problem: &ProblemInstance, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let m0 = problem.initial_second_moment();
    let u0 = problem.initial_mean_displacement();
    m0.iter()
        .zip(u0)
        .map(|(&m, &u)| {
            let var = m - u * u;
            // Within rounding of u^2 = m the start is deterministic.
            if var <= 4.0 * f64::EPSILON * m {
                m.sqrt().copysign(if u < 0.0 { -1.0 } else { 1.0 })
            } else {
                let z: f64 = rng.sample(StandardNormal);
                u + var.sqrt() * z
            }
        })
        .collect()
}

fn excess_risk(lambda: &[f64], delta: &[f64]) -> f64 {
    0.5 * lambda.iter().zip(delta).map(|(l, d)| l * d * d).sum::<f64>()
}

/// Excess risk of one trial at every grid point.
fn run_trial(
    problem: &ProblemInstance,
    phases: &[Phase],
    rates: &Rates,
    grid: &Grid,
    seed: u64,
    trial: usize,
) -> Vec<f64> {
    let lambda = problem.eigenvalues();
    let scale: Vec<f64> = lambda.iter().map(|l| l.sqrt()).collect();
    let sigma = problem.noise_variance().sqrt();
    let d = lambda.len();

    let mut rng = trial_rng(seed, trial);
    let mut delta = initial_displacement(problem, &mut rng);
    let mut grad = vec![0.0; d];
    let mut x = vec![0.0; d];
    let mut out = Vec::with_capacity(grid.steps.len());
    out.push(excess_risk(lambda, &delta));
    let mut next = 1;

    let mut step = 0u64;
    for (k, p) in phases.iter().enumerate() {
        let b = p.batch as u64;
        for _ in 0..p.steps {
            rng.set_word_pos(((step + 1) as u128) << 32);
            grad.iter_mut().for_each(|g| *g = 0.0);
            for _ in 0..b {
                let mut residual = 0.0;
                for i in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    x[i] = scale[i] * z;
                    residual += x[i] * delta[i];
                }
                let eps: f64 = rng.sample(StandardNormal);
                residual -= sigma * eps;
                for i in 0..d {
                    grad[i] += x[i] * residual;
                }
            }
            let factor = rates.at(k, step) / p.batch;
            for i in 0..d {
                delta[i] -= factor * grad[i];
            }
            step += 1;
            if next < grid.steps.len() && grid.steps[next] == step {
                out.push(excess_risk(lambda, &delta));
                next += 1;
            }
        }
    }
    out
}

/// Running mean and sum of squared deviations (Welford), one per grid point.
struct Accumulator {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, values: &[f64]) {
        self.count += 1.0;
        for ((mean, m2), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(values) {
            let delta = v - *mean;
            *mean += delta / self.count;
            *m2 += delta * (v - *mean);
        }
    }

    fn stderr(&self, i: usize) -> f64 {
        let var = (self.m2[i] / (self.count - 1.0)).max(0.0);
        (var / self.count).sqrt()
    }
}

fn simulate(
    problem: &ProblemInstance,
    phases: &[Phase],
    rates: &Rates,
    config: &McConfig,
) -> Result<McTrajectory, McError> {
    let grid = recording_grid(phases, config.record_every);
    let run = || {
        let mut acc = Accumulator::new(grid.steps.len());
        for start in (0..config.trials).step_by(CHUNK) {
            let end = (start + CHUNK).min(config.trials);
            let chunk: Vec<Vec<f64>> = (start..end)
                .into_par_iter()
                .map(|t| run_trial(problem, phases, rates, &grid, config.seed, t))
                .collect();
            for values in &chunk {
                acc.push(values);
            }
        }
        acc
    };
    let acc = match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| McError::ThreadPool(e.to_string()))?
            .install(run),
        None => run(),
    };

    let records = (0..grid.steps.len())
        .map(|i| {
            let p = &phases[grid.phase[i]];
            let step = grid.steps[i];
            McRecord {
                step,
                samples: grid.samples[i] as f64,
                lr: p.lr,
                batch: p.batch,
                mean_excess_risk: acc.mean[i],
                stderr_excess_risk: acc.stderr(i),
            }
        })
        .collect();
    let phase_samples_consumed = phases
        .iter()
        .scan(0u64, |acc, p| {
            *acc += p.steps * p.batch as u64;
            Some(*acc)
        })
        .collect();
    Ok(McTrajectory {
        records,
        realized_batches: phases.iter().map(|p| p.batch as u64).collect(),
        phase_samples_consumed,
        trials: config.trials,
        seed: config.seed,
    })
}

fn prepare(problem: &ProblemInstance, schedule: &ScheduleSpec, config: &McConfig) -> Result<Vec<Phase>, McError> {
    config.validate()?;
    schedule.validate()?;
    if problem.dimension() > config.max_dimension {
        return Err(McError::DimensionTooLarge {
            dimension: problem.dimension(),
            max: config.max_dimension,
        });
    }
    Ok(schedule.integer_phases())
}

/// Mini-batch SGD over the schedule's phases with batches rounded to
/// integers.
pub fn run_sgd_trials(
    problem: &ProblemInstance,
    schedule: &ScheduleSpec,
    config: &McConfig,
) -> Result<McTrajectory, McError> {
    let phases = prepare(problem, schedule, config)?;
    let rates = Rates::PerPhase(phases.iter().map(|p| p.lr).collect());
    simulate(problem, &phases, &rates, config)
}

/// Mini-batch NSGD: stochastic gradients divided by a deterministic
/// population denominator. `FullDenominator` takes its denominators from an
/// exact run over the same integer-batch phases.
pub fn run_nsgd_trials(
    problem: &ProblemInstance,
    schedule: &ScheduleSpec,
    config: &McConfig,
    mode: NsgdMode,
) -> Result<McTrajectory, McError> {
    let phases = prepare(problem, schedule, config)?;
    if problem.noise_variance() <= 0.0 {
        return Err(McError::Noiseless);
    }
    let rates = match mode {
        NsgdMode::VarianceDominated => Rates::PerPhase(
            phases
                .iter()
                .map(|p| nsgd::effective_lr(p.lr, p.batch, problem))
                .collect::<Result<_, _>>()?,
        ),
        NsgdMode::FullDenominator => {
            let rates = nsgd::full_denominator_rates(problem, &phases)?;
            let total: u64 = phases.iter().map(|p| p.steps).sum();
            if (rates.len() as u64) < total {
                return Err(McError::SideRunDiverged(rates.len() as u64));
            }
            Rates::PerStep(rates)
        }
    };
    simulate(problem, &phases, &rates, config)
}

/// Fraction of records whose Monte Carlo mean lies within `k` standard
/// errors of `exact(step)`, with a `1e-12` relative slack for rounding.
pub fn agreement_fraction(mc: &McTrajectory, k: f64, mut exact: impl FnMut(u64) -> Option<f64>) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for r in &mc.records {
        if let Some(e) = exact(r.step) {
            total += 1;
            if (r.mean_excess_risk - e).abs() <= k * r.stderr_excess_risk + 1e-12 * e.abs() {
                hits += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::evolve;
    use crate::problem::Spectrum;
    use crate::schedules::OptimizerFamily;

    fn scalar(noise: f64, m0: f64) -> ProblemInstance {
        ProblemInstance::with_deterministic_init(Spectrum::new(vec![1.0]).unwrap(), noise, vec![m0]).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(matches!(McConfig::new(1, 0).validate(), Err(McError::TooFewTrials(1))));
        let mut c = McConfig::new(10, 0);
        c.record_every = 0;
        assert!(matches!(c.validate(), Err(McError::ZeroStride)));
        let mut c = McConfig::new(10, 0);
        c.max_dimension = 0;
        let s = ScheduleSpec::constant(0.01, 1.0, vec![10], OptimizerFamily::Sgd).unwrap();
        assert!(matches!(
            run_sgd_trials(&scalar(1.0, 1.0), &s, &c),
            Err(McError::DimensionTooLarge { .. })
        ));
    }

    #[test]
    fn zero_noise_at_optimum_stays_zero() {
        let p = scalar(0.0, 0.0);
        let s = ScheduleSpec::constant(0.01, 4.0, vec![400], OptimizerFamily::Sgd).unwrap();
        let mc = run_sgd_trials(&p, &s, &McConfig::new(8, 3)).unwrap();
        assert!(mc
            .records
            .iter()
            .all(|r| r.mean_excess_risk == 0.0 && r.stderr_excess_risk == 0.0));
    }

    #[test]
    fn grid_includes_phase_ends() {
        let s = ScheduleSpec::new(0.01, 3.0, 2.0, 1.0, vec![10, 10], OptimizerFamily::Sgd).unwrap();
        let mut c = McConfig::new(4, 0);
        c.record_every = 3;
        let mc = run_sgd_trials(&scalar(1.0, 1.0), &s, &c).unwrap();
        let steps: Vec<u64> = mc.records.iter().map(|r| r.step).collect();
        // 4 steps per phase at B = 3
        assert_eq!(steps, vec![0, 3, 4, 6, 8]);
        assert_eq!(mc.realized_batches, vec![3, 3]);
        assert_eq!(mc.phase_samples_consumed, vec![12, 24]);
    }

    #[test]
    fn matches_exact_scalar_constant() {
        let p = scalar(1.0, 1.0);
        let s = ScheduleSpec::constant(0.01, 4.0, vec![8000], OptimizerFamily::Sgd).unwrap();
        let mut c = McConfig::new(1000, 42);
        c.record_every = 20;
        let mc = run_sgd_trials(&p, &s, &c).unwrap();
        let exact = evolve(&p, &s).unwrap();
        let frac = agreement_fraction(&mc, 3.0, |t| exact.record_at_step(t).map(|r| r.excess_risk));
        assert!(frac >= 0.99, "agreement {frac}");
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let p = ProblemInstance::with_centered_init(
            crate::make_power_law_spectrum(3, 1.0, 1.0).unwrap(),
            0.5,
            vec![1.0; 3],
        )
        .unwrap();
        let s = ScheduleSpec::new(0.02, 2.0, 2.0, 1.0, vec![200, 200], OptimizerFamily::Sgd).unwrap();
        let mut c = McConfig::new(150, 9);
        c.workers = Some(1);
        let a = run_sgd_trials(&p, &s, &c).unwrap();
        c.workers = Some(4);
        let b = run_sgd_trials(&p, &s, &c).unwrap();
        let again = run_sgd_trials(&p, &s, &c).unwrap();
        for ((x, y), z) in a.records.iter().zip(&b.records).zip(&again.records) {
            assert_eq!(x.mean_excess_risk.to_bits(), y.mean_excess_risk.to_bits());
            assert_eq!(x.stderr_excess_risk.to_bits(), y.stderr_excess_risk.to_bits());
            assert_eq!(y.mean_excess_risk.to_bits(), z.mean_excess_risk.to_bits());
        }
    }

    #[test]
    fn variance_dominated_nsgd_is_sgd_at_effective_rate() {
        let p = scalar(2.0, 1.0);
        let nsgd_schedule = ScheduleSpec::constant(0.005, 4.0, vec![800], OptimizerFamily::Nsgd).unwrap();
        let eta = nsgd::effective_lr(0.005, 4.0, &p).unwrap();
        let sgd_schedule = ScheduleSpec::constant(eta, 4.0, vec![800], OptimizerFamily::Sgd).unwrap();
        let c = McConfig::new(16, 5);
        let a = run_nsgd_trials(&p, &nsgd_schedule, &c, NsgdMode::VarianceDominated).unwrap();
        let b = run_sgd_trials(&p, &sgd_schedule, &c).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.mean_excess_risk.to_bits(), y.mean_excess_risk.to_bits());
        }
    }

    #[test]
    fn nsgd_rejects_noiseless() {
        let p = scalar(0.0, 1.0);
        let s = ScheduleSpec::constant(0.005, 4.0, vec![80], OptimizerFamily::Nsgd).unwrap();
        assert!(matches!(
            run_nsgd_trials(&p, &s, &McConfig::new(4, 0), NsgdMode::VarianceDominated),
            Err(McError::Noiseless)
        ));
    }

    #[test]
    fn gaussian_start_matches_second_moment() {
        let p = ProblemInstance::new(
            Spectrum::new(vec![1.0, 1.0]).unwrap(),
            1.0,
            vec![2.0, 1.0],
            vec![1.0, 0.0],
        )
        .unwrap();
        let s = ScheduleSpec::constant(0.01, 1.0, vec![1], OptimizerFamily::Sgd).unwrap();
        let mc = run_sgd_trials(&p, &s, &McConfig::new(4000, 11)).unwrap();
        let r0 = &mc.records[0];
        // 0.5 * (2 + 1)
        assert!((r0.mean_excess_risk - 1.5).abs() <= 3.0 * r0.stderr_excess_risk);
    }
}
