//! Built-in experiment suites. Each suite has a typed report function (used
//! directly by tests) and writes its artifacts under `<out>/<suite>/`.

use std::f64::consts::{FRAC_2_PI, SQRT_2};
use std::path::{Path, PathBuf};

use serde::Serialize;

use seesaw_core::dynamics::{evolve_phases, two_half_steps_gap, RiskTrajectory, StateMoments};
use seesaw_core::equivalence::{
    compare_procedures, compare_procedures_with, lemma_grid, ComparisonOptions, EquivalenceReport, LemmaGridReport,
};
use seesaw_core::montecarlo::{agreement_fraction, run_nsgd_trials, run_sgd_trials, McConfig, McTrajectory};
use seesaw_core::nsgd::{
    effective_lr, effective_lr_per_phase, ngd_1d_cycle, nsgd_evolve, nsgd_evolve_phases, NsgdMode,
};
use seesaw_core::problem::{make_power_law_spectrum, ProblemInstance, Spectrum};
use seesaw_core::schedules::{
    check_divergence_guard, cosine_to_step_cuts, seesaw_cosine_step_ratio, seesaw_from_cut_plan, serial_steps,
    theoretical_speedup_cosine, CutPlan, GuardStatus, OptimizerFamily, ScheduleSpec,
};

use crate::output::{self, json_bytes};
use crate::run::RunError;

pub const DEFAULT_SEED: u64 = 20_240_917;

pub const SUITES: [&str; 8] = [
    "oracle-agreement",
    "theorem-sgd",
    "corollary-nsgd",
    "equivalence-line",
    "divergence-demo",
    "speedup",
    "lemma-grid",
    "ngd-cycle",
];

pub fn builtin_suites() -> &'static [&'static str] {
    &SUITES
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub out: PathBuf,
    pub seed: u64,
    /// Monte Carlo worker count; `None` uses every core.
    pub workers: Option<usize>,
}

impl SuiteOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            seed: DEFAULT_SEED,
            workers: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: String,
    pub passed: bool,
    pub artifacts: Vec<PathBuf>,
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn new(out: &Path, suite: &str) -> Self {
        Self {
            dir: out.join(suite),
            written: Vec::new(),
        }
    }

    fn write(&mut self, file: &str, bytes: &[u8]) -> Result<(), RunError> {
        let path = self.dir.join(file);
        output::write_bytes(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, value: &T) -> Result<(), RunError> {
        self.write("summary.json", &json_bytes(value)?)
    }
}

/// Run a suite by name and write its artifacts.
pub fn run_suite(name: &str, options: &SuiteOptions) -> Result<SuiteOutcome, RunError> {
    let mut art = Artifacts::new(&options.out, name);
    let passed = match name {
        "oracle-agreement" => {
            let run = oracle_agreement(options.seed, 1000, options.workers)?;
            for case in &run.cases {
                art.write(
                    &format!("{}_exact.csv", case.report.name),
                    &output::trajectory_csv(&case.exact, false, 1)?,
                )?;
                art.write(&format!("{}_mc.csv", case.report.name), &output::mc_csv(&case.mc)?)?;
            }
            art.json(&run.report)?;
            run.report.pass
        }
        "theorem-sgd" => {
            let r = theorem_sgd()?;
            for (i, p) in r.pairs.iter().enumerate() {
                art.write(&format!("pair{i}_comparison.csv"), &output::comparison_csv(&p.report)?)?;
            }
            art.write("control_comparison.csv", &output::comparison_csv(&r.control.report)?)?;
            art.json(&r)?;
            r.pass
        }
        "corollary-nsgd" => {
            let r = corollary_nsgd()?;
            art.write("comparison.csv", &output::comparison_csv(&r.report)?)?;
            art.json(&r)?;
            r.pass
        }
        "equivalence-line" => {
            let run = equivalence_line()?;
            for (point, traj) in run.report.points.iter().zip(&run.trajectories) {
                art.write(&format!("{}.csv", point.label), &output::trajectory_csv(traj, true, 1)?)?;
            }
            art.json(&run.report)?;
            true
        }
        "divergence-demo" => {
            let run = divergence_demo()?;
            art.write("trajectory.csv", &output::trajectory_csv(&run.trajectory, true, 1)?)?;
            art.json(&run.report)?;
            run.report.pass
        }
        "speedup" => {
            let r = speedup_report()?;
            art.json(&r)?;
            r.pass
        }
        "lemma-grid" => {
            let r = LemmaSuiteReport {
                lemmas: lemma_grid()?,
                two_half_steps: two_half_steps_report()?,
            };
            art.json(&r)?;
            r.lemmas.pass() && r.two_half_steps.pass
        }
        "ngd-cycle" => {
            let r = ngd_cycle_report()?;
            art.json(&r)?;
            r.pass
        }
        other => return Err(RunError::UnknownSuite(other.to_string())),
    };
    Ok(SuiteOutcome {
        name: name.to_string(),
        passed,
        artifacts: art.written,
    })
}

fn other(e: impl std::fmt::Display) -> RunError {
    RunError::Other(e.to_string())
}

// ---------------------------------------------------------------------------
// speedup

#[derive(Debug, Clone, Serialize)]
pub struct SpeedupPoint {
    pub alpha: f64,
    pub cuts: usize,
    pub serial_steps: u64,
    /// Seesaw serial steps over `T`.
    pub ratio: f64,
    pub speedup: f64,
    /// `(ratio - 2/pi) / (2/pi)`
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeedupReport {
    pub closed_form_speedup: f64,
    pub limit_ratio: f64,
    pub total_steps: u64,
    pub points: Vec<SpeedupPoint>,
    pub target_alpha: f64,
    pub target_relative_error: f64,
    pub tolerance: f64,
    pub monotone_approach: bool,
    pub pass: bool,
}

pub const SPEEDUP_TOTAL_STEPS: u64 = 10_000;

pub fn speedup_report() -> Result<SpeedupReport, RunError> {
    let t = SPEEDUP_TOTAL_STEPS;
    let alphas = [2.0, SQRT_2, 2f64.powf(0.25), 2f64.powf(0.125)];
    let mut points = Vec::new();
    for alpha in alphas {
        let plan = cosine_to_step_cuts(t, alpha).map_err(other)?;
        let ratio = seesaw_cosine_step_ratio(t, alpha).map_err(other)?;
        let seesaw = seesaw_from_cut_plan(&plan, 1.0, 1.0).map_err(other)?;
        points.push(SpeedupPoint {
            alpha,
            cuts: plan.cut_steps.len(),
            serial_steps: serial_steps(&seesaw),
            ratio,
            speedup: 1.0 - ratio,
            relative_error: (ratio - FRAC_2_PI) / FRAC_2_PI,
        });
    }
    let monotone_approach = points
        .windows(2)
        .all(|w| w[1].relative_error.abs() < w[0].relative_error.abs());
    let target = points.last().expect("non-empty alpha list");
    let tolerance = 0.03;
    Ok(SpeedupReport {
        closed_form_speedup: theoretical_speedup_cosine(),
        limit_ratio: FRAC_2_PI,
        total_steps: t,
        target_alpha: target.alpha,
        target_relative_error: target.relative_error,
        tolerance,
        monotone_approach,
        pass: monotone_approach && target.relative_error.abs() <= tolerance,
        points,
    })
}

// ---------------------------------------------------------------------------
// oracle-agreement

#[derive(Debug, Clone, Serialize)]
pub struct OracleCase {
    pub name: String,
    pub dimension: usize,
    pub family: OptimizerFamily,
    pub schedule: &'static str,
    pub trials: usize,
    pub recorded_steps: usize,
    pub agreement: f64,
    pub exact_terminal_risk: f64,
    pub mc_terminal_mean: f64,
    pub mc_terminal_stderr: f64,
    pub max_decomposition_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub seed: u64,
    pub threshold: f64,
    pub cases: Vec<OracleCase>,
    pub min_agreement: f64,
    pub max_decomposition_error: f64,
    pub pass: bool,
}

pub struct OracleCaseRun {
    pub report: OracleCase,
    pub exact: RiskTrajectory,
    pub mc: McTrajectory,
}

pub struct OracleRun {
    pub report: OracleReport,
    pub cases: Vec<OracleCaseRun>,
}

struct OracleSpec {
    name: &'static str,
    problem: ProblemInstance,
    schedule: ScheduleSpec,
    kind: &'static str,
    record_every: u64,
}

fn oracle_specs() -> Result<Vec<OracleSpec>, RunError> {
    let unit = Spectrum::new(vec![1.0]).map_err(other)?;
    let d2 = make_power_law_spectrum(2, 1.0, 1.0).map_err(other)?;
    let d8 = make_power_law_spectrum(8, 1.0, 1.0).map_err(other)?;
    let sgd = OptimizerFamily::Sgd;
    let four_cuts = CutPlan::new(vec![500, 1000, 1500], 2000, 2.0).map_err(other)?;
    let root2_cuts = CutPlan::new(vec![500, 1000, 1500], 2000, SQRT_2).map_err(other)?;
    let sgd_seesaw = |plan: &CutPlan, eta: f64| -> Result<ScheduleSpec, RunError> {
        let s = seesaw_from_cut_plan(plan, eta, 4.0).map_err(other)?;
        Ok(ScheduleSpec {
            optimizer_family: sgd,
            ..s
        })
    };
    Ok(vec![
        OracleSpec {
            name: "d1_constant_sgd",
            problem: ProblemInstance::with_deterministic_init(unit.clone(), 1.0, vec![1.0]).map_err(other)?,
            schedule: ScheduleSpec::constant(0.01, 4.0, vec![8000], sgd).map_err(other)?,
            kind: "constant",
            record_every: 10,
        },
        OracleSpec {
            name: "d1_seesaw_sgd",
            problem: ProblemInstance::with_deterministic_init(unit, 1.0, vec![1.0]).map_err(other)?,
            schedule: sgd_seesaw(&four_cuts, 0.02)?,
            kind: "seesaw",
            record_every: 10,
        },
        OracleSpec {
            name: "d2_constant_sgd",
            problem: ProblemInstance::with_deterministic_init(d2.clone(), 1.0, vec![1.0; 2]).map_err(other)?,
            schedule: ScheduleSpec::constant(0.01, 4.0, vec![8000], sgd).map_err(other)?,
            kind: "constant",
            record_every: 10,
        },
        OracleSpec {
            name: "d2_seesaw_nsgd",
            problem: ProblemInstance::with_deterministic_init(d2, 1.0, vec![1.0; 2]).map_err(other)?,
            schedule: seesaw_from_cut_plan(&root2_cuts, 0.01, 4.0).map_err(other)?,
            kind: "seesaw",
            record_every: 10,
        },
        OracleSpec {
            name: "d8_constant_sgd",
            problem: ProblemInstance::with_centered_init(d8.clone(), 0.5, vec![1.0; 8]).map_err(other)?,
            schedule: ScheduleSpec::constant(0.02, 2.0, vec![4000], sgd).map_err(other)?,
            kind: "constant",
            record_every: 10,
        },
        OracleSpec {
            name: "d8_seesaw_sgd",
            problem: ProblemInstance::with_deterministic_init(d8, 0.5, vec![0.5; 8]).map_err(other)?,
            schedule: sgd_seesaw(&four_cuts, 0.02)?,
            kind: "seesaw",
            record_every: 10,
        },
    ])
}

/// Exact engine against Monte Carlo on six problem/schedule pairs. Both run
/// over the same integer-batch phases.
pub fn oracle_agreement(seed: u64, trials: usize, workers: Option<usize>) -> Result<OracleRun, RunError> {
    let threshold = 0.99;
    let mut cases = Vec::new();
    for (i, spec) in oracle_specs()?.into_iter().enumerate() {
        let phases = spec.schedule.integer_phases();
        let family = spec.schedule.optimizer_family;
        let config = McConfig {
            trials,
            seed: seed.wrapping_add(i as u64),
            record_every: spec.record_every,
            max_dimension: 64,
            workers,
        };
        let (exact, mc) = match family {
            OptimizerFamily::Sgd => (
                evolve_phases(&spec.problem, &phases)?,
                run_sgd_trials(&spec.problem, &spec.schedule, &config)?,
            ),
            OptimizerFamily::Nsgd => (
                nsgd_evolve_phases(&spec.problem, &phases, NsgdMode::VarianceDominated)?,
                run_nsgd_trials(&spec.problem, &spec.schedule, &config, NsgdMode::VarianceDominated)?,
            ),
        };
        let agreement = agreement_fraction(&mc, 3.0, |t| exact.record_at_step(t).map(|r| r.excess_risk));
        let last = mc.final_record();
        cases.push(OracleCaseRun {
            report: OracleCase {
                name: spec.name.to_string(),
                dimension: spec.problem.dimension(),
                family,
                schedule: spec.kind,
                trials,
                recorded_steps: mc.records.len(),
                agreement,
                exact_terminal_risk: exact.terminal_risk(),
                mc_terminal_mean: last.mean_excess_risk,
                mc_terminal_stderr: last.stderr_excess_risk,
                max_decomposition_error: exact.max_decomposition_error,
            },
            exact,
            mc,
        });
    }
    let min_agreement = cases.iter().map(|c| c.report.agreement).fold(1.0, f64::min);
    let max_decomposition_error = cases
        .iter()
        .map(|c| c.report.max_decomposition_error)
        .fold(0.0, f64::max);
    Ok(OracleRun {
        report: OracleReport {
            seed,
            threshold,
            cases: cases.iter().map(|c| c.report.clone()).collect(),
            min_agreement,
            max_decomposition_error,
            pass: min_agreement >= threshold,
        },
        cases,
    })
}

// ---------------------------------------------------------------------------
// theorem-sgd / corollary-nsgd

/// Band and sandwich threshold for matched-product pairs.
pub const BAND_LIMIT: f64 = 10.0;
/// Growth of the phase ratio that counts as detected inequivalence.
pub const DRIFT_LIMIT: f64 = 2.0;
pub const THEOREM_PHASES: usize = 5;
pub const THEOREM_PHASE_SAMPLES: u64 = 20_000;

/// The problem the equivalence suites run on: 8 coordinates with
/// `lambda_i = 1/i`, unit noise and a deterministic unit start.
pub fn reference_problem() -> ProblemInstance {
    let spectrum = make_power_law_spectrum(8, 1.0, 1.0).expect("valid spectrum");
    ProblemInstance::with_deterministic_init(spectrum, 1.0, vec![1.0; 8]).expect("valid problem")
}

#[derive(Debug, Clone, Serialize)]
pub struct PairResult {
    pub label: String,
    pub report: EquivalenceReport,
    pub band_ok: bool,
    pub sandwich_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlResult {
    pub label: String,
    pub report: EquivalenceReport,
    pub drift: f64,
    pub detected: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoremReport {
    pub eta: f64,
    pub phases: usize,
    pub phase_samples: u64,
    pub pairs: Vec<PairResult>,
    pub control: ControlResult,
    pub max_decomposition_error: f64,
    pub pass: bool,
}

fn pair_result(label: String, report: EquivalenceReport) -> PairResult {
    PairResult {
        label,
        band_ok: report.band_constant <= BAND_LIMIT,
        sandwich_ok: report.sandwich_holds(BAND_LIMIT),
        report,
    }
}

/// Matched SGD pairs `alpha1 beta1 = alpha2 beta2` in {2, 2 sqrt 2, 4}, plus a
/// control whose product is 25% short.
pub fn theorem_sgd() -> Result<TheoremReport, RunError> {
    let problem = reference_problem();
    let eta = 0.9 * problem.max_theorem_lr();
    let samples = vec![THEOREM_PHASE_SAMPLES; THEOREM_PHASES];
    let sgd = OptimizerFamily::Sgd;
    let sched = |alpha: f64, beta: f64, samples: Vec<u64>| {
        ScheduleSpec::new(eta, 1.0, alpha, beta, samples, sgd).map_err(other)
    };
    let pairs_def = [
        ((SQRT_2, SQRT_2), (2.0, 1.0)),
        ((2.0, SQRT_2), (2.0 * SQRT_2, 1.0)),
        ((2.0, 2.0), (4.0, 1.0)),
    ];
    let mut pairs = Vec::new();
    for ((a1, b1), (a2, b2)) in pairs_def {
        let a = sched(a1, b1, samples.clone())?;
        let b = sched(a2, b2, samples.clone())?;
        let report = compare_procedures(&problem, &a, &b, sgd, 1.01)?;
        pairs.push(pair_result(format!("({a1:.4}, {b1:.4}) vs ({a2:.4}, {b2:.4})"), report));
    }

    // alpha2 25% short of the matched 4: (3, 1) against (2, 2).
    let control_samples: Vec<u64> = (0..THEOREM_PHASES as u32).map(|k| THEOREM_PHASE_SAMPLES << k).collect();
    let a = sched(3.0, 1.0, control_samples.clone())?;
    let b = sched(2.0, 2.0, control_samples)?;
    let opts = ComparisonOptions {
        enforce_product: false,
        ..ComparisonOptions::default()
    };
    let report = compare_procedures_with(&problem, &a, &b, sgd, &opts)?;
    let control = ControlResult {
        label: "(3, 1) vs (2, 2)".to_string(),
        drift: report.drift,
        detected: report.drift >= DRIFT_LIMIT,
        report,
    };
    let max_decomposition_error = pairs
        .iter()
        .map(|p| p.report.max_decomposition_error)
        .fold(control.report.max_decomposition_error, f64::max);
    let pass = pairs.iter().all(|p| p.band_ok && p.sandwich_ok) && control.detected;
    Ok(TheoremReport {
        eta,
        phases: THEOREM_PHASES,
        phase_samples: THEOREM_PHASE_SAMPLES,
        pairs,
        control,
        max_decomposition_error,
        pass,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CorollaryReport {
    pub label: String,
    pub base_lr: f64,
    pub effective_lr: f64,
    pub report: EquivalenceReport,
    pub band_ok: bool,
    pub min_dominance_a: Option<f64>,
    pub min_dominance_b: Option<f64>,
    pub pass: bool,
}

/// Base NSGD learning rate whose variance-dominated effective rate is
/// `0.9 * max_theorem_lr` at batch 1.
pub fn nsgd_reference_lr(problem: &ProblemInstance) -> f64 {
    0.9 * problem.max_theorem_lr() * (problem.noise_variance() * problem.spectrum().trace()).sqrt()
}

/// NSGD `(sqrt 2, 2)` against `(2, 1)`: both have `alpha sqrt(beta) = 2`.
pub fn corollary_nsgd() -> Result<CorollaryReport, RunError> {
    let problem = reference_problem();
    let eta = nsgd_reference_lr(&problem);
    let samples = vec![THEOREM_PHASE_SAMPLES; THEOREM_PHASES];
    let nsgd = OptimizerFamily::Nsgd;
    let a = ScheduleSpec::new(eta, 1.0, SQRT_2, 2.0, samples.clone(), nsgd).map_err(other)?;
    let b = ScheduleSpec::new(eta, 1.0, 2.0, 1.0, samples, nsgd).map_err(other)?;
    let report = compare_procedures(&problem, &a, &b, nsgd, 1.01)?;
    let band_ok = report.band_constant <= BAND_LIMIT;
    Ok(CorollaryReport {
        label: "(1.4142, 2) vs (2, 1)".to_string(),
        base_lr: eta,
        effective_lr: effective_lr(eta, 1.0, &problem)?,
        band_ok,
        min_dominance_a: report.a.min_dominance_ratio,
        min_dominance_b: report.b.min_dominance_ratio,
        pass: band_ok,
        report,
    })
}

// ---------------------------------------------------------------------------
// equivalence-line

#[derive(Debug, Clone, Serialize)]
pub struct LinePoint {
    pub label: String,
    pub alpha: f64,
    pub beta: f64,
    pub product: f64,
    pub guard: GuardStatus,
    pub serial_steps: u64,
    pub terminal_risk: f64,
    pub min_dominance_ratio: Option<f64>,
    pub diverged_at: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LineReport {
    pub base_lr: f64,
    pub points: Vec<LinePoint>,
}

pub struct LineRun {
    pub report: LineReport,
    pub trajectories: Vec<RiskTrajectory>,
}

/// NSGD points with `alpha sqrt(beta) = 2`, from pure decay to pure ramp.
pub fn equivalence_line_points() -> [(f64, f64); 5] {
    let p = |e: f64| 2f64.powf(e);
    [
        (2.0, 1.0),
        (p(0.75), p(0.5)),
        (p(0.5), 2.0),
        (p(0.25), p(1.5)),
        (1.0, 4.0),
    ]
}

pub fn equivalence_line() -> Result<LineRun, RunError> {
    let problem = reference_problem();
    let eta = nsgd_reference_lr(&problem);
    let samples = vec![THEOREM_PHASE_SAMPLES; THEOREM_PHASES];
    let mut points = Vec::new();
    let mut trajectories = Vec::new();
    for (i, (alpha, beta)) in equivalence_line_points().into_iter().enumerate() {
        let s = ScheduleSpec::new(eta, 1.0, alpha, beta, samples.clone(), OptimizerFamily::Nsgd).map_err(other)?;
        let traj = nsgd_evolve(&problem, &s, NsgdMode::VarianceDominated)?;
        points.push(LinePoint {
            label: format!("point{i}"),
            alpha,
            beta,
            product: s.matched_product(),
            guard: s.guard(),
            serial_steps: traj.serial_steps,
            terminal_risk: traj.terminal_risk(),
            min_dominance_ratio: traj.min_dominance_ratio,
            diverged_at: traj.diverged_at,
        });
        trajectories.push(traj);
    }
    Ok(LineRun {
        report: LineReport { base_lr: eta, points },
        trajectories,
    })
}

// ---------------------------------------------------------------------------
// divergence-demo

#[derive(Debug, Clone, Serialize)]
pub struct DivergenceReport {
    pub alpha: f64,
    pub beta: f64,
    pub guard: GuardStatus,
    pub boundary_guard: GuardStatus,
    pub per_phase_effective_lr: Vec<f64>,
    /// Consecutive effective-rate ratios; each should be `sqrt(beta) / alpha`.
    pub effective_lr_ratios: Vec<f64>,
    pub max_ratio_error: f64,
    /// Observed Assumption 1 constant in each phase after the first cut.
    pub assumption1_per_phase: Vec<f64>,
    pub assumption1_grows: bool,
    pub diverged_at: Option<u64>,
    pub max_decomposition_error: f64,
    pub pass: bool,
}

pub struct DivergenceRun {
    pub report: DivergenceReport,
    pub trajectory: RiskTrajectory,
}

pub const DIVERGENCE_PHASES: usize = 10;
pub const DIVERGENCE_STEPS_PER_PHASE: u64 = 100;

/// NSGD with `(alpha, beta) = (1, 4)` on a unit problem, run despite the
/// guard. Each phase has the same step count.
pub fn divergence_demo() -> Result<DivergenceRun, RunError> {
    let (alpha, beta) = (1.0, 4.0);
    let spectrum = Spectrum::new(vec![1.0]).map_err(other)?;
    let problem = ProblemInstance::with_deterministic_init(spectrum, 1.0, vec![1.0]).map_err(other)?;
    let eta = nsgd_reference_lr(&problem);
    let samples: Vec<u64> = (0..DIVERGENCE_PHASES as u32)
        .map(|k| DIVERGENCE_STEPS_PER_PHASE << (2 * k))
        .collect();
    let s = ScheduleSpec::new(eta, 1.0, alpha, beta, samples, OptimizerFamily::Nsgd).map_err(other)?;
    let traj = nsgd_evolve(&problem, &s, NsgdMode::VarianceDominated)?;
    let rates = effective_lr_per_phase(&problem, &s)?;
    let expected = beta.sqrt() / alpha;
    let ratios: Vec<f64> = rates.windows(2).map(|w| w[1] / w[0]).collect();
    let max_ratio_error = ratios
        .iter()
        .map(|r| (r - expected).abs() / expected)
        .fold(0.0, f64::max);
    let applied_match = traj.phases.iter().zip(&rates).all(|(p, r)| p.effective_lr == *r);

    let t0 = traj
        .first_cut_step()
        .ok_or_else(|| RunError::Other("demo has no cut".into()))?;
    let monitor = seesaw_core::equivalence::assumption1_monitor(&traj, 1.0, t0)?;
    let per_phase: Vec<f64> = monitor.per_phase.iter().skip(1).copied().collect();
    let tail = per_phase.len().saturating_sub(3);
    let assumption1_grows = per_phase.len() >= 3
        && per_phase[tail..].windows(2).all(|w| w[1] > w[0])
        && per_phase.last() > per_phase.first();

    let report = DivergenceReport {
        alpha,
        beta,
        guard: s.guard(),
        boundary_guard: check_divergence_guard(SQRT_2, 2.0, OptimizerFamily::Nsgd),
        per_phase_effective_lr: rates,
        effective_lr_ratios: ratios,
        max_ratio_error,
        assumption1_grows,
        assumption1_per_phase: per_phase,
        diverged_at: traj.diverged_at,
        max_decomposition_error: traj.max_decomposition_error,
        pass: false,
    };
    let pass = report.guard == GuardStatus::WillDiverge
        && report.boundary_guard == GuardStatus::Ok
        && report.max_ratio_error <= 1e-12
        && applied_match
        && report.assumption1_grows;
    Ok(DivergenceRun {
        report: DivergenceReport { pass, ..report },
        trajectory: traj,
    })
}

// ---------------------------------------------------------------------------
// lemma-grid (plus the two-half-steps check)

#[derive(Debug, Clone, Serialize)]
pub struct TwoHalfStepsReport {
    pub batch: f64,
    pub etas: Vec<f64>,
    pub gaps: Vec<f64>,
    /// Log-log slopes between consecutive learning rates.
    pub slopes: Vec<f64>,
    pub min_slope: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaSuiteReport {
    pub lemmas: LemmaGridReport,
    pub two_half_steps: TwoHalfStepsReport,
}

/// Gap between one `(eta, 2B)` step and two `(eta/2, B)` steps from the
/// reference problem's initial state.
pub fn two_half_steps_report() -> Result<TwoHalfStepsReport, RunError> {
    let problem = reference_problem();
    let state = StateMoments::initial(&problem);
    let batch = 4.0;
    let etas = vec![1e-2, 5e-3, 2.5e-3];
    let gaps = etas
        .iter()
        .map(|&eta| two_half_steps_gap(&state, &problem, eta, batch).map(f64::abs))
        .collect::<Result<Vec<_>, _>>()?;
    let slopes: Vec<f64> = etas
        .windows(2)
        .zip(gaps.windows(2))
        .map(|(e, g)| (g[0] / g[1]).ln() / (e[0] / e[1]).ln())
        .collect();
    let min_slope = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(TwoHalfStepsReport {
        batch,
        etas,
        gaps,
        slopes,
        min_slope,
        pass: min_slope >= 1.9,
    })
}

// ---------------------------------------------------------------------------
// ngd-cycle

#[derive(Debug, Clone, Serialize)]
pub struct NgdRow {
    pub eta: f64,
    pub h: f64,
    pub x0: f64,
    pub steps: u64,
    pub amplitude: f64,
    pub bound: f64,
    pub within: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NgdReport {
    pub rows: Vec<NgdRow>,
    pub pass: bool,
}

pub fn ngd_cycle_report() -> Result<NgdReport, RunError> {
    let x0: f64 = 1.0;
    let mut rows = Vec::new();
    for eta in [0.01, 0.1] {
        for h in [0.5, 1.0, 2.0] {
            let bound = eta * h;
            let steps = (x0 / bound).ceil() as u64 + 100;
            let c = ngd_1d_cycle(eta, h, x0, steps)?;
            rows.push(NgdRow {
                eta,
                h,
                x0,
                steps,
                amplitude: c.cycle_amplitude,
                bound,
                within: c.cycle_amplitude <= bound,
            });
        }
    }
    let pass = rows.iter().all(|r| r.within);
    Ok(NgdReport { rows, pass })
}
