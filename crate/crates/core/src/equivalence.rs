//! Phase-by-phase comparison of two schedules, the Assumption 1 monitor and
//! numeric checks of the two spectral inequalities behind the equivalence
//! argument.
//!
//! Ratios compare excess risk at equal cumulative sample counts. The
//! Assumption 1 monitor uses total risk, `excess + sigma^2 / 2`.

use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{evolve, DynamicsError, RiskTrajectory};
use crate::nsgd::{self, nsgd_evolve, NsgdError, NsgdMode};
use crate::problem::{default_spectra, max_theorem_lr, ProblemInstance, Spectrum};
use crate::schedules::{GuardStatus, OptimizerFamily, ScheduleError, ScheduleSpec};

/// Relative tolerance on matched products and learning-rate bounds.
const PRODUCT_TOL: f64 = 1e-9;
const LR_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EquivalenceError {
    #[error("matched products differ: {a} vs {b}")]
    ProductMismatch { a: f64, b: f64 },
    #[error("schedules differ in per-phase sample budgets")]
    SampleBudgetMismatch,
    #[error("schedule {which} is declared {declared} but compared as {family}")]
    FamilyMismatch {
        which: char,
        declared: OptimizerFamily,
        family: OptimizerFamily,
    },
    #[error("schedule {0} fails the divergence guard")]
    Guard(char),
    #[error("learning rate {lr} of schedule {which} exceeds the admissible {max}")]
    LearningRateTooLarge { which: char, lr: f64, max: f64 },
    #[error("lr_inflation must be finite and >= 1 (got {0})")]
    BadInflation(f64),
    #[error("sigma must be finite and positive (got {0})")]
    BadSigma(f64),
    #[error("trajectory ends at step {last} but the first cut is at step {first_cut}")]
    TrajectoryTooShort { last: u64, first_cut: u64 },
    #[error("first cut step must be positive")]
    ZeroFirstCut,
    #[error("lemma precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Nsgd(#[from] NsgdError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonOptions {
    /// Uniform learning-rate factor applied to schedule B for the lower side
    /// of the sandwich; `1.0` skips the inflated run.
    pub lr_inflation: f64,
    pub nsgd_mode: NsgdMode,
    /// Run schedules that fail the divergence guard.
    pub allow_divergent: bool,
    /// Reject schedule pairs whose products differ. Negative controls turn
    /// this off.
    pub enforce_product: bool,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        Self {
            lr_inflation: 1.01,
            nsgd_mode: NsgdMode::VarianceDominated,
            allow_divergent: false,
            enforce_product: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseComparison {
    pub phase: usize,
    pub samples: f64,
    pub risk_a: f64,
    pub risk_b: f64,
    /// `risk_a / risk_b`
    pub ratio: f64,
    /// Excess risk of B with every learning rate multiplied by `lr_inflation`.
    pub risk_b_inflated: Option<f64>,
    /// Whether either step grid overshot the phase's sample target, so the
    /// risk there was interpolated.
    pub interpolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleSide {
    pub alpha: f64,
    pub beta: f64,
    pub product: f64,
    pub guard: GuardStatus,
    pub serial_steps: u64,
    pub terminal_risk: f64,
    pub assumption1: Option<Assumption1Report>,
    pub min_dominance_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub family: OptimizerFamily,
    pub lr_inflation: f64,
    pub product_matched: bool,
    pub a: ScheduleSide,
    pub b: ScheduleSide,
    pub phases: Vec<PhaseComparison>,
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Smallest `C` with every ratio in `[1/C, C]`.
    pub band_constant: f64,
    /// `ratio_max / ratio_min`
    pub ratio_spread: f64,
    /// Last-phase ratio over first-phase ratio.
    pub drift: f64,
    /// Smallest `C` with `risk_b_inflated <= C risk_a` and `risk_a <= C risk_b`
    /// at every phase.
    pub sandwich_constant: Option<f64>,
    pub max_decomposition_error: f64,
}

impl EquivalenceReport {
    /// Both sides of the sandwich hold at every phase with constant `c`.
    pub fn sandwich_holds(&self, c: f64) -> bool {
        self.phases
            .iter()
            .all(|p| p.risk_a <= c * p.risk_b && p.risk_b_inflated.is_none_or(|inflated| inflated <= c * p.risk_a))
    }
}

/// Compare two schedules phase by phase with default options and the given
/// learning-rate inflation.
pub fn compare_procedures(
    problem: &ProblemInstance,
    a: &ScheduleSpec,
    b: &ScheduleSpec,
    family: OptimizerFamily,
    lr_inflation: f64,
) -> Result<EquivalenceReport, EquivalenceError> {
    let options = ComparisonOptions {
        lr_inflation,
        ..ComparisonOptions::default()
    };
    compare_procedures_with(problem, a, b, family, &options)
}

/// First-phase SGD-equivalent learning rate. Full-denominator NSGD rates only
/// fall below the variance-dominated one, so that bound covers both modes.
fn base_effective_lr(
    problem: &ProblemInstance,
    s: &ScheduleSpec,
    family: OptimizerFamily,
) -> Result<f64, EquivalenceError> {
    Ok(match family {
        OptimizerFamily::Sgd => s.base_lr,
        OptimizerFamily::Nsgd => nsgd::effective_lr(s.base_lr, s.base_batch, problem)?,
    })
}

fn run(
    problem: &ProblemInstance,
    s: &ScheduleSpec,
    family: OptimizerFamily,
    mode: NsgdMode,
) -> Result<RiskTrajectory, EquivalenceError> {
    Ok(match family {
        OptimizerFamily::Sgd => evolve(problem, s)?,
        OptimizerFamily::Nsgd => nsgd_evolve(problem, s, mode)?,
    })
}

fn side(
    problem: &ProblemInstance,
    s: &ScheduleSpec,
    family: OptimizerFamily,
    traj: &RiskTrajectory,
) -> Result<ScheduleSide, EquivalenceError> {
    let assumption1 = match traj.first_cut_step() {
        Some(t0) if t0 > 0 && problem.noise_variance() > 0.0 && traj.final_record().step > t0 => {
            Some(assumption1_monitor(traj, problem.noise_variance().sqrt(), t0)?)
        }
        _ => None,
    };
    Ok(ScheduleSide {
        alpha: s.lr_decay_factor,
        beta: s.batch_ramp_factor,
        product: family.matched_product(s.lr_decay_factor, s.batch_ramp_factor),
        guard: crate::schedules::check_divergence_guard(s.lr_decay_factor, s.batch_ramp_factor, family),
        serial_steps: traj.serial_steps,
        terminal_risk: traj.terminal_risk(),
        assumption1,
        min_dominance_ratio: traj.min_dominance_ratio,
    })
}

pub fn compare_procedures_with(
    problem: &ProblemInstance,
    a: &ScheduleSpec,
    b: &ScheduleSpec,
    family: OptimizerFamily,
    options: &ComparisonOptions,
) -> Result<EquivalenceReport, EquivalenceError> {
    a.validate()?;
    b.validate()?;
    if !(options.lr_inflation.is_finite() && options.lr_inflation >= 1.0) {
        return Err(EquivalenceError::BadInflation(options.lr_inflation));
    }
    for (which, s) in [('A', a), ('B', b)] {
        if s.optimizer_family != family {
            return Err(EquivalenceError::FamilyMismatch {
                which,
                declared: s.optimizer_family,
                family,
            });
        }
    }
    if a.phase_samples != b.phase_samples {
        return Err(EquivalenceError::SampleBudgetMismatch);
    }
    let (pa, pb) = (a.matched_product(), b.matched_product());
    let product_matched = (pa - pb).abs() <= PRODUCT_TOL * pa.abs().max(pb.abs());
    if options.enforce_product && !product_matched {
        return Err(EquivalenceError::ProductMismatch { a: pa, b: pb });
    }
    let max_lr = problem.max_theorem_lr();
    for (which, s) in [('A', a), ('B', b)] {
        if !options.allow_divergent && s.guard() == GuardStatus::WillDiverge {
            return Err(EquivalenceError::Guard(which));
        }
        let lr = base_effective_lr(problem, s, family)?;
        if lr > max_lr * (1.0 + LR_TOL) {
            return Err(EquivalenceError::LearningRateTooLarge { which, lr, max: max_lr });
        }
    }

    let ta = run(problem, a, family, options.nsgd_mode)?;
    let tb = if a == b {
        ta.clone()
    } else {
        run(problem, b, family, options.nsgd_mode)?
    };
    let inflated = if options.lr_inflation > 1.0 {
        Some(run(
            problem,
            &b.with_lr_scaled(options.lr_inflation)?,
            family,
            options.nsgd_mode,
        )?)
    } else {
        None
    };

    let phases: Vec<PhaseComparison> = ta
        .phases
        .iter()
        .zip(&tb.phases)
        .enumerate()
        .map(|(k, (x, y))| PhaseComparison {
            phase: k,
            samples: x.target_samples,
            risk_a: x.risk_at_target,
            risk_b: y.risk_at_target,
            ratio: x.risk_at_target / y.risk_at_target,
            risk_b_inflated: inflated
                .as_ref()
                .and_then(|t| t.phases.get(k))
                .map(|p| p.risk_at_target),
            interpolated: x.interpolated || y.interpolated,
        })
        .collect();

    let ratio_min = phases.iter().map(|p| p.ratio).fold(f64::INFINITY, f64::min);
    let ratio_max = phases.iter().map(|p| p.ratio).fold(f64::NEG_INFINITY, f64::max);
    let drift = match (phases.first(), phases.last()) {
        (Some(f), Some(l)) => l.ratio / f.ratio,
        _ => f64::NAN,
    };
    let sandwich_constant = inflated.as_ref().map(|_| {
        phases.iter().fold(0.0f64, |c, p| {
            let upper = p.risk_a / p.risk_b;
            let lower = p.risk_b_inflated.map_or(0.0, |r| r / p.risk_a);
            c.max(upper).max(lower)
        })
    });
    let mut max_decomposition_error = ta.max_decomposition_error.max(tb.max_decomposition_error);
    if let Some(t) = &inflated {
        max_decomposition_error = max_decomposition_error.max(t.max_decomposition_error);
    }

    Ok(EquivalenceReport {
        family,
        lr_inflation: options.lr_inflation,
        product_matched,
        a: side(problem, a, family, &ta)?,
        b: side(problem, b, family, &tb)?,
        ratio_min,
        ratio_max,
        band_constant: ratio_max.max(1.0 / ratio_min),
        ratio_spread: ratio_max / ratio_min,
        drift,
        sandwich_constant,
        phases,
        max_decomposition_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption1Report {
    /// `max_{t > t0} (excess(t) + sigma^2 / 2) / sigma^2`, or 0 when the
    /// excess risk vanishes identically past `t0`.
    pub observed_c: f64,
    pub trivially_satisfied: bool,
    pub first_cut_step: u64,
    /// Observed constant restricted to each phase (0 for phases ending at or
    /// before `t0`).
    pub per_phase: Vec<f64>,
}

impl Assumption1Report {
    pub fn exceeds(&self, threshold: f64) -> bool {
        self.observed_c > threshold
    }
}

/// Observed Assumption 1 constant of a trajectory past its first cut.
pub fn assumption1_monitor(
    traj: &RiskTrajectory,
    sigma: f64,
    first_cut_step: u64,
) -> Result<Assumption1Report, EquivalenceError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(EquivalenceError::BadSigma(sigma));
    }
    if first_cut_step == 0 {
        return Err(EquivalenceError::ZeroFirstCut);
    }
    let last = traj.final_record().step;
    if last <= first_cut_step {
        return Err(EquivalenceError::TrajectoryTooShort {
            last,
            first_cut: first_cut_step,
        });
    }
    let noise = sigma * sigma;
    let mut per_phase = vec![0.0f64; traj.phases.len()];
    let mut observed = 0.0f64;
    let mut all_zero = true;
    let mut k = 0;
    for r in traj.records.iter().filter(|r| r.step > first_cut_step) {
        while k + 1 < traj.phases.len() && r.step > traj.phases[k].end_step {
            k += 1;
        }
        all_zero &= r.excess_risk == 0.0;
        let c = (r.excess_risk + 0.5 * noise) / noise;
        observed = observed.max(c);
        if let Some(slot) = per_phase.get_mut(k) {
            *slot = slot.max(c);
        }
    }
    if all_zero {
        return Ok(Assumption1Report {
            observed_c: 0.0,
            trivially_satisfied: true,
            first_cut_step,
            per_phase: vec![0.0; traj.phases.len()],
        });
    }
    Ok(Assumption1Report {
        observed_c: observed,
        trivially_satisfied: false,
        first_cut_step,
        per_phase,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvLambdaMargin {
    pub index: usize,
    pub lower: f64,
    pub middle: f64,
    pub upper: f64,
    /// `(middle - lower) / lower`
    pub lower_margin: f64,
    /// `(upper - middle) / upper`
    pub upper_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvLambdaCheck {
    pub pass: bool,
    pub min_margin: f64,
    pub coordinates: Vec<InvLambdaMargin>,
}

fn check_lr(eta: f64, spectrum: &Spectrum) -> Result<(), EquivalenceError> {
    let max = max_theorem_lr(spectrum);
    if !(eta.is_finite() && eta > 0.0) || eta > max * (1.0 + LR_TOL) {
        return Err(EquivalenceError::Precondition(format!(
            "eta = {eta} outside (0, {max}]"
        )));
    }
    Ok(())
}

/// `alpha^k / eta >= lambda / (1 - (1 - eta lambda / alpha^k)^2) >= alpha^k / (2 eta)`,
/// coordinatewise.
pub fn check_lemma_inv_lambda(
    eta: f64,
    alpha: f64,
    k: u32,
    spectrum: &Spectrum,
) -> Result<InvLambdaCheck, EquivalenceError> {
    check_lr(eta, spectrum)?;
    if !(alpha.is_finite() && alpha >= 1.0) {
        return Err(EquivalenceError::Precondition(format!("alpha = {alpha} < 1")));
    }
    let scale = alpha.powi(k as i32);
    let upper = scale / eta;
    let lower = scale / (2.0 * eta);
    let coordinates: Vec<InvLambdaMargin> = spectrum
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(index, &l)| {
            // 1 - (1 - x)^2 = x (2 - x), without the cancellation.
            let x = eta * l / scale;
            let middle = l / (x * (2.0 - x));
            InvLambdaMargin {
                index,
                lower,
                middle,
                upper,
                lower_margin: (middle - lower) / lower,
                upper_margin: (upper - middle) / upper,
            }
        })
        .collect();
    let min_margin = coordinates
        .iter()
        .map(|c| c.lower_margin.min(c.upper_margin))
        .fold(f64::INFINITY, f64::min);
    Ok(InvLambdaCheck {
        pass: min_margin >= 0.0,
        min_margin,
        coordinates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionMargin {
    pub index: usize,
    /// Logarithms of the three diagonal entries.
    pub log_left: f64,
    pub log_middle: f64,
    pub log_right: f64,
    /// `log_middle - log_left`
    pub left_margin: f64,
    /// `log_right - log_middle`
    pub right_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionCheck {
    pub pass: bool,
    /// Middle and right expressions coincide (`k = 0`, or equal factors), so
    /// the right margin is zero by construction.
    pub right_identical: bool,
    pub min_left_margin: f64,
    pub min_right_margin: f64,
    pub coordinates: Vec<ContractionMargin>,
}

/// `(1 - 1.01 eta lambda / a2^k)^(2 b1^k) <= (1 - eta lambda / a1^k)^(2 b2^k)
/// <= (1 - eta lambda / a2^k)^(2 b1^k)`, coordinatewise, compared as logs.
pub fn check_lemma_contractions(
    eta: f64,
    alpha1: f64,
    alpha2: f64,
    beta1: f64,
    beta2: f64,
    k: u32,
    spectrum: &Spectrum,
) -> Result<ContractionCheck, EquivalenceError> {
    check_lr(eta, spectrum)?;
    for (name, v) in [
        ("alpha1", alpha1),
        ("alpha2", alpha2),
        ("beta1", beta1),
        ("beta2", beta2),
    ] {
        if !(v.is_finite() && v >= 1.0) {
            return Err(EquivalenceError::Precondition(format!("{name} = {v} < 1")));
        }
    }
    let (p1, p2) = (alpha1 * beta1, alpha2 * beta2);
    if (p1 - p2).abs() > PRODUCT_TOL * p1.max(p2) {
        return Err(EquivalenceError::Precondition(format!(
            "alpha1 beta1 = {p1} != alpha2 beta2 = {p2}"
        )));
    }
    if alpha1 > alpha2 {
        return Err(EquivalenceError::Precondition(format!(
            "alpha1 = {alpha1} > alpha2 = {alpha2}"
        )));
    }
    let k = k as i32;
    let (a1, a2) = (alpha1.powi(k), alpha2.powi(k));
    let (e1, e2) = (2.0 * beta1.powi(k), 2.0 * beta2.powi(k));
    let coordinates: Vec<ContractionMargin> = spectrum
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(index, &l)| {
            let log_left = e1 * (-1.01 * eta * l / a2).ln_1p();
            let log_middle = e2 * (-eta * l / a1).ln_1p();
            let log_right = e1 * (-eta * l / a2).ln_1p();
            ContractionMargin {
                index,
                log_left,
                log_middle,
                log_right,
                left_margin: log_middle - log_left,
                right_margin: log_right - log_middle,
            }
        })
        .collect();
    let min_left_margin = coordinates.iter().map(|c| c.left_margin).fold(f64::INFINITY, f64::min);
    let min_right_margin = coordinates.iter().map(|c| c.right_margin).fold(f64::INFINITY, f64::min);
    Ok(ContractionCheck {
        pass: min_left_margin >= 0.0 && min_right_margin >= 0.0,
        right_identical: k == 0 || (alpha1 == alpha2 && beta1 == beta2),
        min_left_margin,
        min_right_margin,
        coordinates,
    })
}

/// SGD-equivalent `(alpha, beta)` factor pairs: the admissible points of the
/// equivalence line (`alpha sqrt(beta) = 2` under NSGD, i.e.
/// `alpha / sqrt(beta)` per phase under SGD), plus `(sqrt 2, 2)` / `(2, sqrt 2)`.
pub fn lemma_factor_pairs() -> Vec<((f64, f64), (f64, f64))> {
    let s2 = std::f64::consts::SQRT_2;
    let line = [(1.0, 2.0), (s2, s2), (2.0, 1.0)];
    let mut pairs = Vec::new();
    for (i, &p) in line.iter().enumerate() {
        for &q in &line[i..] {
            pairs.push((p, q));
        }
    }
    pairs.push(((s2, 2.0), (2.0, s2)));
    pairs
}

/// Learning-rate decay factors checked by the `inv_lambda` sweep.
pub fn lemma_alphas() -> Vec<f64> {
    let mut alphas: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|e| 2f64.powf(*e)).collect();
    alphas.dedup();
    alphas
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaGridReport {
    pub inv_lambda_cases: usize,
    pub inv_lambda_failures: usize,
    pub inv_lambda_min_margin: f64,
    pub contraction_cases: usize,
    pub contraction_failures: usize,
    pub contraction_min_left_margin: f64,
    /// Smallest right margin over cases where the two sides are not
    /// identical.
    pub contraction_min_strict_right_margin: f64,
}

impl LemmaGridReport {
    pub fn pass(&self) -> bool {
        self.inv_lambda_failures == 0
            && self.contraction_failures == 0
            && self.inv_lambda_min_margin > 0.0
            && self.contraction_min_left_margin > 0.0
            && self.contraction_min_strict_right_margin > 0.0
    }
}

/// Both lemma checks over `eta in {0.25, 0.5, 1} * max_theorem_lr`, `k in 0..=6`
/// and every default spectrum.
pub fn lemma_grid() -> Result<LemmaGridReport, EquivalenceError> {
    let mut report = LemmaGridReport {
        inv_lambda_cases: 0,
        inv_lambda_failures: 0,
        inv_lambda_min_margin: f64::INFINITY,
        contraction_cases: 0,
        contraction_failures: 0,
        contraction_min_left_margin: f64::INFINITY,
        contraction_min_strict_right_margin: f64::INFINITY,
    };
    for (_, _, spectrum) in default_spectra() {
        for frac in [0.25, 0.5, 1.0] {
            let eta = frac * max_theorem_lr(&spectrum);
            for k in 0..=6u32 {
                for alpha in lemma_alphas() {
                    let c = check_lemma_inv_lambda(eta, alpha, k, &spectrum)?;
                    report.inv_lambda_cases += 1;
                    report.inv_lambda_failures += usize::from(!c.pass);
                    report.inv_lambda_min_margin = report.inv_lambda_min_margin.min(c.min_margin);
                }
                for ((a1, b1), (a2, b2)) in lemma_factor_pairs() {
                    let c = check_lemma_contractions(eta, a1, a2, b1, b2, k, &spectrum)?;
                    report.contraction_cases += 1;
                    report.contraction_failures += usize::from(!c.pass);
                    report.contraction_min_left_margin = report.contraction_min_left_margin.min(c.min_left_margin);
                    if !c.right_identical {
                        report.contraction_min_strict_right_margin =
                            report.contraction_min_strict_right_margin.min(c.min_right_margin);
                    }
                }
            }
        }
    }
    Ok(report)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use crate::problem::make_power_law_spectrum;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn inv_lambda_holds_in_precondition(d in 1usize..40, a in 0.0f64..2.5, frac in 0.01f64..1.0,
                                            alpha in 1.0f64..3.0, k in 0u32..8) {
            let s = make_power_law_spectrum(d, a, 1.0).unwrap();
            let c = check_lemma_inv_lambda(frac * max_theorem_lr(&s), alpha, k, &s).unwrap();
            prop_assert!(c.pass);
            prop_assert!(c.min_margin > 0.0);
        }

        #[test]
        fn contractions_hold_on_matched_products(d in 1usize..40, a in 0.0f64..2.5, frac in 0.01f64..1.0,
                                                 a1 in 1.0f64..2.0, ratio in 1.0f64..2.0, b2 in 1.0f64..2.0, k in 0u32..7) {
            let s = make_power_law_spectrum(d, a, 1.0).unwrap();
            let a2 = a1 * ratio;
            let b1 = b2 * ratio;
            // a1 b1 = a1 b2 ratio = a2 b2
            let c = check_lemma_contractions(frac * max_theorem_lr(&s), a1, a2, b1, b2, k, &s).unwrap();
            prop_assert!(c.pass, "{:?}", (c.min_left_margin, c.min_right_margin));
        }
    }
}
