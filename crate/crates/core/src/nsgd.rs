//! Normalized SGD: `w <- w - eta * g / sqrt(E||g||^2)`.
//!
//! The denominator is a population expectation, hence deterministic given
//! the exact state, so NSGD is SGD with a per-step learning rate
//! `eta / sqrt(E||g||^2)`. When the additive noise dominates,
//! `E||g||^2 = sigma^2 Tr(H) / B` and the rate becomes
//! `eta * sqrt(B) / (sigma * sqrt(Tr(H)))`.

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, dot, run_phases, DynamicsError, RiskTrajectory, StateMoments, StepRule};
use crate::problem::ProblemInstance;
use crate::schedules::{Phase, ScheduleSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NsgdError {
    #[error("batch size must be finite and >= 1 (got {0})")]
    BadBatch(f64),
    #[error("state has dimension {state}, problem has dimension {problem}")]
    DimensionMismatch { state: usize, problem: usize },
    #[error("expected squared gradient norm is zero")]
    ZeroTotal,
    #[error("variance-dominated reduction needs sigma^2 > 0")]
    Noiseless,
    #[error("learning rate must be finite and positive (got {0})")]
    BadLearningRate(f64),
    #[error("curvature h must be finite and positive (got {0})")]
    BadCurvature(f64),
    #[error("{steps} steps cannot reach the cycle from |x0| = {x0_abs} with step eta*h = {step}")]
    TooFewSteps { steps: u64, x0_abs: f64, step: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// `E||g||^2` split into its additive-noise, covariance and mean parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradNormBreakdown {
    /// `sigma^2 Tr(H) / B`
    pub additive_term: f64,
    /// `(2 <lambda^2, m> + Tr(H) <lambda, m>) / B`
    pub covariance_term: f64,
    /// `(1 - 1/B) <lambda^2, u^2>`
    pub mean_term: f64,
    pub total: f64,
}

pub fn expected_grad_sq_norm(
    state: &StateMoments,
    problem: &ProblemInstance,
    batch: f64,
) -> Result<GradNormBreakdown, NsgdError> {
    if !(batch.is_finite() && batch >= 1.0) {
        return Err(NsgdError::BadBatch(batch));
    }
    let d = problem.dimension();
    if state.m.len() != d || state.u.len() != d {
        return Err(NsgdError::DimensionMismatch {
            state: state.m.len(),
            problem: d,
        });
    }
    Ok(breakdown_unchecked(state, problem, batch))
}

fn breakdown_unchecked(state: &StateMoments, problem: &ProblemInstance, batch: f64) -> GradNormBreakdown {
    let lambda = problem.eigenvalues();
    let trace = problem.spectrum().trace();
    let lambda_sq_m: f64 = lambda.iter().zip(&state.m).map(|(l, m)| l * l * m).sum();
    let lambda_m = dot(lambda, &state.m);
    let lambda_sq_u_sq: f64 = lambda.iter().zip(&state.u).map(|(l, u)| (l * u) * (l * u)).sum();
    let additive_term = problem.noise_variance() * trace / batch;
    let covariance_term = (2.0 * lambda_sq_m + trace * lambda_m) / batch;
    let mean_term = (1.0 - 1.0 / batch) * lambda_sq_u_sq;
    GradNormBreakdown {
        additive_term,
        covariance_term,
        mean_term,
        total: additive_term + covariance_term + mean_term,
    }
}

/// Share of `E||g||^2` carried by the additive noise, in `[0, 1]`.
pub fn variance_dominance_ratio(breakdown: &GradNormBreakdown) -> Result<f64, NsgdError> {
    if breakdown.total.is_nan() || breakdown.total <= 0.0 {
        return Err(NsgdError::ZeroTotal);
    }
    Ok(breakdown.additive_term / breakdown.total)
}

/// `eta * sqrt(B) / (sigma * sqrt(Tr(H)))`.
pub fn effective_lr(eta: f64, batch: f64, problem: &ProblemInstance) -> Result<f64, NsgdError> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(NsgdError::BadLearningRate(eta));
    }
    if !(batch.is_finite() && batch >= 1.0) {
        return Err(NsgdError::BadBatch(batch));
    }
    let noise = problem.noise_variance();
    if noise <= 0.0 {
        return Err(NsgdError::Noiseless);
    }
    Ok(eta * batch.sqrt() / (noise.sqrt() * problem.spectrum().trace().sqrt()))
}

/// Variance-dominated effective learning rate of every phase of `schedule`.
pub fn effective_lr_per_phase(problem: &ProblemInstance, schedule: &ScheduleSpec) -> Result<Vec<f64>, NsgdError> {
    schedule
        .phases()
        .iter()
        .map(|p| effective_lr(p.lr, p.batch, problem))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NsgdMode {
    /// Denominator replaced by its additive-noise term `sigma^2 Tr(H) / B`.
    #[default]
    VarianceDominated,
    /// Full population denominator from the current exact state.
    FullDenominator,
}

impl NsgdMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NsgdMode::VarianceDominated => "variance_dominated",
            NsgdMode::FullDenominator => "full_denominator",
        }
    }
}

/// Exact NSGD risk trajectory. Each record carries the variance-dominance
/// ratio of the state it was stepped from.
pub fn nsgd_evolve(
    problem: &ProblemInstance,
    schedule: &ScheduleSpec,
    mode: NsgdMode,
) -> Result<RiskTrajectory, NsgdError> {
    schedule.validate().map_err(DynamicsError::from)?;
    dynamics::warn_on_guard(schedule);
    nsgd_evolve_phases(problem, &schedule.phases(), mode)
}

/// Exact NSGD trajectory over explicit phases (e.g. the integer-batch phases
/// used by Monte Carlo).
pub fn nsgd_evolve_phases(
    problem: &ProblemInstance,
    phases: &[Phase],
    mode: NsgdMode,
) -> Result<RiskTrajectory, NsgdError> {
    if mode == NsgdMode::VarianceDominated && problem.noise_variance() <= 0.0 {
        return Err(NsgdError::Noiseless);
    }
    let traj = run_phases(problem, phases, |state, phase| {
        let breakdown = breakdown_unchecked(state, problem, phase.batch);
        let dominance = (breakdown.total > 0.0).then(|| breakdown.additive_term / breakdown.total);
        let lr = match mode {
            NsgdMode::VarianceDominated => {
                effective_lr(phase.lr, phase.batch, problem).map_err(|_| DynamicsError::NoiselessNormalization)?
            }
            NsgdMode::FullDenominator => {
                if breakdown.total.is_nan() || breakdown.total <= 0.0 {
                    return Err(DynamicsError::ZeroDenominator { step: state.step });
                }
                phase.lr / breakdown.total.sqrt()
            }
        };
        Ok(StepRule { lr, dominance })
    })?;
    debug!(
        "nsgd ({}) minimum variance-dominance ratio: {:?}",
        mode.as_str(),
        traj.min_dominance_ratio
    );
    Ok(traj)
}

/// Every per-step learning rate `eta_k / sqrt(E||g||^2)` of a full-denominator
/// run over explicit phases, without recording decimation.
pub fn full_denominator_rates(problem: &ProblemInstance, phases: &[Phase]) -> Result<Vec<f64>, NsgdError> {
    let total: u64 = phases.iter().map(|p| p.steps).sum();
    let mut rates = Vec::with_capacity(total as usize);
    let traj = run_phases(problem, phases, |state, phase| {
        let breakdown = breakdown_unchecked(state, problem, phase.batch);
        if breakdown.total.is_nan() || breakdown.total <= 0.0 {
            return Err(DynamicsError::ZeroDenominator { step: state.step });
        }
        let lr = phase.lr / breakdown.total.sqrt();
        rates.push(lr);
        Ok(StepRule { lr, dominance: None })
    })?;
    if let Some(step) = traj.diverged_at {
        // Past overflow the exact state carries no usable denominator.
        rates.truncate(step as usize);
    }
    Ok(rates)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NgdCycle {
    /// Last (up to) four iterates.
    pub final_points: Vec<f64>,
    /// `max |x|` over `final_points`.
    pub cycle_amplitude: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Normalized gradient descent on `h x^2 / 2`: `x <- x - eta h sign(x)`.
pub fn ngd_1d_cycle(eta: f64, h: f64, x0: f64, steps: u64) -> Result<NgdCycle, NsgdError> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(NsgdError::BadLearningRate(eta));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(NsgdError::BadCurvature(h));
    }
    let step = eta * h;
    if x0 != 0.0 && (steps as f64) <= x0.abs() / step {
        return Err(NsgdError::TooFewSteps {
            steps,
            x0_abs: x0.abs(),
            step,
        });
    }
    let mut tail = std::collections::VecDeque::with_capacity(4);
    let mut x = x0;
    tail.push_back(x);
    for _ in 0..steps {
        x -= step * sign(x);
        if tail.len() == 4 {
            tail.pop_front();
        }
        tail.push_back(x);
    }
    let final_points: Vec<f64> = tail.into_iter().collect();
    let cycle_amplitude = final_points.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(NgdCycle {
        final_points,
        cycle_amplitude,
    })
}


#[cfg(test)]
mod proptests {
    use super::*;
    use crate::problem::make_power_law_spectrum;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn breakdown_is_additive(d in 1usize..10, a in 0.0f64..2.0, noise in 0.0f64..3.0,
                                 m in proptest::collection::vec(0.0f64..5.0, 10),
                                 u_frac in proptest::collection::vec(-1.0f64..1.0, 10), batch in 1.0f64..512.0) {
            let spectrum = make_power_law_spectrum(d, a, 1.0).unwrap();
            let m: Vec<f64> = m[..d].to_vec();
            let u: Vec<f64> = m.iter().zip(&u_frac).map(|(m, f)| f * m.sqrt()).collect();
            let p = ProblemInstance::new(spectrum, noise, m.clone(), u.clone()).unwrap();
            let s = StateMoments::initial(&p);
            let b = expected_grad_sq_norm(&s, &p, batch).unwrap();
            let sum = b.additive_term + b.covariance_term + b.mean_term;
            prop_assert!((b.total - sum).abs() <= 1e-12 * sum.max(f64::MIN_POSITIVE));
            prop_assert!(b.additive_term >= 0.0 && b.covariance_term >= 0.0 && b.mean_term >= 0.0);
            if noise > 0.0 {
                prop_assert!(b.total > 0.0);
            }
        }

        #[test]
        fn dominance_non_increasing_in_batch(d in 1usize..8, noise in 0.01f64..3.0, m in 0.0f64..5.0, u in 0.01f64..1.0) {
            let spectrum = make_power_law_spectrum(d, 1.0, 1.0).unwrap();
            let m0 = vec![m.max(u * u); d];
            let p = ProblemInstance::new(spectrum, noise, m0, vec![u; d]).unwrap();
            let s = StateMoments::initial(&p);
            let mut prev = f64::INFINITY;
            for b in [1.0, 4.0, 16.0, 64.0, 256.0] {
                let r = variance_dominance_ratio(&expected_grad_sq_norm(&s, &p, b).unwrap()).unwrap();
                prop_assert!(r <= prev * (1.0 + 1e-12));
                prop_assert!((0.0..=1.0).contains(&r));
                prev = r;
            }
        }

        #[test]
        fn ngd_amplitude_bounded(eta in 1e-3f64..1.0, h in 0.1f64..5.0, x0 in -10.0f64..10.0) {
            let steps = (x0.abs() / (eta * h)).ceil() as u64 + 10;
            let c = ngd_1d_cycle(eta, h, x0, steps).unwrap();
            prop_assert!(c.cycle_amplitude <= eta * h);
        }
    }
}
