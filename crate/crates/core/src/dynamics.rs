//! Exact expected-risk dynamics of mini-batch SGD.
//!
//! With `m_t` the diagonal of the iterate covariance in the eigenbasis,
//!
//! ```text
//! m_{t+1} = A m_t + (eta^2 sigma^2 / B) lambda
//! A       = I - 2 eta Lambda + eta^2 (1 + 1/B) Lambda^2 + (eta^2 / B) lambda lambda^T
//! ```
//!
//! and the excess risk is `<lambda, m_t> / 2`. The bias part evolves from
//! `m_0` without the additive term, the variance part from zero with it.

use log::warn;
use serde::Serialize;
use thiserror::Error;

use crate::problem::ProblemInstance;
use crate::schedules::{GuardStatus, Phase, ScheduleError, ScheduleSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("learning rate must be finite and positive (got {0})")]
    BadLearningRate(f64),
    #[error("batch size must be finite and >= 1 (got {0})")]
    BadBatch(f64),
    #[error("state has dimension {state}, problem has dimension {problem}")]
    DimensionMismatch { state: usize, problem: usize },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("normalized SGD denominator is zero at step {step}")]
    ZeroDenominator { step: u64 },
    #[error("variance-dominated normalization needs sigma^2 > 0")]
    NoiselessNormalization,
}

/// Number of steps recorded unconditionally; later steps are kept every 10th.
pub const FULL_RECORDING_STEPS: u64 = 1_000_000;

/// Second moments of the iterates in the eigenbasis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateMoments {
    pub m: Vec<f64>,
    pub m_bias: Vec<f64>,
    pub m_var: Vec<f64>,
    /// Mean displacement `E[w_t - w*]`.
    pub u: Vec<f64>,
    pub step: u64,
    /// Real-valued because the exact engine admits real batch sizes.
    pub samples_consumed: f64,
}

impl StateMoments {
    pub fn initial(problem: &ProblemInstance) -> Self {
        let m0 = problem.initial_second_moment().to_vec();
        Self {
            m_bias: m0.clone(),
            m_var: vec![0.0; m0.len()],
            m: m0,
            u: problem.initial_mean_displacement().to_vec(),
            step: 0,
            samples_consumed: 0.0,
        }
    }

    pub fn dimension(&self) -> usize {
        self.m.len()
    }

    /// Largest coordinatewise relative gap between `m` and `m_bias + m_var`.
    pub fn decomposition_error(&self) -> f64 {
        self.m
            .iter()
            .zip(self.m_bias.iter().zip(&self.m_var))
            .map(|(&m, (&b, &v))| {
                let scale = m.abs().max(b.abs() + v.abs());
                if scale == 0.0 {
                    0.0
                } else {
                    (m - (b + v)).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.m
            .iter()
            .chain(&self.m_bias)
            .chain(&self.m_var)
            .all(|x| x.is_finite())
    }

    fn check_dimension(&self, problem: &ProblemInstance) -> Result<(), DynamicsError> {
        let (state, problem) = (self.dimension(), problem.dimension());
        if state != problem || self.m_bias.len() != problem || self.m_var.len() != problem || self.u.len() != problem {
            return Err(DynamicsError::DimensionMismatch { state, problem });
        }
        Ok(())
    }

    /// One SGD step in place. Arguments are assumed validated.
    pub(crate) fn advance(&mut self, eta: f64, batch: f64, problem: &ProblemInstance) {
        let lambda = problem.eigenvalues();
        let noise = problem.noise_variance();
        let lm = dot(lambda, &self.m);
        let lb = dot(lambda, &self.m_bias);
        let lv = dot(lambda, &self.m_var);
        let eta_sq_over_b = eta * eta / batch;
        for (i, &l) in lambda.iter().enumerate() {
            let shrink = 1.0 - eta * l;
            let diag = shrink * shrink + eta_sq_over_b * l * l;
            let coupling = eta_sq_over_b * l;
            let additive = eta_sq_over_b * noise * l;
            self.m[i] = diag * self.m[i] + coupling * lm + additive;
            self.m_bias[i] = diag * self.m_bias[i] + coupling * lb;
            self.m_var[i] = diag * self.m_var[i] + coupling * lv + additive;
            self.u[i] *= shrink;
        }
        self.step += 1;
        self.samples_consumed += batch;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn validate_step_args(eta: f64, batch: f64) -> Result<(), DynamicsError> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(DynamicsError::BadLearningRate(eta));
    }
    if !(batch.is_finite() && batch >= 1.0) {
        return Err(DynamicsError::BadBatch(batch));
    }
    Ok(())
}

/// Apply one step of the second-moment recursion at `(eta, batch)`.
pub fn transition_apply(
    state: &StateMoments,
    eta: f64,
    batch: f64,
    problem: &ProblemInstance,
) -> Result<StateMoments, DynamicsError> {
    validate_step_args(eta, batch)?;
    state.check_dimension(problem)?;
    let mut next = state.clone();
    next.advance(eta, batch, problem);
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskBreakdown {
    pub excess: f64,
    pub bias: f64,
    pub variance: f64,
}

/// `<lambda, m> / 2` for the full, bias and variance moments.
pub fn risk(state: &StateMoments, problem: &ProblemInstance) -> Result<RiskBreakdown, DynamicsError> {
    state.check_dimension(problem)?;
    Ok(risk_unchecked(state, problem))
}

pub(crate) fn risk_unchecked(state: &StateMoments, problem: &ProblemInstance) -> RiskBreakdown {
    let lambda = problem.eigenvalues();
    RiskBreakdown {
        excess: 0.5 * dot(lambda, &state.m),
        bias: 0.5 * dot(lambda, &state.m_bias),
        variance: 0.5 * dot(lambda, &state.m_var),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskRecord {
    pub step: u64,
    pub samples: f64,
    /// Schedule learning rate of the phase that produced this state.
    pub lr: f64,
    pub batch: f64,
    /// Learning rate actually applied in the SGD recursion (differs from
    /// `lr` under normalization).
    pub effective_lr: f64,
    pub excess_risk: f64,
    pub bias_risk: f64,
    pub variance_risk: f64,
    pub dominance_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseSummary {
    pub index: usize,
    pub lr: f64,
    pub batch: f64,
    /// Applied learning rate on the first step of the phase.
    pub effective_lr: f64,
    pub steps: u64,
    pub start_step: u64,
    pub end_step: u64,
    /// Cumulative sample budget through this phase.
    pub target_samples: f64,
    /// Cumulative samples actually consumed at the end of the phase.
    pub samples_consumed: f64,
    pub end_risk: RiskBreakdown,
    /// Excess risk at exactly `target_samples`, linearly interpolated
    /// across the step that crosses it when ceil-rounding overshoots.
    pub risk_at_target: f64,
    pub interpolated: bool,
    /// Largest total risk `R = excess + sigma^2/2` seen during the phase.
    pub max_total_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskTrajectory {
    pub records: Vec<RiskRecord>,
    pub phases: Vec<PhaseSummary>,
    pub serial_steps: u64,
    pub total_samples: f64,
    pub max_decomposition_error: f64,
    pub min_dominance_ratio: Option<f64>,
    /// Step at which the moments stopped being finite, if they did.
    pub diverged_at: Option<u64>,
}

impl RiskTrajectory {
    pub fn final_record(&self) -> &RiskRecord {
        self.records.last().expect("trajectory always holds the initial record")
    }

    pub fn terminal_risk(&self) -> f64 {
        self.final_record().excess_risk
    }

    /// First step of phase 1, i.e. the first time the schedule changes.
    pub fn first_cut_step(&self) -> Option<u64> {
        self.phases.get(1).map(|p| p.start_step)
    }

    pub fn record_at_step(&self, step: u64) -> Option<&RiskRecord> {
        self.records
            .binary_search_by_key(&step, |r| r.step)
            .ok()
            .map(|i| &self.records[i])
    }
}

/// Per-step learning-rate rule: maps the current state and phase to the
/// applied learning rate and, optionally, a variance-dominance diagnostic.
pub(crate) struct StepRule {
    pub lr: f64,
    pub dominance: Option<f64>,
}

/// Drive the recursion through `phases`, recording every step (decimated to
/// every 10th past [`FULL_RECORDING_STEPS`]).
pub(crate) fn run_phases<F>(
    problem: &ProblemInstance,
    phases: &[Phase],
    mut rule: F,
) -> Result<RiskTrajectory, DynamicsError>
where
    F: FnMut(&StateMoments, &Phase) -> Result<StepRule, DynamicsError>,
{
    for p in phases {
        validate_step_args(p.lr, p.batch)?;
    }
    let noise = problem.noise_variance();
    let mut state = StateMoments::initial(problem);
    let mut current = risk_unchecked(&state, problem);
    let mut max_decomposition_error = state.decomposition_error();
    let mut min_dominance: Option<f64> = None;
    let mut diverged_at = None;

    let first = phases.first().ok_or(ScheduleError::NoPhases)?;
    let mut records = vec![RiskRecord {
        step: 0,
        samples: 0.0,
        lr: first.lr,
        batch: first.batch,
        effective_lr: first.lr,
        excess_risk: current.excess,
        bias_risk: current.bias,
        variance_risk: current.variance,
        dominance_ratio: None,
    }];

    let targets: Vec<f64> = phases
        .iter()
        .scan(0u64, |acc, p| {
            *acc += p.samples;
            Some(*acc as f64)
        })
        .collect();
    let mut at_target: Vec<Option<(f64, bool)>> = vec![None; phases.len()];
    let mut next_target = 0;

    let mut summaries = Vec::with_capacity(phases.len());
    'phases: for (k, phase) in phases.iter().enumerate() {
        let start_step = state.step;
        let mut phase_effective_lr = phase.lr;
        let mut max_total = current.excess + 0.5 * noise;
        for i in 0..phase.steps {
            let StepRule { lr, dominance } = rule(&state, phase)?;
            validate_step_args(lr, phase.batch)?;
            if i == 0 {
                phase_effective_lr = lr;
            }
            if let Some(r) = dominance {
                min_dominance = Some(min_dominance.map_or(r, |m: f64| m.min(r)));
            }
            let before_samples = state.samples_consumed;
            let before_risk = current.excess;
            state.advance(lr, phase.batch, problem);
            current = risk_unchecked(&state, problem);

            if !state.is_finite() || !current.excess.is_finite() {
                diverged_at = Some(state.step);
                warn!("moments overflowed at step {}; stopping evolution", state.step);
                break 'phases;
            }
            max_decomposition_error = max_decomposition_error.max(state.decomposition_error());
            max_total = max_total.max(current.excess + 0.5 * noise);

            while next_target < targets.len() && targets[next_target] <= state.samples_consumed * (1.0 + 1e-12) {
                let target = targets[next_target];
                let span = state.samples_consumed - before_samples;
                let frac = ((target - before_samples) / span).clamp(0.0, 1.0);
                let exact = (state.samples_consumed - target).abs() <= 1e-9 * target.max(1.0);
                let value = if exact {
                    current.excess
                } else {
                    before_risk + frac * (current.excess - before_risk)
                };
                at_target[next_target] = Some((value, !exact));
                next_target += 1;
            }

            let is_phase_end = i + 1 == phase.steps;
            if state.step <= FULL_RECORDING_STEPS || state.step.is_multiple_of(10) || is_phase_end {
                records.push(RiskRecord {
                    step: state.step,
                    samples: state.samples_consumed,
                    lr: phase.lr,
                    batch: phase.batch,
                    effective_lr: lr,
                    excess_risk: current.excess,
                    bias_risk: current.bias,
                    variance_risk: current.variance,
                    dominance_ratio: dominance,
                });
            }
        }
        let (risk_at_target, interpolated) = at_target[k].unwrap_or((current.excess, false));
        summaries.push(PhaseSummary {
            index: phase.index,
            lr: phase.lr,
            batch: phase.batch,
            effective_lr: phase_effective_lr,
            steps: phase.steps,
            start_step,
            end_step: state.step,
            target_samples: targets[k],
            samples_consumed: state.samples_consumed,
            end_risk: current,
            risk_at_target,
            interpolated,
            max_total_risk: max_total,
        });
    }

    Ok(RiskTrajectory {
        records,
        phases: summaries,
        serial_steps: state.step,
        total_samples: state.samples_consumed,
        max_decomposition_error,
        min_dominance_ratio: min_dominance,
        diverged_at,
    })
}

/// Exact SGD risk trajectory of `schedule` on `problem`.
pub fn evolve(problem: &ProblemInstance, schedule: &ScheduleSpec) -> Result<RiskTrajectory, DynamicsError> {
    schedule.validate()?;
    warn_on_guard(schedule);
    evolve_phases(problem, &schedule.phases())
}

/// Exact SGD trajectory over explicit phases (e.g. the integer-batch phases
/// used by Monte Carlo).
pub fn evolve_phases(problem: &ProblemInstance, phases: &[Phase]) -> Result<RiskTrajectory, DynamicsError> {
    run_phases(problem, phases, |_, phase| {
        Ok(StepRule {
            lr: phase.lr,
            dominance: None,
        })
    })
}

pub(crate) fn warn_on_guard(schedule: &ScheduleSpec) {
    if schedule.guard() == GuardStatus::WillDiverge {
        warn!(
            "schedule (alpha = {}, beta = {}, {}) fails the divergence guard",
            schedule.lr_decay_factor, schedule.batch_ramp_factor, schedule.optimizer_family
        );
    }
}

/// Excess-risk gap between one `(eta, 2B)` step and two `(eta/2, B)` steps
/// taken from the same state.
pub fn two_half_steps_gap(
    state: &StateMoments,
    problem: &ProblemInstance,
    eta: f64,
    batch: f64,
) -> Result<f64, DynamicsError> {
    let one = transition_apply(state, eta, 2.0 * batch, problem)?;
    let half = transition_apply(state, eta / 2.0, batch, problem)?;
    let two = transition_apply(&half, eta / 2.0, batch, problem)?;
    Ok(risk(&one, problem)?.excess - risk(&two, problem)?.excess)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{make_power_law_spectrum, Spectrum};
    use crate::schedules::OptimizerFamily;
    use approx::assert_relative_eq;

    fn state(m: Vec<f64>, u: Vec<f64>) -> StateMoments {
        StateMoments {
            m_bias: m.clone(),
            m_var: vec![0.0; m.len()],
            m,
            u,
            step: 0,
            samples_consumed: 0.0,
        }
    }

    fn scalar(noise: f64) -> ProblemInstance {
        ProblemInstance::new(Spectrum::new(vec![1.0]).unwrap(), noise, vec![1.0], vec![1.0]).unwrap()
    }

    // Straight transcription of the matrix recursion, used as an oracle.
    fn matrix_oracle(lambda: &[f64], m: &[f64], eta: f64, b: f64, noise: f64) -> Vec<f64> {
        let d = lambda.len();
        (0..d)
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..d {
                    let mut a = eta * eta / b * lambda[i] * lambda[j];
                    if i == j {
                        a += 1.0 - 2.0 * eta * lambda[i] + eta * eta * (1.0 + 1.0 / b) * lambda[i] * lambda[i];
                    }
                    acc += a * m[j];
                }
                acc + eta * eta * noise / b * lambda[i]
            })
            .collect()
    }

    #[test]
    fn zero_state_gets_additive_term() {
        let p = scalar(1.0);
        let s = transition_apply(&state(vec![0.0], vec![0.0]), 0.01, 1.0, &p).unwrap();
        assert_relative_eq!(s.m[0], 1e-4, max_relative = 1e-12);
        assert_eq!(s.u[0], 0.0);
        assert_eq!(s.step, 1);
        assert_eq!(s.samples_consumed, 1.0);
    }

    #[test]
    fn huge_batch_is_gradient_descent() {
        let p = scalar(0.0);
        let s = transition_apply(&state(vec![1.0], vec![1.0]), 0.1, 1e12, &p).unwrap();
        assert!((s.m[0] - 0.81).abs() < 1e-6);
        assert_relative_eq!(s.u[0], 0.9, max_relative = 1e-15);
    }

    #[test]
    fn two_dimensional_step_matches_matrix_form() {
        let spectrum = Spectrum::new(vec![1.0, 0.5]).unwrap();
        let p = ProblemInstance::new(spectrum, 1.0, vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let s = transition_apply(&StateMoments::initial(&p), 0.01, 8.0, &p).unwrap();
        // Hand evaluation: A = diag((1 - eta l)^2 + eta^2 l^2 / B) + (eta^2 / B) l l^T.
        // m'_1 = 0.9801 + 1.25e-5 + 1.25e-5 * 1.5 + 1.25e-5 = 0.980143750
        // m'_2 = 0.990025 + 3.125e-6 + 6.25e-6 * 1.5 + 6.25e-6 = 0.99004375
        assert_relative_eq!(s.m[0], 0.980_143_75, max_relative = 1e-14);
        assert_relative_eq!(s.m[1], 0.990_043_75, max_relative = 1e-14);
        let oracle = matrix_oracle(&[1.0, 0.5], &[1.0, 1.0], 0.01, 8.0, 1.0);
        assert_relative_eq!(s.m[0], oracle[0], max_relative = 1e-14);
        assert_relative_eq!(s.m[1], oracle[1], max_relative = 1e-14);
    }

    #[test]
    fn transition_rejects_bad_arguments() {
        let p = scalar(1.0);
        let s = StateMoments::initial(&p);
        assert_eq!(
            transition_apply(&s, 0.0, 1.0, &p),
            Err(DynamicsError::BadLearningRate(0.0))
        );
        assert_eq!(
            transition_apply(&s, -1.0, 1.0, &p),
            Err(DynamicsError::BadLearningRate(-1.0))
        );
        assert_eq!(transition_apply(&s, 0.1, 0.5, &p), Err(DynamicsError::BadBatch(0.5)));
        let wrong = state(vec![1.0, 1.0], vec![0.0, 0.0]);
        assert!(matches!(
            transition_apply(&wrong, 0.1, 1.0, &p),
            Err(DynamicsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn risk_examples() {
        let two = ProblemInstance::new(
            Spectrum::new(vec![2.0, 1.0]).unwrap(),
            0.0,
            vec![0.5, 0.5],
            vec![0.0, 0.0],
        )
        .unwrap();
        let r = risk(&StateMoments::initial(&two), &two).unwrap();
        assert_eq!(r.excess, 0.75);
        assert_eq!(r.bias, 0.75);
        assert_eq!(r.variance, 0.0);

        let s = state(vec![0.0, 0.0], vec![0.0, 0.0]);
        assert_eq!(risk(&s, &two).unwrap().excess, 0.0);

        let three = ProblemInstance::new(
            make_power_law_spectrum(3, 1.0, 1.0).unwrap(),
            0.0,
            vec![0.1, 0.2, 0.3],
            vec![0.0; 3],
        )
        .unwrap();
        let r = risk(&StateMoments::initial(&three), &three).unwrap();
        // (0.1 + 0.1 + 0.1) / 2
        assert_relative_eq!(r.excess, 0.15, max_relative = 1e-15);

        let mismatched = state(vec![1.0], vec![0.0]);
        assert!(risk(&mismatched, &two).is_err());
    }

    #[test]
    fn noiseless_optimum_stays_put() {
        let p = ProblemInstance::new(
            make_power_law_spectrum(4, 1.0, 1.0).unwrap(),
            0.0,
            vec![0.0; 4],
            vec![0.0; 4],
        )
        .unwrap();
        let sched = ScheduleSpec::new(0.002, 2.0, 2.0, 2.0, vec![100, 200, 400], OptimizerFamily::Sgd).unwrap();
        let traj = evolve(&p, &sched).unwrap();
        assert!(traj.records.iter().all(|r| r.excess_risk == 0.0));
    }

    #[test]
    fn scalar_recursion_matches_closed_form() {
        // m_t = a^t m0 + (1 - a^t) / (1 - a) * eta^2 sigma^2, a = (1 - eta)^2 + 2 eta^2.
        let p = ProblemInstance::new(Spectrum::new(vec![1.0]).unwrap(), 1.0, vec![1.0], vec![0.0]).unwrap();
        let eta: f64 = 0.01;
        let sched = ScheduleSpec::constant(eta, 1.0, vec![1000], OptimizerFamily::Sgd).unwrap();
        let traj = evolve(&p, &sched).unwrap();
        let a = (1.0 - eta).powi(2) + 2.0 * eta * eta;
        let closed = a.powi(1000) + (1.0 - a.powi(1000)) / (1.0 - a) * eta * eta;
        assert_relative_eq!(traj.terminal_risk(), 0.5 * closed, max_relative = 1e-12);
        // Scalar iteration done outside the engine: risk_1000 = 0.002538072202995144.
        assert_relative_eq!(traj.terminal_risk(), 0.002_538_072_202_995_144, max_relative = 1e-13);
        assert_eq!(traj.serial_steps, 1000);
        assert_eq!(traj.records.len(), 1001);
    }

    #[test]
    fn identical_schedules_identical_trajectories() {
        let p =
            ProblemInstance::with_deterministic_init(make_power_law_spectrum(8, 1.0, 1.0).unwrap(), 0.5, vec![1.0; 8])
                .unwrap();
        let sched = ScheduleSpec::new(0.001, 1.0, 2.0, 1.0, vec![500, 500], OptimizerFamily::Sgd).unwrap();
        assert_eq!(evolve(&p, &sched).unwrap(), evolve(&p, &sched).unwrap());
    }

    #[test]
    fn phase_accounting_with_uneven_division() {
        let p = scalar(1.0);
        let sched = ScheduleSpec::new(0.01, 3.0, 1.0, 1.0, vec![10, 10], OptimizerFamily::Sgd).unwrap();
        let traj = evolve(&p, &sched).unwrap();
        // ceil(10 / 3) = 4 steps per phase, 12 samples each.
        assert_eq!(traj.serial_steps, 8);
        assert_eq!(traj.total_samples, 24.0);
        assert_eq!(traj.phases[0].samples_consumed, 12.0);
        assert!(traj.phases[0].interpolated);
        // Target 10 lies 1/3 of the way through step 4 (samples 9 -> 12).
        let r3 = traj.record_at_step(3).unwrap().excess_risk;
        let r4 = traj.record_at_step(4).unwrap().excess_risk;
        assert_relative_eq!(
            traj.phases[0].risk_at_target,
            r3 + (r4 - r3) / 3.0,
            max_relative = 1e-14
        );
        // Second target (20) is crossed during step 7 (samples 18 -> 21).
        let r6 = traj.record_at_step(6).unwrap().excess_risk;
        let r7 = traj.record_at_step(7).unwrap().excess_risk;
        assert_relative_eq!(
            traj.phases[1].risk_at_target,
            r6 + (r7 - r6) * 2.0 / 3.0,
            max_relative = 1e-14
        );
        assert_eq!(traj.first_cut_step(), Some(4));
    }

    #[test]
    fn samples_advance_by_batch() {
        let p = scalar(1.0);
        let sched = ScheduleSpec::new(0.01, 2.0, 1.0, 2.0, vec![8, 16], OptimizerFamily::Sgd).unwrap();
        let traj = evolve(&p, &sched).unwrap();
        for w in traj.records.windows(2) {
            assert_eq!(w[1].samples - w[0].samples, w[1].batch);
        }
        assert!(!traj.phases[0].interpolated);
    }

    #[test]
    fn gap_shrinks_quadratically() {
        let p = ProblemInstance::new(
            make_power_law_spectrum(2, 1.0, 1.0).unwrap(),
            1.0,
            vec![1.0, 1.0],
            vec![0.0, 0.0],
        )
        .unwrap();
        let s = StateMoments::initial(&p);
        let g1 = two_half_steps_gap(&s, &p, 1e-2, 4.0).unwrap().abs();
        let g2 = two_half_steps_gap(&s, &p, 5e-3, 4.0).unwrap().abs();
        let slope = (g1 / g2).log2();
        assert!(slope > 1.9, "slope {slope}");
    }

    #[test]
    fn divergence_is_detected() {
        let p = scalar(1.0);
        let sched = ScheduleSpec::constant(3.0, 1.0, vec![10_000], OptimizerFamily::Sgd).unwrap();
        let traj = evolve(&p, &sched).unwrap();
        assert!(traj.diverged_at.is_some());
        assert!(traj.records.iter().all(|r| r.excess_risk.is_finite()));
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use crate::problem::make_power_law_spectrum;
    use crate::schedules::OptimizerFamily;
    use proptest::prelude::*;

    fn problem(d: usize, a: f64, noise: f64, m0: f64) -> ProblemInstance {
        ProblemInstance::with_deterministic_init(make_power_law_spectrum(d, a, 1.0).unwrap(), noise, vec![m0; d])
            .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn decomposition_holds(d in 1usize..10, a in 0.0f64..2.5, noise in 0.0f64..3.0, m0 in 0.0f64..5.0,
                               lr_frac in 0.05f64..1.0, batch in 1.0f64..64.0, alpha in 1.0f64..3.0, beta in 1.0f64..3.0) {
            let p = problem(d, a, noise, m0);
            let lr = lr_frac * p.max_theorem_lr();
            let sched = ScheduleSpec::new(lr, batch, alpha, beta, vec![2000, 2000, 2000], OptimizerFamily::Sgd).unwrap();
            let traj = evolve(&p, &sched).unwrap();
            prop_assert!(traj.max_decomposition_error <= 1e-12);
            for r in &traj.records {
                let sum = r.bias_risk + r.variance_risk;
                prop_assert!((r.excess_risk - sum).abs() <= 1e-12 * r.excess_risk.abs().max(sum.abs()).max(f64::MIN_POSITIVE));
                prop_assert!(r.variance_risk >= 0.0 && r.bias_risk >= 0.0);
            }
        }

        #[test]
        fn second_moment_dominates_squared_mean(d in 1usize..6, noise in 0.0f64..2.0, m0 in 0.0f64..4.0, lr_frac in 0.1f64..1.0) {
            let p = problem(d, 1.0, noise, m0);
            let mut s = StateMoments::initial(&p);
            for _ in 0..500 {
                s = transition_apply(&s, lr_frac * 0.01, 2.0, &p).unwrap();
                for (m, u) in s.m.iter().zip(&s.u) {
                    prop_assert!(*m >= u * u * (1.0 - 1e-12));
                }
            }
        }

        #[test]
        fn noise_enters_linearly(d in 1usize..8, a in 0.0f64..2.0, noise in 0.1f64..4.0, lr_frac in 0.1f64..1.0) {
            let p1 = problem(d, a, noise, 1.0);
            let p2 = p1.with_noise_variance(2.0 * noise).unwrap();
            let lr = lr_frac * p1.max_theorem_lr();
            let sched = ScheduleSpec::new(lr, 2.0, 2.0, 1.0, vec![1000, 1000], OptimizerFamily::Sgd).unwrap();
            let t1 = evolve(&p1, &sched).unwrap();
            let t2 = evolve(&p2, &sched).unwrap();
            for (r1, r2) in t1.records.iter().zip(&t2.records).skip(1) {
                prop_assert!((r2.variance_risk / r1.variance_risk - 2.0).abs() <= 1e-10);
                prop_assert_eq!(r1.bias_risk.to_bits(), r2.bias_risk.to_bits());
            }
        }

        #[test]
        fn covariance_rescaling_invariance(d in 1usize..8, a in 0.0f64..2.0, c in 0.1f64..10.0, lr_frac in 0.1f64..1.0) {
            let base = make_power_law_spectrum(d, a, 1.0).unwrap();
            let scaled = make_power_law_spectrum(d, a, c).unwrap();
            let m0 = vec![1.0; d];
            let p1 = ProblemInstance::with_deterministic_init(base, 1.0, m0.clone()).unwrap();
            let p2 = ProblemInstance::with_deterministic_init(scaled, c, m0).unwrap();
            let lr = lr_frac * p1.max_theorem_lr();
            let s1 = ScheduleSpec::new(lr, 3.0, 2.0, 2.0, vec![600, 600], OptimizerFamily::Sgd).unwrap();
            let s2 = ScheduleSpec::new(lr / c, 3.0, 2.0, 2.0, vec![600, 600], OptimizerFamily::Sgd).unwrap();
            let mut a1 = StateMoments::initial(&p1);
            let mut a2 = StateMoments::initial(&p2);
            for phase in s1.phases().iter().zip(s2.phases()) {
                for _ in 0..phase.0.steps {
                    a1 = transition_apply(&a1, phase.0.lr, phase.0.batch, &p1).unwrap();
                    a2 = transition_apply(&a2, phase.1.lr, phase.1.batch, &p2).unwrap();
                    for (x, y) in a1.m.iter().zip(&a2.m) {
                        prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1e-300));
                    }
                }
            }
            let r1 = risk(&a1, &p1).unwrap().excess;
            let r2 = risk(&a2, &p2).unwrap().excess;
            prop_assert!((r2 / r1 - c).abs() <= 1e-10 * c);
        }

        #[test]
        fn large_batch_limit(d in 1usize..6, m in 0.0f64..3.0, lr in 0.001f64..0.2) {
            let p = problem(d, 1.0, 1.0, m);
            let s = StateMoments::initial(&p);
            let next = transition_apply(&s, lr, 1e12, &p).unwrap();
            for (i, l) in p.eigenvalues().iter().enumerate() {
                let gd = (1.0 - lr * l).powi(2) * s.m[i];
                prop_assert!((next.m[i] - gd).abs() <= 1e-6);
            }
        }
    }
}
