//! Phase-indexed learning-rate / batch-size schedules.
//!
//! Phase `k` runs at `(eta * alpha^-k, B * beta^k)` and consumes `P_k`
//! samples. Step decay, batch ramps, constant schedules and Seesaw are all
//! special cases of the same `(alpha, beta)` pair; cosine decay enters only
//! through the step approximation in [`cosine_to_step_cuts`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("base learning rate must be finite and positive (got {0})")]
    BadLearningRate(f64),
    #[error("base batch size must be finite and >= 1 (got {0})")]
    BadBatch(f64),
    #[error("{name} must be finite and >= 1 (got {value})")]
    BadFactor { name: &'static str, value: f64 },
    #[error("schedule needs at least one phase")]
    NoPhases,
    #[error("phase {0} has a zero sample budget")]
    EmptyPhase(usize),
    #[error("decay per cut must be > 1 when cuts are present (got {0})")]
    BadDecay(f64),
    #[error("total steps must be positive")]
    ZeroTotalSteps,
    #[error("cut steps must be strictly increasing, positive and below total steps {total}: {cuts:?}")]
    BadCuts { cuts: Vec<u64>, total: u64 },
    #[error("reference batch size must be an integer to derive per-phase sample counts (got {0})")]
    NonIntegralReferenceBatch(f64),
    #[error("learning-rate scale factor must be finite and positive (got {0})")]
    BadScale(f64),
    #[error("total sample count overflows 64 bits")]
    SampleOverflow,
    #[error("alpha = {alpha} is too close to 1 for a {total_steps}-step cosine horizon")]
    TooManyCuts { alpha: f64, total_steps: u64 },
}

/// Cap on candidate cuts examined by [`cosine_to_step_cuts`].
const MAX_COSINE_CUTS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerFamily {
    Sgd,
    Nsgd,
}

impl OptimizerFamily {
    /// The quantity that must agree between two schedules on the same
    /// equivalence line: `alpha * beta` for SGD, `alpha * sqrt(beta)` for NSGD.
    pub fn matched_product(self, alpha: f64, beta: f64) -> f64 {
        match self {
            OptimizerFamily::Sgd => alpha * beta,
            OptimizerFamily::Nsgd => alpha * beta.sqrt(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerFamily::Sgd => "sgd",
            OptimizerFamily::Nsgd => "nsgd",
        }
    }
}

impl std::fmt::Display for OptimizerFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One resolved phase of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Phase {
    pub index: usize,
    pub lr: f64,
    pub batch: f64,
    /// Sample budget `P_k`.
    pub samples: u64,
    /// Optimizer steps taken in this phase, `ceil(P_k / B_k)`.
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub base_lr: f64,
    pub base_batch: f64,
    pub lr_decay_factor: f64,
    pub batch_ramp_factor: f64,
    pub phase_samples: Vec<u64>,
    pub optimizer_family: OptimizerFamily,
}

impl ScheduleSpec {
    pub fn new(
        base_lr: f64,
        base_batch: f64,
        lr_decay_factor: f64,
        batch_ramp_factor: f64,
        phase_samples: Vec<u64>,
        optimizer_family: OptimizerFamily,
    ) -> Result<Self, ScheduleError> {
        let spec = Self {
            base_lr,
            base_batch,
            lr_decay_factor,
            batch_ramp_factor,
            phase_samples,
            optimizer_family,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn constant(
        lr: f64,
        batch: f64,
        phase_samples: Vec<u64>,
        family: OptimizerFamily,
    ) -> Result<Self, ScheduleError> {
        Self::new(lr, batch, 1.0, 1.0, phase_samples, family)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(ScheduleError::BadLearningRate(self.base_lr));
        }
        if !(self.base_batch.is_finite() && self.base_batch >= 1.0) {
            return Err(ScheduleError::BadBatch(self.base_batch));
        }
        for (name, value) in [
            ("lr decay factor", self.lr_decay_factor),
            ("batch ramp factor", self.batch_ramp_factor),
        ] {
            if !(value.is_finite() && value >= 1.0) {
                return Err(ScheduleError::BadFactor { name, value });
            }
        }
        if self.phase_samples.is_empty() {
            return Err(ScheduleError::NoPhases);
        }
        if let Some(k) = self.phase_samples.iter().position(|&p| p == 0) {
            return Err(ScheduleError::EmptyPhase(k));
        }
        self.phase_samples
            .iter()
            .try_fold(0u64, |acc, &p| acc.checked_add(p))
            .ok_or(ScheduleError::SampleOverflow)?;
        Ok(())
    }

    pub fn num_phases(&self) -> usize {
        self.phase_samples.len()
    }

    pub fn phase_lr(&self, k: usize) -> f64 {
        self.base_lr * self.lr_decay_factor.powi(-(k as i32))
    }

    pub fn phase_batch(&self, k: usize) -> f64 {
        self.base_batch * self.batch_ramp_factor.powi(k as i32)
    }

    /// Phases with exact (possibly non-integer) batch sizes.
    pub fn phases(&self) -> Vec<Phase> {
        self.phase_samples
            .iter()
            .enumerate()
            .map(|(k, &samples)| {
                let batch = self.phase_batch(k);
                Phase {
                    index: k,
                    lr: self.phase_lr(k),
                    batch,
                    samples,
                    steps: phase_steps(samples, batch),
                }
            })
            .collect()
    }

    /// Phases with batch sizes rounded to the nearest integer `>= 1`, as
    /// required for sampling.
    pub fn integer_phases(&self) -> Vec<Phase> {
        self.phases()
            .into_iter()
            .map(|p| {
                let batch = integer_batch(p.batch) as f64;
                Phase {
                    batch,
                    steps: phase_steps(p.samples, batch),
                    ..p
                }
            })
            .collect()
    }

    /// The same schedule with every learning rate multiplied by `factor`.
    pub fn with_lr_scaled(&self, factor: f64) -> Result<Self, ScheduleError> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(ScheduleError::BadScale(factor));
        }
        Ok(Self {
            base_lr: self.base_lr * factor,
            ..self.clone()
        })
    }

    pub fn matched_product(&self) -> f64 {
        self.optimizer_family
            .matched_product(self.lr_decay_factor, self.batch_ramp_factor)
    }

    pub fn guard(&self) -> GuardStatus {
        check_divergence_guard(self.lr_decay_factor, self.batch_ramp_factor, self.optimizer_family)
    }

    pub fn total_samples(&self) -> u64 {
        self.phase_samples.iter().sum()
    }
}

/// `ceil(samples / batch)`, treating quotients within 1e-9 (relative) of an
/// integer as that integer so `P = n * B` never picks up a spurious step.
pub fn phase_steps(samples: u64, batch: f64) -> u64 {
    let q = samples as f64 / batch;
    let nearest = q.round();
    if (q - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as u64
    } else {
        q.ceil() as u64
    }
}

/// Nearest integer, at least 1.
pub fn integer_batch(batch: f64) -> u64 {
    (batch.round() as u64).max(1)
}

/// `sum_k ceil(P_k / B_k)`.
pub fn serial_steps(schedule: &ScheduleSpec) -> u64 {
    schedule.phases().iter().map(|p| p.steps).sum()
}

/// Steps at which a reference scheduler cuts the learning rate by `decay_per_cut`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutPlan {
    pub cut_steps: Vec<u64>,
    pub total_steps: u64,
    pub decay_per_cut: f64,
}

impl CutPlan {
    pub fn new(cut_steps: Vec<u64>, total_steps: u64, decay_per_cut: f64) -> Result<Self, ScheduleError> {
        let plan = Self {
            cut_steps,
            total_steps,
            decay_per_cut,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.total_steps == 0 {
            return Err(ScheduleError::ZeroTotalSteps);
        }
        let ordered = self.cut_steps.windows(2).all(|w| w[0] < w[1]);
        let in_range = self.cut_steps.iter().all(|&c| c > 0 && c < self.total_steps);
        if !ordered || !in_range {
            return Err(ScheduleError::BadCuts {
                cuts: self.cut_steps.clone(),
                total: self.total_steps,
            });
        }
        let alpha = self.decay_per_cut;
        let alpha_ok = if self.cut_steps.is_empty() {
            alpha.is_finite() && alpha >= 1.0
        } else {
            alpha.is_finite() && alpha > 1.0
        };
        if !alpha_ok {
            return Err(ScheduleError::BadDecay(alpha));
        }
        Ok(())
    }

    /// Step counts between consecutive cuts (first phase starts at 0, last ends at T).
    pub fn phase_lengths(&self) -> Vec<u64> {
        let mut bounds = Vec::with_capacity(self.cut_steps.len() + 2);
        bounds.push(0);
        bounds.extend_from_slice(&self.cut_steps);
        bounds.push(self.total_steps);
        bounds.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

fn reference_phase_samples(plan: &CutPlan, batch0: f64) -> Result<Vec<u64>, ScheduleError> {
    if !(batch0.is_finite() && batch0 >= 1.0) {
        return Err(ScheduleError::BadBatch(batch0));
    }
    if batch0.fract() != 0.0 {
        return Err(ScheduleError::NonIntegralReferenceBatch(batch0));
    }
    plan.phase_lengths()
        .into_iter()
        .map(|n| n.checked_mul(batch0 as u64).ok_or(ScheduleError::SampleOverflow))
        .collect()
}

/// The constant-batch step-decay run described by `plan`.
pub fn reference_from_cut_plan(
    plan: &CutPlan,
    eta0: f64,
    batch0: f64,
    family: OptimizerFamily,
) -> Result<ScheduleSpec, ScheduleError> {
    plan.validate()?;
    let samples = reference_phase_samples(plan, batch0)?;
    let decay = if plan.cut_steps.is_empty() {
        1.0
    } else {
        plan.decay_per_cut
    };
    ScheduleSpec::new(eta0, batch0, decay, 1.0, samples, family)
}

/// Seesaw: every cut by `alpha` becomes a cut by `sqrt(alpha)` plus an
/// `alpha`-fold batch increase, with per-phase samples matched to the
/// constant-batch reference.
pub fn seesaw_from_cut_plan(plan: &CutPlan, eta0: f64, batch0: f64) -> Result<ScheduleSpec, ScheduleError> {
    plan.validate()?;
    let samples = reference_phase_samples(plan, batch0)?;
    if plan.cut_steps.is_empty() {
        return ScheduleSpec::constant(eta0, batch0, samples, OptimizerFamily::Nsgd);
    }
    let alpha = plan.decay_per_cut;
    ScheduleSpec::new(eta0, batch0, alpha.sqrt(), alpha, samples, OptimizerFamily::Nsgd)
}

/// Step approximation of `eta0 * cos(pi t / 2T)`: the `k`-th cut sits where
/// the cosine has decayed to `alpha^-k`, rounded to the nearest step (ties
/// down). Cuts that round onto an earlier cut or onto step 0 are dropped.
pub fn cosine_to_step_cuts(total_steps: u64, alpha: f64) -> Result<CutPlan, ScheduleError> {
    if total_steps == 0 {
        return Err(ScheduleError::ZeroTotalSteps);
    }
    if !(alpha.is_finite() && alpha > 1.0) {
        return Err(ScheduleError::BadDecay(alpha));
    }
    let t = total_steps as f64;
    // The last cut lands where alpha^-k ~ pi / 4T.
    if (4.0 * t / PI).ln() / alpha.ln() > MAX_COSINE_CUTS {
        return Err(ScheduleError::TooManyCuts { alpha, total_steps });
    }
    let mut cuts: Vec<u64> = Vec::new();
    for k in 1.. {
        let level = alpha.powi(-k);
        let raw = (2.0 * t / PI) * level.acos();
        let rounded = round_half_down(raw);
        if rounded >= t || level == 0.0 {
            break;
        }
        let step = rounded as u64;
        if step > 0 && cuts.last().is_none_or(|&last| step > last) {
            cuts.push(step);
        }
    }
    CutPlan::new(cuts, total_steps, alpha)
}

fn round_half_down(x: f64) -> f64 {
    let floor = x.floor();
    if x - floor > 0.5 {
        floor + 1.0
    } else {
        floor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardStatus {
    Ok,
    WillDiverge,
}

/// NSGD diverges asymptotically when `alpha < sqrt(beta)` (the boundary is
/// admissible); for SGD the guard flags `alpha < beta`.
pub fn check_divergence_guard(alpha: f64, beta: f64, family: OptimizerFamily) -> GuardStatus {
    let threshold = match family {
        OptimizerFamily::Nsgd => beta.sqrt(),
        OptimizerFamily::Sgd => beta,
    };
    if alpha < threshold * (1.0 - 1e-12) {
        GuardStatus::WillDiverge
    } else {
        GuardStatus::Ok
    }
}

/// Largest serial-runtime reduction of Seesaw against cosine decay in the
/// continuous limit: `1 - 2/pi`.
pub fn theoretical_speedup_cosine() -> f64 {
    1.0 - 2.0 / PI
}

/// Serial steps of the continuous-limit ramp against a `T`-step cosine run: `2T/pi`.
pub fn cosine_equivalent_steps(total_steps: u64) -> f64 {
    2.0 * total_steps as f64 / PI
}

/// Serial steps of Seesaw built from the cosine step approximation, over `T`.
pub fn seesaw_cosine_step_ratio(total_steps: u64, alpha: f64) -> Result<f64, ScheduleError> {
    let plan = cosine_to_step_cuts(total_steps, alpha)?;
    let seesaw = seesaw_from_cut_plan(&plan, 1.0, 1.0)?;
    Ok(serial_steps(&seesaw) as f64 / total_steps as f64)
}
