//! Learning-rate decay versus batch-size ramp on noisy linear regression.
//!
//! Everything is expressed in the eigenbasis of the data covariance: a
//! problem is a spectrum, a noise level and the diagonal second moments of
//! the initial iterate. [`dynamics`] evolves those moments exactly,
//! [`nsgd`] layers the normalized-SGD denominator on top, [`montecarlo`]
//! samples the same process, and [`equivalence`] compares schedules phase
//! by phase.

pub mod dynamics;
pub mod equivalence;
pub mod montecarlo;
pub mod nsgd;
pub mod problem;
pub mod schedules;

pub use dynamics::{evolve, risk, transition_apply, RiskBreakdown, RiskTrajectory, StateMoments};
pub use problem::{make_power_law_spectrum, max_theorem_lr, ProblemInstance, Spectrum};
pub use schedules::{OptimizerFamily, ScheduleSpec};
