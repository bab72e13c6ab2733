//! Noisy linear regression in the eigenbasis of the data covariance.
//!
//! Inputs are `x ~ N(0, H)` and `y = <w*, x> + eps` with `eps ~ N(0, sigma^2)`.
//! Only the eigenvalues of `H` are kept; the rotation into the eigenbasis is
//! never materialized, so every vector here is indexed by eigen-direction.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("spectrum must have at least one eigenvalue")]
    EmptySpectrum,
    #[error("eigenvalue {index} is {value}; eigenvalues must be finite and strictly positive")]
    NonPositiveEigenvalue { index: usize, value: f64 },
    #[error("eigenvalues must be non-increasing (lambda_{index} = {value} > lambda_{prev_index} = {prev})", prev_index = .index - 1)]
    NotDescending { index: usize, value: f64, prev: f64 },
    #[error("power-law spectrum needs d >= 1 (got {0})")]
    ZeroDimension(usize),
    #[error("power-law scale must be finite and positive (got {0})")]
    BadScale(f64),
    #[error("power-law exponent must be finite and non-negative (got {0})")]
    BadExponent(f64),
    #[error("noise variance must be finite and non-negative (got {0})")]
    BadNoise(f64),
    #[error("{name} has length {got}, expected {expected}")]
    DimensionMismatch {
        name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("initial second moment m0[{index}] = {value} must be finite and non-negative")]
    BadSecondMoment { index: usize, value: f64 },
    #[error("initial mean u0[{index}] = {value} is not finite")]
    BadMean { index: usize, value: f64 },
    #[error("m0[{index}] = {m} is smaller than u0[{index}]^2 = {u_sq}")]
    MomentBelowSquaredMean { index: usize, m: f64, u_sq: f64 },
}

/// Eigenvalues of the data covariance, largest first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
}

impl Spectrum {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self, ProblemError> {
        if eigenvalues.is_empty() {
            return Err(ProblemError::EmptySpectrum);
        }
        for (index, &value) in eigenvalues.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(ProblemError::NonPositiveEigenvalue { index, value });
            }
            if index > 0 && value > eigenvalues[index - 1] {
                return Err(ProblemError::NotDescending {
                    index,
                    value,
                    prev: eigenvalues[index - 1],
                });
            }
        }
        Ok(Self { eigenvalues })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn dimension(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// `Tr(H^2)`, the sum of squared eigenvalues.
    pub fn trace_sq(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l * l).sum()
    }
}

/// `lambda_i = scale * i^(-exponent)` for `i = 1..=d`.
pub fn make_power_law_spectrum(d: usize, exponent: f64, scale: f64) -> Result<Spectrum, ProblemError> {
    if d == 0 {
        return Err(ProblemError::ZeroDimension(d));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(ProblemError::BadScale(scale));
    }
    if !(exponent.is_finite() && exponent >= 0.0) {
        return Err(ProblemError::BadExponent(exponent));
    }
    let eigenvalues = (1..=d).map(|i| scale * (i as f64).powf(-exponent)).collect();
    Spectrum::new(eigenvalues)
}

/// Largest learning rate admitted by the equivalence results: `0.01 / Tr(H)`.
pub fn max_theorem_lr(spectrum: &Spectrum) -> f64 {
    0.01 / spectrum.trace()
}

/// The default test spectra: power laws `i^(-a)`, `a in {0, 1, 2}`, `d in {1, 2, 8, 64}`.
pub fn default_spectra() -> Vec<(usize, f64, Spectrum)> {
    let mut out = Vec::new();
    for &a in &[0.0, 1.0, 2.0] {
        for &d in &[1usize, 2, 8, 64] {
            out.push((
                d,
                a,
                make_power_law_spectrum(d, a, 1.0).expect("valid default spectrum"),
            ));
        }
    }
    out
}

/// One noisy-linear-regression task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemInstance {
    spectrum: Spectrum,
    noise_variance: f64,
    initial_second_moment: Vec<f64>,
    initial_mean_displacement: Vec<f64>,
}

impl ProblemInstance {
    pub fn new(
        spectrum: Spectrum,
        noise_variance: f64,
        initial_second_moment: Vec<f64>,
        initial_mean_displacement: Vec<f64>,
    ) -> Result<Self, ProblemError> {
        let d = spectrum.dimension();
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(ProblemError::BadNoise(noise_variance));
        }
        if initial_second_moment.len() != d {
            return Err(ProblemError::DimensionMismatch {
                name: "m0",
                got: initial_second_moment.len(),
                expected: d,
            });
        }
        if initial_mean_displacement.len() != d {
            return Err(ProblemError::DimensionMismatch {
                name: "u0",
                got: initial_mean_displacement.len(),
                expected: d,
            });
        }
        for (index, (&m, &u)) in initial_second_moment.iter().zip(&initial_mean_displacement).enumerate() {
            if !(m.is_finite() && m >= 0.0) {
                return Err(ProblemError::BadSecondMoment { index, value: m });
            }
            if !u.is_finite() {
                return Err(ProblemError::BadMean { index, value: u });
            }
            // u0 = sqrt(m0) may square back one ulp above m0.
            let u_sq = u * u;
            if u_sq > m * (1.0 + 4.0 * f64::EPSILON) {
                return Err(ProblemError::MomentBelowSquaredMean { index, m, u_sq });
            }
        }
        Ok(Self {
            spectrum,
            noise_variance,
            initial_second_moment,
            initial_mean_displacement,
        })
    }

    /// Deterministic start: `delta_0 = sqrt(m0)` coordinatewise, so `u0^2 = m0`.
    pub fn with_deterministic_init(
        spectrum: Spectrum,
        noise_variance: f64,
        m0: Vec<f64>,
    ) -> Result<Self, ProblemError> {
        let u0 = m0.iter().map(|m| m.max(0.0).sqrt()).collect();
        Self::new(spectrum, noise_variance, m0, u0)
    }

    /// Zero-mean random start with second moment `m0`.
    pub fn with_centered_init(spectrum: Spectrum, noise_variance: f64, m0: Vec<f64>) -> Result<Self, ProblemError> {
        let u0 = vec![0.0; m0.len()];
        Self::new(spectrum, noise_variance, m0, u0)
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.spectrum.eigenvalues()
    }

    pub fn dimension(&self) -> usize {
        self.spectrum.dimension()
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn initial_second_moment(&self) -> &[f64] {
        &self.initial_second_moment
    }

    pub fn initial_mean_displacement(&self) -> &[f64] {
        &self.initial_mean_displacement
    }

    /// Same task with a different noise level.
    pub fn with_noise_variance(&self, noise_variance: f64) -> Result<Self, ProblemError> {
        Self::new(
            self.spectrum.clone(),
            noise_variance,
            self.initial_second_moment.clone(),
            self.initial_mean_displacement.clone(),
        )
    }

    pub fn max_theorem_lr(&self) -> f64 {
        max_theorem_lr(&self.spectrum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn power_law_examples() {
        let s = make_power_law_spectrum(3, 0.0, 1.0).unwrap();
        assert_eq!(s.eigenvalues(), &[1.0, 1.0, 1.0]);

        let s = make_power_law_spectrum(2, 1.0, 1.0).unwrap();
        assert_eq!(s.eigenvalues(), &[1.0, 0.5]);

        let s = make_power_law_spectrum(4, 2.0, 2.0).unwrap();
        let expected = [2.0, 0.5, 2.0 / 9.0, 0.125];
        for (a, b) in s.eigenvalues().iter().zip(expected) {
            assert_relative_eq!(*a, b, max_relative = 1e-15);
        }
    }

    #[test]
    fn power_law_rejects_bad_arguments() {
        assert_eq!(
            make_power_law_spectrum(0, 1.0, 1.0),
            Err(ProblemError::ZeroDimension(0))
        );
        assert!(matches!(
            make_power_law_spectrum(2, 1.0, 0.0),
            Err(ProblemError::BadScale(_))
        ));
        assert!(matches!(
            make_power_law_spectrum(2, 1.0, -1.0),
            Err(ProblemError::BadScale(_))
        ));
        assert!(matches!(
            make_power_law_spectrum(2, -0.5, 1.0),
            Err(ProblemError::BadExponent(_))
        ));
    }

    #[test]
    fn max_lr_examples() {
        assert_eq!(max_theorem_lr(&Spectrum::new(vec![1.0]).unwrap()), 0.01);
        assert_relative_eq!(
            max_theorem_lr(&Spectrum::new(vec![1.0, 0.5]).unwrap()),
            0.01 / 1.5,
            max_relative = 1e-15
        );
        // trace of (2, 1/2, 2/9, 1/8) is 2.847222...; 0.01 / 2.847222... = 0.003512195...
        let s = make_power_law_spectrum(4, 2.0, 2.0).unwrap();
        assert_relative_eq!(s.trace(), 2.847_222_222_222_222, max_relative = 1e-14);
        assert_relative_eq!(max_theorem_lr(&s), 0.003_512_195_121_951_22, max_relative = 1e-12);
    }

    #[test]
    fn spectrum_validation() {
        assert_eq!(Spectrum::new(vec![]), Err(ProblemError::EmptySpectrum));
        assert!(matches!(
            Spectrum::new(vec![1.0, 0.0]),
            Err(ProblemError::NonPositiveEigenvalue { index: 1, .. })
        ));
        assert!(matches!(
            Spectrum::new(vec![1.0, f64::NAN]),
            Err(ProblemError::NonPositiveEigenvalue { .. })
        ));
        assert!(matches!(
            Spectrum::new(vec![0.5, 1.0]),
            Err(ProblemError::NotDescending { index: 1, .. })
        ));
        assert!(Spectrum::new(vec![1.0, 1.0, 0.25]).is_ok());
    }

    #[test]
    fn problem_validation() {
        let s = Spectrum::new(vec![1.0, 0.5]).unwrap();
        assert!(ProblemInstance::new(s.clone(), 1.0, vec![1.0, 1.0], vec![0.5, -1.0]).is_ok());
        assert!(matches!(
            ProblemInstance::new(s.clone(), 1.0, vec![1.0], vec![0.0, 0.0]),
            Err(ProblemError::DimensionMismatch { name: "m0", .. })
        ));
        assert!(matches!(
            ProblemInstance::new(s.clone(), 1.0, vec![1.0, 0.25], vec![0.0, 0.6]),
            Err(ProblemError::MomentBelowSquaredMean { index: 1, .. })
        ));
        assert!(matches!(
            ProblemInstance::new(s.clone(), -1.0, vec![1.0, 1.0], vec![0.0, 0.0]),
            Err(ProblemError::BadNoise(_))
        ));
        // sigma^2 = 0 is allowed.
        assert!(ProblemInstance::new(s.clone(), 0.0, vec![0.0, 0.0], vec![0.0, 0.0]).is_ok());
        // sqrt round-trip must not trip the moment check.
        let m0 = vec![0.1, 0.3];
        let p = ProblemInstance::with_deterministic_init(s, 1.0, m0).unwrap();
        assert_relative_eq!(p.initial_mean_displacement()[0].powi(2), 0.1, max_relative = 1e-15);
    }

    #[test]
    fn default_spectra_cover_grid() {
        let all = default_spectra();
        assert_eq!(all.len(), 12);
        for (d, a, s) in &all {
            assert_eq!(s.dimension(), *d);
            let direct: f64 = (1..=*d).map(|i| (i as f64).powf(-a)).sum();
            assert_relative_eq!(s.trace(), direct, max_relative = 1e-14);
        }
    }
}
