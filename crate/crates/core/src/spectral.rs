//! Diagonal realization of a positive self-adjoint operator `A`.
//!
//! `A` is represented by a finite ascending list of eigenvalues; elements of
//! `H` are coefficient vectors in the matching eigenbasis. The spectral
//! measure `d‖E_λ φ‖²` becomes the point mass `|φ_n|²` at `λ_n`, so every
//! functional-calculus formula `g(A)φ` is a per-mode multiplication.
//!
//! Exponentials of large arguments are evaluated in log-magnitude space. A
//! per-mode product whose natural log exceeds [`LOG_OVERFLOW_THRESHOLD`] is
//! reported as a domain violation instead of silently turning into `inf`.

use std::fmt;
use std::ops::{Add, Sub};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Largest admissible natural log of a per-mode product.
pub const LOG_OVERFLOW_THRESHOLD: f64 = 700.0;

/// Strictly increasing, strictly positive eigenvalues of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    eigenvalues: Vec<f64>,
    label: Option<String>,
}

impl EigenSystem {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::invalid("eigensystem must contain at least one eigenvalue"));
        }
        for (n, &lambda) in eigenvalues.iter().enumerate() {
            if !lambda.is_finite() || lambda <= 0.0 {
                return Err(Error::invalid(format!(
                    "eigenvalue {n} = {lambda} is not a finite positive number"
                )));
            }
        }
        if let Some(n) = eigenvalues.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "eigenvalues must be strictly increasing (index {} = {}, index {} = {})",
                n,
                eigenvalues[n],
                n + 1,
                eigenvalues[n + 1]
            )));
        }
        Ok(Self {
            eigenvalues,
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Spectrum `λ_k = k²`, `k = 1..=n_modes`, of the 1-D Dirichlet Laplacian on `(0, π)`.
    pub fn dirichlet_laplacian(n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::invalid("dirichlet laplacian needs at least one mode"));
        }
        let eigenvalues = (1..=n_modes).map(|k| (k * k) as f64).collect();
        Ok(Self::new(eigenvalues)?.with_label(format!("dirichlet-laplacian-{n_modes}")))
    }

    /// Equally spaced spectrum `λ_k = k·spacing`, `k = 1..=n_modes`.
    pub fn arithmetic(n_modes: usize, spacing: f64) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::invalid("arithmetic spectrum needs at least one mode"));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::invalid(format!("spacing must be positive, got {spacing}")));
        }
        let eigenvalues = (1..=n_modes).map(|k| k as f64 * spacing).collect();
        Ok(Self::new(eigenvalues)?.with_label(format!("arithmetic-{n_modes}x{spacing}")))
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().expect("non-empty by construction")
    }

    pub fn check_aligned(&self, v: &SpectralVector) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: v.len(),
            });
        }
        Ok(())
    }

    /// `g(A)v`, coefficient `n` being `g(λ_n)·v_n`.
    pub fn apply(&self, g: &ScalarSymbol, v: &SpectralVector) -> Result<SpectralVector> {
        self.check_aligned(v)?;
        let coefficients = self
            .eigenvalues
            .iter()
            .zip(&v.coefficients)
            .enumerate()
            .map(|(mode, (&lambda, &c))| {
                scaled_product(g, lambda, c).map_err(|log_magnitude| Error::DomainViolation {
                    mode,
                    eigenvalue: lambda,
                    log_magnitude,
                    threshold: LOG_OVERFLOW_THRESHOLD,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SpectralVector { coefficients })
    }

    /// Whether `v ∈ D(g(A))` at working precision. A misaligned vector is never in the domain.
    pub fn domain_check(&self, g: &ScalarSymbol, v: &SpectralVector) -> bool {
        v.len() == self.len()
            && self
                .eigenvalues
                .iter()
                .zip(&v.coefficients)
                .all(|(&lambda, &c)| scaled_product(g, lambda, c).is_ok())
    }

    /// `e^{−tA}v`.
    pub fn semigroup(&self, t: f64, v: &SpectralVector) -> Result<SpectralVector> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::invalid(format!("semigroup time must be >= 0, got {t}")));
        }
        self.apply(&ScalarSymbol::Semigroup { time: t }, v)
    }
}

/// `g(λ)·v`, or the offending log-magnitude when it is not representable.
fn scaled_product(g: &ScalarSymbol, lambda: f64, v: f64) -> std::result::Result<f64, f64> {
    if v == 0.0 {
        return Ok(0.0);
    }
    let log_g = g.log_abs(lambda);
    let log_magnitude = log_g + v.abs().ln();
    if log_magnitude.is_nan() || log_magnitude > LOG_OVERFLOW_THRESHOLD {
        return Err(log_magnitude);
    }
    if log_g <= LOG_OVERFLOW_THRESHOLD {
        let product = g.value(lambda) * v;
        return if product.is_finite() {
            Ok(product)
        } else {
            Err(log_magnitude)
        };
    }
    // g(λ) alone overflows but the product does not.
    Ok(g.sign(lambda) * v.signum() * log_magnitude.exp())
}

/// Coefficients of an element of `H` in the eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralVector {
    coefficients: Vec<f64>,
}

impl SpectralVector {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if let Some(n) = coefficients.iter().position(|c| !c.is_finite()) {
            return Err(Error::invalid(format!(
                "coefficient {n} = {} is not finite",
                coefficients[n]
            )));
        }
        Ok(Self { coefficients })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            coefficients: vec![0.0; len],
        }
    }

    /// Unit vector `e_k` (zero-based `k`).
    pub fn basis(len: usize, k: usize) -> Self {
        let mut v = Self::zeros(len);
        v.coefficients[k] = 1.0;
        v
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn into_coefficients(self) -> Vec<f64> {
        self.coefficients
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn norm(&self) -> f64 {
        stable_norm(self.coefficients.iter().copied())
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            coefficients: self.coefficients.iter().map(|c| c * factor).collect(),
        }
    }

    /// Zero every coefficient whose mode fails `keep`.
    pub fn mask(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        Self {
            coefficients: self
                .coefficients
                .iter()
                .enumerate()
                .map(|(n, &c)| if keep(n) { c } else { 0.0 })
                .collect(),
        }
    }

    fn zip_with(&self, other: &Self, op: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.len(), other.len(), "spectral vectors of different length");
        Self {
            coefficients: self
                .coefficients
                .iter()
                .zip(&other.coefficients)
                .map(|(&a, &b)| op(a, b))
                .collect(),
        }
    }
}

impl Add for &SpectralVector {
    type Output = SpectralVector;
    fn add(self, rhs: &SpectralVector) -> SpectralVector {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &SpectralVector {
    type Output = SpectralVector;
    fn sub(self, rhs: &SpectralVector) -> SpectralVector {
        self.zip_with(rhs, |a, b| a - b)
    }
}

/// Euclidean norm scaled by the largest magnitude so that entries near the
/// overflow threshold do not overflow when squared.
pub(crate) fn stable_norm(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let scale = values.clone().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let sum: f64 = values.map(|x| (x / scale).powi(2)).sum();
    scale * sum.sqrt()
}

/// Scalar function `g` of the functional calculus `g(A)`.
#[derive(Clone)]
pub enum ScalarSymbol {
    /// `λ^p`
    Power { exponent: f64 },
    /// `e^{qλ}`
    Exponential { rate: f64 },
    /// `e^{−tλ}`
    Semigroup { time: f64 },
    /// `λ^p e^{qλ}`
    PowerExponential { exponent: f64, rate: f64 },
    /// Any continuous function on `[0, ∞)`.
    General(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl ScalarSymbol {
    /// The constant function `1`.
    pub fn one() -> Self {
        ScalarSymbol::Power { exponent: 0.0 }
    }

    pub fn general(g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarSymbol::General(Arc::new(g))
    }

    pub fn value(&self, lambda: f64) -> f64 {
        match *self {
            ScalarSymbol::Power { exponent } => power(lambda, exponent),
            ScalarSymbol::Exponential { rate } => (rate * lambda).exp(),
            ScalarSymbol::Semigroup { time } => (-time * lambda).exp(),
            ScalarSymbol::PowerExponential { exponent, rate } => {
                power(lambda, exponent) * (rate * lambda).exp()
            }
            ScalarSymbol::General(ref g) => g(lambda),
        }
    }

    /// `ln |g(λ)|`, computed without forming `g(λ)` for the exponential families.
    pub fn log_abs(&self, lambda: f64) -> f64 {
        match *self {
            ScalarSymbol::Power { exponent } => log_power(lambda, exponent),
            ScalarSymbol::Exponential { rate } => rate * lambda,
            ScalarSymbol::Semigroup { time } => -time * lambda,
            ScalarSymbol::PowerExponential { exponent, rate } => {
                log_power(lambda, exponent) + rate * lambda
            }
            ScalarSymbol::General(ref g) => g(lambda).abs().ln(),
        }
    }

    fn sign(&self, lambda: f64) -> f64 {
        match self {
            ScalarSymbol::General(g) => g(lambda).signum(),
            _ => 1.0,
        }
    }

    pub fn is_exponential_type(&self) -> bool {
        matches!(
            self,
            ScalarSymbol::Exponential { .. }
                | ScalarSymbol::Semigroup { .. }
                | ScalarSymbol::PowerExponential { .. }
        )
    }
}

fn power(lambda: f64, exponent: f64) -> f64 {
    if exponent == 0.0 {
        1.0
    } else {
        lambda.powf(exponent)
    }
}

fn log_power(lambda: f64, exponent: f64) -> f64 {
    if exponent == 0.0 {
        0.0
    } else {
        exponent * lambda.ln()
    }
}

impl fmt::Debug for ScalarSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarSymbol::Power { exponent } => write!(f, "Power(λ^{exponent})"),
            ScalarSymbol::Exponential { rate } => write!(f, "Exponential(e^({rate}λ))"),
            ScalarSymbol::Semigroup { time } => write!(f, "Semigroup(e^(-{time}λ))"),
            ScalarSymbol::PowerExponential { exponent, rate } => {
                write!(f, "PowerExponential(λ^{exponent} e^({rate}λ))")
            }
            ScalarSymbol::General(_) => f.write_str("General(<fn>)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec(c: &[f64]) -> SpectralVector {
        SpectralVector::new(c.to_vec()).unwrap()
    }

    #[test]
    fn norm_examples() {
        assert_eq!(vec(&[3.0, 4.0]).norm(), 5.0);
        assert_eq!(vec(&[0.0, 0.0, 0.0]).norm(), 0.0);
        assert!((vec(&[0.1, 0.001]).norm() - 0.100005).abs() < 5e-7);
    }

    #[test]
    fn norm_does_not_overflow_near_threshold() {
        let big = 1e300;
        let n = vec(&[big, big]).norm();
        assert!((n / (big * 2f64.sqrt()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn apply_examples() {
        let any = vec(&[0.3, -2.0]);
        let es = EigenSystem::new(vec![1.0, 4.0]).unwrap();
        assert_eq!(es.apply(&ScalarSymbol::Semigroup { time: 0.0 }, &any).unwrap(), any);

        let out = es
            .apply(&ScalarSymbol::Exponential { rate: 1.0 }, &vec(&[0.1, 0.001]))
            .unwrap();
        assert!((out.coefficients()[0] - 0.271_828_2).abs() < 1e-7);
        assert!((out.coefficients()[1] - 0.054_598_2).abs() < 1e-7);

        let one = EigenSystem::new(vec![1.0]).unwrap();
        let out = one.apply(&ScalarSymbol::Power { exponent: 2.0 }, &vec(&[2.0])).unwrap();
        assert_eq!(out.coefficients(), &[2.0]);
    }

    #[test]
    fn apply_reports_domain_violation() {
        let es = EigenSystem::new(vec![1000.0]).unwrap();
        let err = es
            .apply(&ScalarSymbol::Exponential { rate: 1.0 }, &vec(&[1.0]))
            .unwrap_err();
        match err {
            Error::DomainViolation { mode, log_magnitude, .. } => {
                assert_eq!(mode, 0);
                assert!((log_magnitude - 1000.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn apply_uses_log_path_when_symbol_alone_overflows() {
        // e^{800}·e^{-700} = e^{100}
        let es = EigenSystem::new(vec![800.0]).unwrap();
        let v = vec(&[(-700.0f64).exp()]);
        let out = es.apply(&ScalarSymbol::Exponential { rate: 1.0 }, &v).unwrap();
        assert!((out.coefficients()[0] / 100f64.exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn domain_check_examples() {
        let es = EigenSystem::new(vec![1000.0]).unwrap();
        let grow = ScalarSymbol::Exponential { rate: 1.0 };
        assert!(es.domain_check(&ScalarSymbol::Semigroup { time: 1.0 }, &vec(&[1e300])));
        assert!(!es.domain_check(&grow, &vec(&[1.0])));
        assert!(es.domain_check(&grow, &vec(&[0.0])));
        assert!(!es.domain_check(&grow, &vec(&[0.0, 0.0])));
    }

    #[test]
    fn general_symbol_overflow_is_a_violation() {
        let es = EigenSystem::new(vec![2.0]).unwrap();
        let g = ScalarSymbol::general(|_| f64::INFINITY);
        assert!(!es.domain_check(&g, &vec(&[1.0])));
        assert!(es.domain_check(&g, &vec(&[0.0])));
    }

    #[test]
    fn semigroup_examples() {
        let es = EigenSystem::new(vec![1.0]).unwrap();
        let out = es.semigroup(1.0, &vec(&[1.0])).unwrap();
        assert!((out.coefficients()[0] - 0.367_879_4).abs() < 1e-7);
        assert!(es.semigroup(-1.0, &vec(&[1.0])).is_err());

        let es2 = EigenSystem::new(vec![1.0, 3.0]).unwrap();
        let v = vec(&[1.0, 1.0]);
        let twice = es2.semigroup(0.5, &es2.semigroup(0.5, &v).unwrap()).unwrap();
        let once = es2.semigroup(1.0, &v).unwrap();
        for (a, b) in twice.coefficients().iter().zip(once.coefficients()) {
            assert!((a - b).abs() <= 1e-14 * b.abs());
        }
    }

    #[test]
    fn laplacian_examples() {
        assert_eq!(EigenSystem::dirichlet_laplacian(3).unwrap().eigenvalues(), &[1.0, 4.0, 9.0]);
        assert_eq!(EigenSystem::dirichlet_laplacian(1).unwrap().eigenvalues(), &[1.0]);
        assert_eq!(EigenSystem::dirichlet_laplacian(64).unwrap().max_eigenvalue(), 4096.0);
        assert!(EigenSystem::dirichlet_laplacian(0).is_err());
    }

    #[test]
    fn eigensystem_rejects_bad_spectra() {
        assert!(EigenSystem::new(vec![]).is_err());
        assert!(EigenSystem::new(vec![0.0, 1.0]).is_err());
        assert!(EigenSystem::new(vec![1.0, 1.0]).is_err());
        assert!(EigenSystem::new(vec![2.0, 1.0]).is_err());
        assert!(EigenSystem::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn misaligned_vectors_are_rejected() {
        let es = EigenSystem::new(vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            es.apply(&ScalarSymbol::one(), &vec(&[1.0])),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }
}
