//! Forward and backward mild solutions in spectral coordinates.
//!
//! The forward problem `u' + Au = f`, `u(0) = φ₀` has the mild solution
//! `u(t) = e^{−tA}φ₀ + ∫_0^t e^{−(t−s)A} f(s) ds`. Prescribing the final
//! value `u(τ) = φ_τ` instead gives `u(t) = e^{(τ−t)A} ψ(t)` with the data
//! functional `ψ(t) = φ_τ − ∫_t^τ e^{−(τ−s)A} f(s) ds`. The factor
//! `e^{(τ−t)A}` is unbounded, which is where the ill-posedness lives.

use crate::error::{Error, Result};
use crate::quadrature::{certified_trapezoid, exponential_kernel_integral, Kernel, QuadratureConfig};
use crate::spectral::{EigenSystem, ScalarSymbol, SpectralVector};

/// One additive piece of a per-mode time function.
#[derive(Debug, Clone, PartialEq)]
pub enum ModeTerm {
    Constant(f64),
    /// `coeff · e^{rate·s}`
    Exponential { coeff: f64, rate: f64 },
    /// Values at `s = j·step`, linearly interpolated in between.
    Sampled { values: Vec<f64>, step: f64 },
}

impl ModeTerm {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            ModeTerm::Constant(c) => c,
            ModeTerm::Exponential { coeff, rate } => coeff * (rate * s).exp(),
            ModeTerm::Sampled { ref values, step } => interpolate(values, step, s),
        }
    }

    fn negated(&self) -> Self {
        match self {
            ModeTerm::Constant(c) => ModeTerm::Constant(-c),
            ModeTerm::Exponential { coeff, rate } => ModeTerm::Exponential {
                coeff: -coeff,
                rate: *rate,
            },
            ModeTerm::Sampled { values, step } => ModeTerm::Sampled {
                values: values.iter().map(|v| -v).collect(),
                step: *step,
            },
        }
    }
}

fn interpolate(values: &[f64], step: f64, s: f64) -> f64 {
    let last = values.len() - 1;
    let x = (s / step).max(0.0);
    let j = (x.floor() as usize).min(last);
    if j >= last {
        return values[last];
    }
    let w = x - j as f64;
    values[j] * (1.0 - w) + values[j + 1] * w
}

/// A per-mode time function `f_n: [0, τ] → ℝ`, the sum of its terms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModeFunction {
    terms: Vec<ModeTerm>,
}

impl ModeFunction {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::from_terms(vec![ModeTerm::Constant(c)])
    }

    pub fn exponential(coeff: f64, rate: f64) -> Self {
        Self::from_terms(vec![ModeTerm::Exponential { coeff, rate }])
    }

    pub fn sampled(values: Vec<f64>, step: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("sampled mode needs at least two samples"));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::invalid(format!("sample step must be positive, got {step}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sampled mode contains non-finite values"));
        }
        Ok(Self::from_terms(vec![ModeTerm::Sampled { values, step }]))
    }

    pub fn from_terms(terms: Vec<ModeTerm>) -> Self {
        Self { terms }
    }

    pub fn terms(&self) -> &[ModeTerm] {
        &self.terms
    }

    pub fn plus(mut self, term: ModeTerm) -> Self {
        self.terms.push(term);
        self
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.terms.iter().map(|t| t.eval(s)).sum()
    }

    /// Sum of the constant terms when the function has no other kind of term.
    pub fn as_constant(&self) -> Option<f64> {
        self.terms
            .iter()
            .map(|t| match t {
                ModeTerm::Constant(c) => Some(*c),
                _ => None,
            })
            .sum()
    }

    /// `self − other`, with terms present in both cancelled exactly.
    pub fn difference(&self, other: &Self) -> Self {
        let mut remaining: Vec<Option<&ModeTerm>> = other.terms.iter().map(Some).collect();
        let mut terms = Vec::new();
        for term in &self.terms {
            match remaining.iter_mut().find(|r| **r == Some(term)) {
                Some(slot) => *slot = None,
                None => terms.push(term.clone()),
            }
        }
        terms.extend(remaining.into_iter().flatten().map(ModeTerm::negated));
        Self { terms }
    }

    fn sample_step(&self) -> Option<f64> {
        self.terms.iter().find_map(|t| match t {
            ModeTerm::Sampled { step, .. } => Some(*step),
            _ => None,
        })
    }
}

/// The non-homogeneous term `f ∈ L¹([0, τ], H)` as one time function per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTerm {
    modes: Vec<ModeFunction>,
}

impl SourceTerm {
    pub fn new(modes: Vec<ModeFunction>) -> Result<Self> {
        let mut step: Option<f64> = None;
        for mode in &modes {
            for term in &mode.terms {
                if let ModeTerm::Sampled { step: h, .. } = term {
                    match step {
                        None => step = Some(*h),
                        Some(s) if s == *h => {}
                        Some(s) => {
                            return Err(Error::invalid(format!(
                                "sampled modes must share one step ({s} vs {h})"
                            )))
                        }
                    }
                }
            }
        }
        Ok(Self { modes })
    }

    pub fn zero(n_modes: usize) -> Self {
        Self {
            modes: vec![ModeFunction::zero(); n_modes],
        }
    }

    /// Time-constant source with the given per-mode values.
    pub fn constant(values: &SpectralVector) -> Self {
        Self {
            modes: values.coefficients().iter().map(|&c| ModeFunction::constant(c)).collect(),
        }
    }

    pub fn modes(&self) -> &[ModeFunction] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.modes.iter().all(|m| m.terms.is_empty())
    }

    pub fn sample_step(&self) -> Option<f64> {
        self.modes.iter().find_map(ModeFunction::sample_step)
    }

    /// `f(s)` as a spectral coefficient list.
    pub fn eval(&self, s: f64) -> Vec<f64> {
        self.modes.iter().map(|m| m.eval(s)).collect()
    }

    /// `f + c` for a time-constant `c`, appended as separate terms.
    pub fn shifted(&self, shift: &SpectralVector) -> Self {
        assert_eq!(self.len(), shift.len(), "shift length differs from source");
        Self {
            modes: self
                .modes
                .iter()
                .zip(shift.coefficients())
                .map(|(m, &c)| m.clone().plus(ModeTerm::Constant(c)))
                .collect(),
        }
    }

    pub fn difference(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        Self::new(
            self.modes
                .iter()
                .zip(&other.modes)
                .map(|(a, b)| a.difference(b))
                .collect(),
        )
    }

    fn validate_for(&self, n_modes: usize, tau: f64) -> Result<()> {
        if self.len() != n_modes {
            return Err(Error::DimensionMismatch {
                expected: n_modes,
                found: self.len(),
            });
        }
        for (n, mode) in self.modes.iter().enumerate() {
            for term in &mode.terms {
                if let ModeTerm::Sampled { values, step } = term {
                    let end = (values.len() - 1) as f64 * step;
                    if (end - tau).abs() > 1e-9 * tau.max(1.0) {
                        return Err(Error::invalid(format!(
                            "sampled mode {n} covers [0, {end}] but tau = {tau}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Known exact solution of a manufactured problem: the forward evolution of
/// `initial_state` under `source`.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub initial_state: SpectralVector,
    pub source: SourceTerm,
}

/// `u' + Au = f` on `[0, τ)`, `u(τ) = φ_τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalValueProblem {
    pub eigensystem: EigenSystem,
    pub tau: f64,
    pub phi_tau: SpectralVector,
    pub source: SourceTerm,
    pub truth: Option<Truth>,
    pub quadrature: QuadratureConfig,
}

impl FinalValueProblem {
    pub fn new(
        eigensystem: EigenSystem,
        tau: f64,
        phi_tau: SpectralVector,
        source: SourceTerm,
    ) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::invalid(format!("tau must be positive, got {tau}")));
        }
        eigensystem.check_aligned(&phi_tau)?;
        source.validate_for(eigensystem.len(), tau)?;
        Ok(Self {
            eigensystem,
            tau,
            phi_tau,
            source,
            truth: None,
            quadrature: QuadratureConfig::default(),
        })
    }

    pub fn with_truth(mut self, truth: Truth) -> Result<Self> {
        self.eigensystem.check_aligned(&truth.initial_state)?;
        truth.source.validate_for(self.eigensystem.len(), self.tau)?;
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn with_quadrature(mut self, quadrature: QuadratureConfig) -> Self {
        self.quadrature = quadrature;
        self
    }

    /// Same operator, horizon and truth, different data `(φ̃_τ, f̃)`.
    pub fn with_data(&self, phi_tau: SpectralVector, source: SourceTerm) -> Result<Self> {
        self.eigensystem.check_aligned(&phi_tau)?;
        source.validate_for(self.eigensystem.len(), self.tau)?;
        Ok(Self {
            phi_tau,
            source,
            ..self.clone()
        })
    }

    pub fn n_modes(&self) -> usize {
        self.eigensystem.len()
    }

    /// Exact solution at `t`, when the problem carries one.
    pub fn truth_at(&self, t: f64) -> Option<Result<SpectralVector>> {
        self.truth.as_ref().map(|truth| {
            ivp_mild_solution(
                &self.eigensystem,
                &truth.initial_state,
                &truth.source,
                t,
                &self.quadrature,
            )
        })
    }

    pub(crate) fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t < self.tau) {
            return Err(Error::invalid(format!(
                "time t = {t} must lie in [0, tau) = [0, {})",
                self.tau
            )));
        }
        Ok(())
    }
}

/// `∫_a^b e^{−(H−s)λ} f_n(s) ds` for one mode function.
///
/// Constant and exponential terms use their antiderivative; sampled terms use
/// the composite trapezoid rule on the sample nodes inside `[a, b]` (with the
/// endpoints added) and fail with [`Error::QuadratureTolerance`] when the
/// half-resolution comparison disagrees.
pub fn bochner_quadrature(
    mode: &ModeFunction,
    kernel: Kernel,
    a: f64,
    b: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if !(a <= b) {
        return Err(Error::invalid(format!("integration bounds out of order: [{a}, {b}]")));
    }
    if a == b {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for term in &mode.terms {
        total += match *term {
            ModeTerm::Constant(c) => exponential_kernel_integral(c, 0.0, kernel, a, b),
            ModeTerm::Exponential { coeff, rate } => {
                exponential_kernel_integral(coeff, rate, kernel, a, b)
            }
            ModeTerm::Sampled { ref values, step } => {
                let nodes = sample_nodes(step, a, b);
                let integrand: Vec<f64> = nodes
                    .iter()
                    .map(|&s| kernel.eval(s) * interpolate(values, step, s))
                    .collect();
                certified_trapezoid(&nodes, &integrand, cfg)?
            }
        };
    }
    Ok(total)
}

fn sample_nodes(step: f64, a: f64, b: f64) -> Vec<f64> {
    let mut nodes = vec![a];
    let first = (a / step).floor() as i64 + 1;
    let mut j = first;
    loop {
        let s = j as f64 * step;
        // skip nodes within rounding distance of b
        if s >= b - 1e-12 * step {
            break;
        }
        if s > a + 1e-12 * step {
            nodes.push(s);
        }
        j += 1;
    }
    nodes.push(b);
    nodes
}

/// `∫_a^b e^{−(H−s)A} f(s) ds` for every mode.
fn kernel_integrals(
    eigensystem: &EigenSystem,
    source: &SourceTerm,
    horizon: f64,
    a: f64,
    b: f64,
    cfg: &QuadratureConfig,
) -> Result<Vec<f64>> {
    if source.len() != eigensystem.len() {
        return Err(Error::DimensionMismatch {
            expected: eigensystem.len(),
            found: source.len(),
        });
    }
    eigensystem
        .eigenvalues()
        .iter()
        .zip(source.modes())
        .map(|(&lambda, mode)| bochner_quadrature(mode, Kernel::new(lambda, horizon), a, b, cfg))
        .collect()
}

/// Forward mild solution `u(t) = e^{−tA}φ₀ + ∫_0^t e^{−(t−s)A} f(s) ds`.
pub fn ivp_mild_solution(
    eigensystem: &EigenSystem,
    phi0: &SpectralVector,
    source: &SourceTerm,
    t: f64,
    cfg: &QuadratureConfig,
) -> Result<SpectralVector> {
    let decayed = eigensystem.semigroup(t, phi0)?;
    if source.is_zero() {
        return Ok(decayed);
    }
    let forced = kernel_integrals(eigensystem, source, t, 0.0, t, cfg)?;
    SpectralVector::new(
        decayed
            .coefficients()
            .iter()
            .zip(forced)
            .map(|(d, i)| d + i)
            .collect(),
    )
}

/// `ψ(t) = φ_τ − ∫_t^τ e^{−(τ−s)A} f(s) ds` for `t ∈ [0, τ]`.
pub fn accumulate_psi(problem: &FinalValueProblem, t: f64) -> Result<SpectralVector> {
    if !(t >= 0.0 && t <= problem.tau) {
        return Err(Error::invalid(format!(
            "time t = {t} must lie in [0, tau] = [0, {}]",
            problem.tau
        )));
    }
    if problem.source.is_zero() {
        return Ok(problem.phi_tau.clone());
    }
    let integrals = kernel_integrals(
        &problem.eigensystem,
        &problem.source,
        problem.tau,
        t,
        problem.tau,
        &problem.quadrature,
    )?;
    SpectralVector::new(
        problem
            .phi_tau
            .coefficients()
            .iter()
            .zip(integrals)
            .map(|(p, i)| p - i)
            .collect(),
    )
}

/// The exact (unregularized) mild solution `u(t) = e^{(τ−t)A} ψ(t)`, `t ∈ [0, τ)`.
///
/// Fails with [`Error::DomainViolation`] when `ψ(t) ∉ D(e^{(τ−t)A})` at working precision.
pub fn fvp_mild_solution(problem: &FinalValueProblem, t: f64) -> Result<SpectralVector> {
    problem.check_time(t)?;
    let psi = accumulate_psi(problem, t)?;
    problem.eigensystem.apply(
        &ScalarSymbol::Exponential {
            rate: problem.tau - t,
        },
        &psi,
    )
}

/// Whether `u(t) = e^{(τ−t)A}φ` is a classical solution, i.e. `φ ∈ D(A e^{τA})`.
pub fn classical_solution_check(phi: &SpectralVector, eigensystem: &EigenSystem, tau: f64) -> bool {
    tau > 0.0
        && eigensystem.domain_check(
            &ScalarSymbol::PowerExponential {
                exponent: 1.0,
                rate: tau,
            },
            phi,
        )
}

/// Consistent final-value data: `φ_τ` is the forward solution from `target_u0`,
/// and the problem's truth is that same forward evolution.
pub fn manufacture_problem(
    eigensystem: EigenSystem,
    tau: f64,
    target_u0: SpectralVector,
    source: SourceTerm,
) -> Result<FinalValueProblem> {
    manufacture_problem_with(eigensystem, tau, target_u0, source, QuadratureConfig::default())
}

pub fn manufacture_problem_with(
    eigensystem: EigenSystem,
    tau: f64,
    target_u0: SpectralVector,
    source: SourceTerm,
    quadrature: QuadratureConfig,
) -> Result<FinalValueProblem> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    source.validate_for(eigensystem.len(), tau)?;
    let phi_tau = ivp_mild_solution(&eigensystem, &target_u0, &source, tau, &quadrature)?;
    FinalValueProblem::new(eigensystem, tau, phi_tau, source.clone())?
        .with_quadrature(quadrature)
        .with_truth(Truth {
            initial_state: target_u0,
            source,
        })
}
