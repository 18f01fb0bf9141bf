//! Truncated spectral and Lavrentiev regularization of the final-value problem,
//! the associated stability and error bounds, and a-priori parameter rules.
//!
//! Throughout, `H = τ − t` is the backward horizon. Truncation keeps the modes
//! with `λ_n ≤ β` of `e^{HA}ψ(t)`; Lavrentiev solves `(e^{−HA} + αI)u = ψ(t)`.
//! Both are stable: noise of size `δ` in the data norm `‖φ‖ + ‖f‖₁` grows to at
//! most `e^{Hβ}δ`, respectively `δ/α`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::evolution::{accumulate_psi, FinalValueProblem};
use crate::spectral::{stable_norm, EigenSystem, ScalarSymbol, SpectralVector, LOG_OVERFLOW_THRESHOLD};

/// Relative tolerance on `ξ_t(β)` in [`choose_beta_general`].
pub const BETA_SOLVE_TOLERANCE: f64 = 1e-12;
/// Bisection steps allowed after the bracket is found.
pub const BETA_SOLVE_MAX_ITER: usize = 200;

/// Shape of the smoothness function `h_t`.
#[derive(Clone)]
pub enum SourceFamily {
    /// `h_t(λ) = λ^p`
    Power { p: f64 },
    /// `h_t(λ) = e^{γ(τ−t)λ}`, i.e. `u(t) ∈ R(e^{−γ(τ−t)A})`.
    Exponential { gamma: f64 },
    /// Any positive, increasing, unbounded `h_t` at a fixed `t`.
    General {
        name: String,
        h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for SourceFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceFamily::Power { p } => write!(f, "Power {{ p: {p} }}"),
            SourceFamily::Exponential { gamma } => write!(f, "Exponential {{ gamma: {gamma} }}"),
            SourceFamily::General { name, .. } => write!(f, "General {{ name: {name:?} }}"),
        }
    }
}

/// `u(t) ∈ D(h_t(A))` with `‖h_t(A)u(t)‖ ≤ ρ_t`.
#[derive(Debug, Clone)]
pub struct SourceCondition {
    family: SourceFamily,
    rho: f64,
}

impl SourceCondition {
    pub fn power(p: f64, rho: f64) -> Result<Self> {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::invalid(format!("power source condition needs p > 0, got {p}")));
        }
        Self::build(SourceFamily::Power { p }, rho)
    }

    pub fn exponential(gamma: f64, rho: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid(format!(
                "exponential source condition needs gamma > 0, got {gamma}"
            )));
        }
        Self::build(SourceFamily::Exponential { gamma }, rho)
    }

    /// A user-supplied `h_t`, spot-checked for positivity and growth on a
    /// geometric ladder `λ = 2^k`, `k = −8..=16`.
    pub fn general(
        name: impl Into<String>,
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        rho: f64,
    ) -> Result<Self> {
        let ladder: Vec<f64> = (-8..=16).map(|k| 2f64.powi(k)).collect();
        let values: Vec<f64> = ladder.iter().map(|&l| h(l)).collect();
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(format!(
                "h_t({}) = {} is not finite and positive",
                ladder[i], values[i]
            )));
        }
        if let Some(i) = values.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::invalid(format!(
                "h_t is decreasing between {} and {}",
                ladder[i],
                ladder[i + 1]
            )));
        }
        if values[values.len() - 1] <= values[0] {
            return Err(Error::invalid("h_t does not grow along the check ladder"));
        }
        Self::build(
            SourceFamily::General {
                name: name.into(),
                h: Arc::new(h),
            },
            rho,
        )
    }

    fn build(family: SourceFamily, rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::invalid(format!("rho must be positive, got {rho}")));
        }
        Ok(Self { family, rho })
    }

    pub fn family(&self) -> &SourceFamily {
        &self.family
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        Self::build(self.family.clone(), rho)
    }

    pub fn exponential_gamma(&self) -> Option<f64> {
        match self.family {
            SourceFamily::Exponential { gamma } => Some(gamma),
            _ => None,
        }
    }

    /// `ln h_t(λ)` for backward horizon `τ − t`.
    pub fn log_h(&self, lambda: f64, horizon: f64) -> f64 {
        match self.family {
            SourceFamily::Power { p } => p * lambda.ln(),
            SourceFamily::Exponential { gamma } => gamma * horizon * lambda,
            SourceFamily::General { ref h, .. } => h(lambda).ln(),
        }
    }

    pub fn h(&self, lambda: f64, horizon: f64) -> f64 {
        self.log_h(lambda, horizon).exp()
    }

    /// `h_t` as a functional-calculus symbol.
    pub fn symbol(&self, horizon: f64) -> ScalarSymbol {
        match self.family {
            SourceFamily::Power { p } => ScalarSymbol::Power { exponent: p },
            SourceFamily::Exponential { gamma } => ScalarSymbol::Exponential {
                rate: gamma * horizon,
            },
            SourceFamily::General { ref h, .. } => ScalarSymbol::General(Arc::clone(h)),
        }
    }
}

/// A regularization method together with its parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegChoice {
    Truncation { beta: f64 },
    Lavrentiev { alpha: f64 },
}

impl RegChoice {
    pub fn truncation(beta: f64) -> Result<Self> {
        positive("beta", beta)?;
        Ok(RegChoice::Truncation { beta })
    }

    pub fn lavrentiev(alpha: f64) -> Result<Self> {
        positive("alpha", alpha)?;
        Ok(RegChoice::Lavrentiev { alpha })
    }

    pub fn parameter(&self) -> f64 {
        match *self {
            RegChoice::Truncation { beta } => beta,
            RegChoice::Lavrentiev { alpha } => alpha,
        }
    }

    pub fn solve(&self, problem: &FinalValueProblem, t: f64) -> Result<SpectralVector> {
        match *self {
            RegChoice::Truncation { beta } => truncated_solution(problem, t, beta),
            RegChoice::Lavrentiev { alpha } => lavrentiev_solution(problem, t, alpha),
        }
    }
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {value}")))
    }
}

/// Backward horizon `τ − t` for `t ∈ [0, τ)`.
fn horizon(t: f64, tau: f64) -> Result<f64> {
    if !(tau.is_finite() && tau > 0.0 && t >= 0.0 && t < tau) {
        return Err(Error::invalid(format!("need 0 <= t < tau, got t = {t}, tau = {tau}")));
    }
    Ok(tau - t)
}

fn check_exponent(exponent: f64) -> Result<()> {
    if exponent > LOG_OVERFLOW_THRESHOLD || exponent.is_nan() {
        return Err(Error::ParameterOverflow {
            exponent,
            threshold: LOG_OVERFLOW_THRESHOLD,
        });
    }
    Ok(())
}

/// `u_β(t)`: modes with `λ_n ≤ β` of `e^{(τ−t)A}ψ(t)`, the rest set to zero.
pub fn truncated_solution(problem: &FinalValueProblem, t: f64, beta: f64) -> Result<SpectralVector> {
    positive("beta", beta)?;
    let h = horizon(t, problem.tau)?;
    check_exponent(h * beta)?;
    let eigenvalues = problem.eigensystem.eigenvalues();
    let psi = accumulate_psi(problem, t)?.mask(|n| eigenvalues[n] <= beta);
    problem
        .eigensystem
        .apply(&ScalarSymbol::Exponential { rate: h }, &psi)
}

/// `u^L_α(t)`, the solution of `(e^{−(τ−t)A} + αI)u = ψ(t)`.
pub fn lavrentiev_solution(problem: &FinalValueProblem, t: f64, alpha: f64) -> Result<SpectralVector> {
    positive("alpha", alpha)?;
    let h = horizon(t, problem.tau)?;
    let psi = accumulate_psi(problem, t)?;
    SpectralVector::new(
        problem
            .eigensystem
            .eigenvalues()
            .iter()
            .zip(psi.coefficients())
            .map(|(&lambda, &p)| p / ((-h * lambda).exp() + alpha))
            .collect(),
    )
}

/// `e^{(τ−t)β}δ`, the worst-case noise amplification of truncation at level `β`.
pub fn stability_bound(beta: f64, t: f64, tau: f64, delta: f64) -> Result<f64> {
    positive("beta", beta)?;
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("delta must be >= 0, got {delta}")));
    }
    if !(t >= 0.0 && t <= tau) {
        return Err(Error::invalid(format!("need 0 <= t <= tau, got t = {t}, tau = {tau}")));
    }
    let exponent = (tau - t) * beta;
    check_exponent(exponent)?;
    Ok(exponent.exp() * delta)
}

/// Conservative truncation-error bound `ρ_t / h_t(β)`.
pub fn truncation_error_bound(sc: &SourceCondition, beta: f64, t: f64, tau: f64) -> Result<f64> {
    positive("beta", beta)?;
    let h = horizon(t, tau)?;
    Ok(sc.rho() * (-sc.log_h(beta, h)).exp())
}

/// `ρ_{t,β} = ‖h_t(A)(u(t) − u_β(t))‖`, the part of the source norm carried by modes above `β`.
pub fn tail_rho(problem: &FinalValueProblem, t: f64, beta: f64, sc: &SourceCondition) -> Result<f64> {
    positive("beta", beta)?;
    let h = horizon(t, problem.tau)?;
    let psi = accumulate_psi(problem, t)?;
    let mut terms = Vec::new();
    for (mode, (&lambda, &p)) in problem
        .eigensystem
        .eigenvalues()
        .iter()
        .zip(psi.coefficients())
        .enumerate()
    {
        if lambda <= beta || p == 0.0 {
            continue;
        }
        let log_magnitude = sc.log_h(lambda, h) + h * lambda + p.abs().ln();
        if log_magnitude.is_nan() || log_magnitude > LOG_OVERFLOW_THRESHOLD {
            return Err(Error::DomainViolation {
                mode,
                eigenvalue: lambda,
                log_magnitude,
                threshold: LOG_OVERFLOW_THRESHOLD,
            });
        }
        terms.push(log_magnitude.exp());
    }
    Ok(stable_norm(terms.into_iter()))
}

/// `ρ_t/h_t(β) + e^{(τ−t)β}δ`.
pub fn total_bound(sc: &SourceCondition, beta: f64, t: f64, tau: f64, delta: f64) -> Result<f64> {
    Ok(truncation_error_bound(sc, beta, t, tau)? + stability_bound(beta, t, tau, delta)?)
}

/// `β = ξ_t⁻¹(ρ_t/δ)` with `ξ_t(λ) = h_t(λ)e^{(τ−t)λ}`, which equalizes the
/// two terms of [`total_bound`].
///
/// Solved on `ln ξ_t` by doubling from `λ = 1` to bracket the root, then
/// bisecting until `ξ_t(β)` matches the target to [`BETA_SOLVE_TOLERANCE`].
pub fn choose_beta_general(sc: &SourceCondition, t: f64, tau: f64, delta: f64) -> Result<f64> {
    positive("delta", delta)?;
    let h = horizon(t, tau)?;
    let log_xi = |lambda: f64| sc.log_h(lambda, h) + h * lambda;
    let target = (sc.rho() / delta).ln();
    let at_zero = log_xi(0.0);
    if !(target > at_zero) {
        return Err(Error::NoBracket {
            target: sc.rho() / delta,
            at_zero: at_zero.exp(),
        });
    }

    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while log_xi(hi) < target {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::NoBracket {
                target: sc.rho() / delta,
                at_zero: at_zero.exp(),
            });
        }
    }

    let mut best = hi;
    let mut best_gap = (log_xi(hi) - target).exp_m1().abs();
    for _ in 0..BETA_SOLVE_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let residual = log_xi(mid) - target;
        let gap = residual.exp_m1().abs();
        if gap < best_gap {
            best = mid;
            best_gap = gap;
        }
        if gap <= BETA_SOLVE_TOLERANCE {
            break;
        }
        if residual < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Closed-form `β_t = ln(1/δ) / ((γ+1)(τ−t))` for the exponential source condition.
///
/// With this choice `e^{(τ−t)β}δ = δ^{γ/(γ+1)}` and the total error is at most
/// `(1 + ρ_t)δ^{γ/(γ+1)}`.
pub fn choose_beta_exponential(gamma: f64, t: f64, tau: f64, delta: f64) -> Result<f64> {
    positive("gamma", gamma)?;
    unit_interval("delta", delta)?;
    let h = horizon(t, tau)?;
    Ok((1.0 / delta).ln() / ((gamma + 1.0) * h))
}

/// `β = p·ln(1/δ)/(τ−t)`, making the propagated noise `e^{(τ−t)β}δ = δ^{1−p}`.
pub fn choose_beta_power_of_delta(p: f64, t: f64, tau: f64, delta: f64) -> Result<f64> {
    unit_interval("p", p)?;
    unit_interval("delta", delta)?;
    let h = horizon(t, tau)?;
    Ok(p * (1.0 / delta).ln() / h)
}

fn unit_interval(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in (0, 1), got {value}")))
    }
}

/// Balancing Lavrentiev parameter and the smoothness index actually used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LavrentievChoice {
    pub alpha: f64,
    /// `min(γ, 1)`: Lavrentiev's estimate `ρ_t α^γ` only holds up to `γ = 1`.
    pub gamma: f64,
    pub clamped: bool,
}

impl LavrentievChoice {
    /// `ρ_t α^γ + δ/α`.
    pub fn bound(&self, rho: f64, delta: f64) -> f64 {
        lavrentiev_bound(self.gamma, rho, self.alpha, delta)
    }
}

/// `ρ_t α^γ + δ/α` for `0 < γ ≤ 1`.
pub fn lavrentiev_bound(gamma: f64, rho: f64, alpha: f64, delta: f64) -> f64 {
    rho * alpha.powf(gamma.min(1.0)) + delta / alpha
}

/// `α = (δ/ρ_t)^{1/(γ+1)}` with `γ` clamped to `1`.
pub fn choose_alpha_lavrentiev(gamma: f64, rho: f64, delta: f64) -> Result<LavrentievChoice> {
    positive("gamma", gamma)?;
    positive("rho", rho)?;
    positive("delta", delta)?;
    let clamped = gamma > 1.0;
    let gamma = gamma.min(1.0);
    Ok(LavrentievChoice {
        alpha: (delta / rho).powf(1.0 / (gamma + 1.0)),
        gamma,
        clamped,
    })
}

/// `β = ln(1/α)/(τ−t)`, so that `e^{(τ−t)β}δ = δ/α`.
pub fn beta_alpha_correspondence(alpha: f64, t: f64, tau: f64) -> Result<f64> {
    unit_interval("alpha", alpha)?;
    let h = horizon(t, tau)?;
    Ok((1.0 / alpha).ln() / h)
}

/// `‖h_t(A)u(t)‖`, the smallest admissible `ρ_t` for `u(t)`.
pub fn source_condition_norm(
    eigensystem: &EigenSystem,
    u_t: &SpectralVector,
    sc: &SourceCondition,
    t: f64,
    tau: f64,
) -> Result<f64> {
    let h = horizon(t, tau)?;
    Ok(eigensystem.apply(&sc.symbol(h), u_t)?.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{manufacture_problem, SourceTerm};

    const E_INV: f64 = 0.367_879_441_171_442_3;

    fn vec(c: &[f64]) -> SpectralVector {
        SpectralVector::new(c.to_vec()).unwrap()
    }

    fn problem(eigenvalues: &[f64], phi: &[f64]) -> FinalValueProblem {
        let n = eigenvalues.len();
        FinalValueProblem::new(
            EigenSystem::new(eigenvalues.to_vec()).unwrap(),
            1.0,
            vec(phi),
            SourceTerm::zero(n),
        )
        .unwrap()
    }

    #[test]
    fn truncated_examples() {
        let p = problem(&[1.0], &[E_INV]);
        let u = truncated_solution(&p, 0.0, 2.0).unwrap();
        assert!((u.coefficients()[0] - 1.0).abs() < 1e-15);
        assert_eq!(truncated_solution(&p, 0.0, 0.5).unwrap().coefficients(), &[0.0]);

        let p = problem(&[1.0, 4.0], &[0.1, 0.001]);
        let u = truncated_solution(&p, 0.0, 2.0).unwrap();
        assert!((u.coefficients()[0] - 0.271_828_2).abs() < 1e-7);
        assert_eq!(u.coefficients()[1], 0.0);
    }

    #[test]
    fn truncation_includes_ties() {
        let p = problem(&[1.0, 4.0], &[0.1, 0.001]);
        let u = truncated_solution(&p, 0.0, 4.0).unwrap();
        assert!(u.coefficients()[1] != 0.0);
    }

    #[test]
    fn truncated_rejects_absurd_levels() {
        let p = problem(&[1.0], &[E_INV]);
        assert!(matches!(
            truncated_solution(&p, 0.0, 1e6),
            Err(Error::ParameterOverflow { .. })
        ));
        assert!(truncated_solution(&p, 1.0, 2.0).is_err());
        assert!(truncated_solution(&p, 0.0, 0.0).is_err());
    }

    #[test]
    fn lavrentiev_examples() {
        let p = problem(&[1.0], &[1.0]);
        let u = lavrentiev_solution(&p, 0.0, 0.1).unwrap();
        assert!((u.coefficients()[0] - 2.137_302_715_195_763).abs() < 1e-12);

        let u = lavrentiev_solution(&p, 0.0, 1e12).unwrap();
        assert!(u.norm() < 1e-11);

        let p = problem(&[2.0], &[0.3]);
        let u = lavrentiev_solution(&p, 0.0, 1e-300).unwrap();
        assert!((u.coefficients()[0] / (0.3 * 2f64.exp()) - 1.0).abs() < 1e-15);
        assert!(lavrentiev_solution(&p, 0.0, 0.0).is_err());
    }

    #[test]
    fn stability_examples() {
        let b = stability_bound(3.0, 0.0, 1.0, 0.01).unwrap();
        assert!((b - 0.200_855_4).abs() < 1e-7);
        assert_eq!(stability_bound(3.0, 0.0, 1.0, 0.0).unwrap(), 0.0);
        assert_eq!(stability_bound(3.0, 1.0, 1.0, 0.25).unwrap(), 0.25);
        assert!(matches!(
            stability_bound(1e6, 0.0, 1.0, 0.1),
            Err(Error::ParameterOverflow { .. })
        ));
    }

    #[test]
    fn truncation_error_bound_examples() {
        let sc = SourceCondition::exponential(1.0, 1.0).unwrap();
        let b = truncation_error_bound(&sc, 2.0, 0.0, 1.0).unwrap();
        assert!((b - 0.135_335_3).abs() < 1e-7);
        let sc = SourceCondition::power(2.0, 4.0).unwrap();
        assert!((truncation_error_bound(&sc, 2.0, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let b = truncation_error_bound(&sc, 0.1 * 1.5f64.powi(k), 0.0, 1.0).unwrap();
            assert!(b <= last);
            last = b;
        }
    }

    #[test]
    fn tail_rho_examples() {
        let sc = SourceCondition::exponential(1.0, 1.0).unwrap();
        let p = problem(&[1.0], &[(-2.0f64).exp()]);
        assert_eq!(tail_rho(&p, 0.0, 2.0, &sc).unwrap(), 0.0);
        assert!((tail_rho(&p, 0.0, 0.5, &sc).unwrap() - 1.0).abs() < 1e-15);

        let p = problem(&[1.0, 2.0, 3.0], &[0.1, 0.01, 0.001]);
        let a = tail_rho(&p, 0.0, 0.5, &sc).unwrap();
        let b = tail_rho(&p, 0.0, 1.5, &sc).unwrap();
        let c = tail_rho(&p, 0.0, 2.5, &sc).unwrap();
        assert!(a >= b && b >= c && c > 0.0);
    }

    #[test]
    fn tail_rho_reports_unsmooth_solutions() {
        let sc = SourceCondition::exponential(1.0, 1.0).unwrap();
        let p = problem(&[500.0], &[1.0]);
        assert!(matches!(
            tail_rho(&p, 0.0, 1.0, &sc),
            Err(Error::DomainViolation { .. })
        ));
    }

    #[test]
    fn total_bound_reduces_without_noise() {
        let sc = SourceCondition::exponential(1.0, 2.0).unwrap();
        assert_eq!(
            total_bound(&sc, 1.5, 0.0, 1.0, 0.0).unwrap(),
            truncation_error_bound(&sc, 1.5, 0.0, 1.0).unwrap()
        );
    }

    #[test]
    fn total_bound_balance_at_closed_form_beta() {
        let gamma = 1.5;
        let delta = 1e-5;
        let sc = SourceCondition::exponential(gamma, 1.0).unwrap();
        let beta = choose_beta_exponential(gamma, 0.0, 1.0, delta).unwrap();
        let a = truncation_error_bound(&sc, beta, 0.0, 1.0).unwrap();
        let b = stability_bound(beta, 0.0, 1.0, delta).unwrap();
        assert!(a / b <= std::f64::consts::E && b / a <= std::f64::consts::E);
    }

    #[test]
    fn total_bound_is_valley_shaped_and_bracketed() {
        let sc = SourceCondition::exponential(1.0, 1.0).unwrap();
        let delta = 1e-4;
        let betas: Vec<f64> = (0..400).map(|k| 0.05 + 0.025 * k as f64).collect();
        let values: Vec<f64> = betas
            .iter()
            .map(|&b| total_bound(&sc, b, 0.0, 1.0, delta).unwrap())
            .collect();
        let argmin = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!(values[..argmin].windows(2).all(|w| w[1] <= w[0]));
        assert!(values[argmin..].windows(2).all(|w| w[1] >= w[0]));
        let chosen = choose_beta_general(&sc, 0.0, 1.0, delta).unwrap();
        assert!(betas[argmin.saturating_sub(1)] <= chosen && chosen <= betas[argmin + 1]);
    }

    /// Newton on `λ + ln λ = c`, independent of the bisection path.
    fn newton_log_lambert(c: f64) -> f64 {
        let mut x: f64 = 1.0;
        for _ in 0..100 {
            let step = (x + x.ln() - c) / (1.0 + 1.0 / x);
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        x
    }

    #[test]
    fn choose_beta_general_lambert_point() {
        let sc = SourceCondition::general("lambda", |l| l, 1.0).unwrap();
        let delta = (-2.0f64).exp();
        let beta = choose_beta_general(&sc, 0.0, 1.0, delta).unwrap();
        let oracle = newton_log_lambert(2.0);
        assert!((oracle - 1.557_145_6).abs() < 1e-7);
        assert!((beta - oracle).abs() < 1e-12);
        let xi = beta * beta.exp();
        assert!((xi / 2f64.exp() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn choose_beta_general_grows_as_noise_shrinks() {
        let sc = SourceCondition::power(1.0, 1.0).unwrap();
        let mut last = 0.0;
        for k in 1..10 {
            let beta = choose_beta_general(&sc, 0.25, 1.0, 10f64.powi(-k)).unwrap();
            assert!(beta > last);
            last = beta;
        }
    }

    #[test]
    fn choose_beta_general_no_bracket() {
        let sc = SourceCondition::exponential(1.0, 1.0).unwrap();
        assert!(matches!(
            choose_beta_general(&sc, 0.0, 1.0, 2.0),
            Err(Error::NoBracket { .. })
        ));
    }

    #[test]
    fn closed_form_beta_examples() {
        assert!((choose_beta_exponential(1.0, 0.0, 1.0, (-4.0f64).exp()).unwrap() - 2.0).abs() < 1e-15);
        assert!((choose_beta_exponential(3.0, 0.5, 1.0, (-2.0f64).exp()).unwrap() - 1.0).abs() < 1e-15);
        for &(gamma, delta) in &[(1.0, 1e-3), (2.0, 1e-6), (0.5, 0.2)] {
            let beta = choose_beta_exponential(gamma, 0.0, 1.0, delta).unwrap();
            let noise = stability_bound(beta, 0.0, 1.0, delta).unwrap();
            let rate = delta.powf(gamma / (gamma + 1.0));
            assert!((noise / rate - 1.0).abs() < 1e-13);
        }
        assert!(choose_beta_exponential(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(choose_beta_exponential(1.0, 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn power_of_delta_examples() {
        let delta = (-2.0f64).exp();
        let beta = choose_beta_power_of_delta(0.5, 0.0, 1.0, delta).unwrap();
        assert!((beta - 1.0).abs() < 1e-15);
        assert!((beta.exp() * delta - E_INV).abs() < 1e-15);
        assert!(choose_beta_power_of_delta(1e-12, 0.0, 1.0, 0.01).unwrap() < 1e-10);
        let a = choose_beta_power_of_delta(0.5, 0.0, 1.0, 0.01).unwrap();
        let b = choose_beta_power_of_delta(0.5, 0.0, 1.0, 0.005).unwrap();
        assert!((b - a - 0.5 * 2f64.ln()).abs() < 1e-14);
        assert!(choose_beta_power_of_delta(1.0, 0.0, 1.0, 0.01).is_err());
    }

    #[test]
    fn lavrentiev_choice_examples() {
        let c = choose_alpha_lavrentiev(1.0, 1.0, 1e-4).unwrap();
        assert!((c.alpha - 0.01).abs() < 1e-15);
        assert!((c.bound(1.0, 1e-4) - 0.02).abs() < 1e-15);
        assert!(!c.clamped);

        let c = choose_alpha_lavrentiev(2.0, 1.0, 1e-4).unwrap();
        assert!(c.clamped);
        assert_eq!(c.gamma, 1.0);
        assert!((c.alpha - 0.01).abs() < 1e-15);

        let a = choose_alpha_lavrentiev(0.5, 1.0, 1e-3).unwrap().alpha;
        let b = choose_alpha_lavrentiev(0.5, 1.0, 1e-6).unwrap().alpha;
        assert!(b < a);
    }

    #[test]
    fn correspondence_examples() {
        let b = beta_alpha_correspondence((-2.0f64).exp(), 0.0, 1.0).unwrap();
        assert!((b - 2.0).abs() < 1e-15);
        let b = beta_alpha_correspondence(E_INV, 0.5, 1.0).unwrap();
        assert!((b - 2.0).abs() < 1e-15);
        let alpha = (-0.75f64 * 3.0).exp();
        let b = beta_alpha_correspondence(alpha, 0.25, 1.0).unwrap();
        assert!((b - 3.0).abs() < 1e-14);
        assert!(beta_alpha_correspondence(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn source_condition_norm_examples() {
        let es = EigenSystem::new(vec![1.0]).unwrap();
        let u = vec(&[E_INV]);
        let sc = SourceCondition::exponential(1.0, 1.0).unwrap();
        assert!((source_condition_norm(&es, &u, &sc, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let doubled = source_condition_norm(&es, &u.scale(2.0), &sc, 0.0, 1.0).unwrap();
        assert!((doubled - 2.0).abs() < 1e-15);

        let es = EigenSystem::new(vec![1.0, 4.0]).unwrap();
        let one = SourceCondition::general("one", |_| 1.0 + 1e-9, 1.0);
        assert!(one.is_err());
        let u = vec(&[3.0, 4.0]);
        let nearly_one = SourceCondition::general("nearly-one", |l| 1.0 + 1e-15 * l, 1.0).unwrap();
        assert!((source_condition_norm(&es, &u, &nearly_one, 0.0, 1.0).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn source_condition_validation() {
        assert!(SourceCondition::power(0.0, 1.0).is_err());
        assert!(SourceCondition::exponential(1.0, 0.0).is_err());
        assert!(SourceCondition::general("decreasing", |l| 1.0 / l, 1.0).is_err());
        assert!(SourceCondition::general("negative", |l| -l, 1.0).is_err());
        assert!(SourceCondition::general("sqrt", f64::sqrt, 1.0).is_ok());
    }

    #[test]
    fn manufactured_truncation_recovers_truth() {
        let es = EigenSystem::dirichlet_laplacian(4).unwrap();
        let u0 = vec(&[1.0, 0.5, 0.25, 0.125]);
        let p = manufacture_problem(es, 1.0, u0.clone(), SourceTerm::zero(4)).unwrap();
        let u = truncated_solution(&p, 0.0, 16.0).unwrap();
        assert!((&u - &u0).norm() < 1e-12);
    }
}
