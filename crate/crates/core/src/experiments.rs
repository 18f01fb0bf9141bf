//! Seeded noise injection in the data norm `‖φ‖ + ‖f‖₁`, convergence-rate
//! studies and the truncation-versus-Lavrentiev comparison.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::{FinalValueProblem, SourceTerm};
use crate::quadrature::{QuadratureConfig, QuadratureRule, TimeGrid};
use crate::regularization::{
    choose_alpha_lavrentiev, choose_beta_exponential, choose_beta_general, lavrentiev_solution,
    total_bound, truncated_solution, SourceCondition,
};
use crate::spectral::SpectralVector;

/// Relative slack allowed when comparing a measured error to its bound.
pub const BOUND_SLACK: f64 = 1e-12;
/// Allowed shortfall of the truncation slope below the Lavrentiev slope when `γ > 1`.
pub const SATURATION_MARGIN: f64 = 0.05;

/// Noise budget `δ` split between the final value and the source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub delta: f64,
    /// Fraction of `δ` placed on `φ_τ`; the rest goes to `f`.
    pub split: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(delta: f64, split: f64, seed: u64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::invalid(format!("noise level must be positive, got {delta}")));
        }
        if !(0.0..=1.0).contains(&split) {
            return Err(Error::invalid(format!("noise split must lie in [0, 1], got {split}")));
        }
        Ok(Self { delta, split, seed })
    }
}

fn unit_direction(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    loop {
        let draw: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        let norm = SpectralVector::new(draw.clone()).map(|v| v.norm()).unwrap_or(0.0);
        if norm > 0.0 {
            return draw.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn cell_seed(seed: u64, delta: f64) -> u64 {
    seed ^ delta.to_bits().wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Noisy data `(φ̃_τ, f̃)` with `‖φ_τ − φ̃_τ‖ = split·δ` and `‖f − f̃‖₁ = (1 − split)·δ`.
///
/// Both perturbations point in uniformly random directions of the spectral
/// space; the source perturbation is constant in time.
pub fn perturb_data(problem: &FinalValueProblem, spec: &NoiseSpec) -> Result<(SpectralVector, SourceTerm)> {
    let spec = NoiseSpec::new(spec.delta, spec.split, spec.seed)?;
    let n = problem.n_modes();
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(spec.seed, spec.delta));
    let phi_direction = unit_direction(&mut rng, n);
    let source_direction = unit_direction(&mut rng, n);

    let phi_scale = spec.split * spec.delta;
    let phi_tilde = SpectralVector::new(
        problem
            .phi_tau
            .coefficients()
            .iter()
            .zip(&phi_direction)
            .map(|(p, d)| p + phi_scale * d)
            .collect(),
    )?;

    let source_level = (1.0 - spec.split) * spec.delta / problem.tau;
    let f_tilde = if source_level > 0.0 {
        let shift = SpectralVector::new(source_direction.iter().map(|d| source_level * d).collect())?;
        problem.source.shifted(&shift)
    } else {
        problem.source.clone()
    };
    Ok((phi_tilde, f_tilde))
}

/// `‖f − g‖₁ = ∫_0^τ ‖f(s) − g(s)‖ ds`.
///
/// Exact when the difference is constant in time; otherwise Gauss-Legendre
/// panels (aligned with the sample grid, if any) with a refinement check.
pub fn l1_time_norm(f: &SourceTerm, g: &SourceTerm, tau: f64, cfg: &QuadratureConfig) -> Result<f64> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    let diff = g.difference(f)?;
    let constants: Option<Vec<f64>> = diff.modes().iter().map(|m| m.as_constant()).collect();
    if let Some(constants) = constants {
        return Ok(SpectralVector::new(constants)?.norm() * tau);
    }
    let panels = match diff.sample_step() {
        Some(step) => ((tau / step).round() as usize).max(1),
        None => 64,
    };
    let grid = TimeGrid::uniform(0.0, tau, panels, QuadratureRule::GaussLegendre { order: 5 })?;
    grid.integrate_certified(
        |s| crate::spectral::stable_norm(diff.eval(s).into_iter()),
        cfg,
    )
}

/// Least-squares fit of `ln(error)` against `ln(δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit in log space.
    pub residual: f64,
}

pub fn estimate_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return Err(Error::invalid(format!(
            "rate fit needs at least 3 points, got {}",
            pairs.len()
        )));
    }
    if let Some(&(d, e)) = pairs.iter().find(|(d, e)| !(*d > 0.0 && *e > 0.0)) {
        return Err(Error::invalid(format!(
            "rate fit needs positive entries, got ({d}, {e})"
        )));
    }
    let xs: Vec<f64> = pairs.iter().map(|(d, _)| d.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|(_, e)| e.ln()).collect();
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    if sxx <= f64::EPSILON * n * mean_x.abs().max(1.0) {
        return Err(Error::invalid("rate fit needs at least two distinct noise levels"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(RateFit {
        slope,
        intercept,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Truncation,
    Lavrentiev,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Truncation => "truncation",
            Method::Lavrentiev => "lavrentiev",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truncation" | "tsr" => Ok(Method::Truncation),
            "lavrentiev" => Ok(Method::Lavrentiev),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateRow {
    pub delta: f64,
    pub seed: u64,
    pub method: Method,
    pub parameter: f64,
    pub error: f64,
    pub bound: f64,
}

impl RateRow {
    pub fn within_bound(&self) -> bool {
        self.error <= self.bound * (1.0 + BOUND_SLACK)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub method: Method,
    pub t: f64,
    pub rows: Vec<RateRow>,
    /// `None` when fewer than two distinct noise levels were run.
    pub fit: Option<RateFit>,
    /// Smoothness index requested and the one Lavrentiev can exploit, when clamped.
    pub clamped_gamma: Option<(f64, f64)>,
}

impl RateReport {
    pub fn violations(&self) -> Vec<&RateRow> {
        self.rows.iter().filter(|r| !r.within_bound()).collect()
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }

    /// Median measured error per noise level, in grid order.
    pub fn median_errors(&self) -> Vec<(f64, f64)> {
        let mut deltas: Vec<f64> = Vec::new();
        for row in &self.rows {
            if !deltas.contains(&row.delta) {
                deltas.push(row.delta);
            }
        }
        deltas
            .into_iter()
            .map(|d| {
                let mut errors: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.delta == d)
                    .map(|r| r.error)
                    .collect();
                errors.sort_by(f64::total_cmp);
                let m = errors.len();
                let median = if m % 2 == 1 {
                    errors[m / 2]
                } else {
                    0.5 * (errors[m / 2 - 1] + errors[m / 2])
                };
                (d, median)
            })
            .collect()
    }

    pub fn summary(&self) -> RateSummary {
        RateSummary {
            method: self.method,
            t: self.t,
            rows: self.rows.len(),
            slope: self.fit.map(|f| f.slope),
            intercept: self.fit.map(|f| f.intercept),
            residual: self.fit.map(|f| f.residual),
            bound_violations: self.violations().len(),
            clamped_gamma_from: self.clamped_gamma.map(|c| c.0),
            clamped_gamma_to: self.clamped_gamma.map(|c| c.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSummary {
    pub method: Method,
    pub t: f64,
    pub rows: usize,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub residual: Option<f64>,
    pub bound_violations: usize,
    pub clamped_gamma_from: Option<f64>,
    pub clamped_gamma_to: Option<f64>,
}

/// Settings shared by every cell of a study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyConfig {
    pub split: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { split: 0.5 }
    }
}

/// `n` geometrically spaced noise levels from `start` down to `end`.
pub fn geometric_grid(start: f64, end: f64, n: usize) -> Result<Vec<f64>> {
    if !(start > 0.0 && end > 0.0) || n == 0 {
        return Err(Error::invalid("geometric grid needs positive ends and at least one point"));
    }
    if n == 1 {
        return Ok(vec![start]);
    }
    let ratio = (end / start).ln() / (n - 1) as f64;
    Ok((0..n).map(|k| start * (ratio * k as f64).exp()).collect())
}

/// `1e-1, 1e-2, …, 1e-6`.
pub fn default_delta_grid() -> Vec<f64> {
    (1..=6).map(|k| 10f64.powi(-k)).collect()
}

/// For every `(δ, seed)`: perturb, pick the method's a-priori parameter,
/// solve, and compare against the problem's truth at `t`.
pub fn run_convergence_study(
    problem: &FinalValueProblem,
    sc: &SourceCondition,
    method: Method,
    deltas: &[f64],
    seeds: &[u64],
    t: f64,
    cfg: &StudyConfig,
) -> Result<RateReport> {
    let truth = problem
        .truth_at(t)
        .ok_or_else(|| Error::invalid("convergence study needs a problem with a known solution"))??;
    if deltas.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("convergence study needs noise levels and seeds"));
    }
    let clamped_gamma = match method {
        Method::Lavrentiev => {
            let gamma = sc.exponential_gamma().ok_or_else(|| {
                Error::invalid("Lavrentiev studies need an exponential source condition")
            })?;
            (gamma > 1.0).then_some((gamma, 1.0))
        }
        Method::Truncation => None,
    };

    let cells: Vec<(f64, u64)> = deltas
        .iter()
        .flat_map(|&d| seeds.iter().map(move |&s| (d, s)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(delta, seed)| study_cell(problem, sc, method, &truth, t, delta, seed, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut distinct = deltas.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let fit = if distinct.len() >= 2 {
        let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.delta, r.error)).collect();
        estimate_rate(&pairs).ok()
    } else {
        None
    };
    Ok(RateReport {
        method,
        t,
        rows,
        fit,
        clamped_gamma,
    })
}

#[allow(clippy::too_many_arguments)]
fn study_cell(
    problem: &FinalValueProblem,
    sc: &SourceCondition,
    method: Method,
    truth: &SpectralVector,
    t: f64,
    delta: f64,
    seed: u64,
    cfg: &StudyConfig,
) -> Result<RateRow> {
    let (phi, source) = perturb_data(problem, &NoiseSpec::new(delta, cfg.split, seed)?)?;
    let noisy = problem.with_data(phi, source)?;
    let (parameter, solution, bound) = match method {
        Method::Truncation => {
            let beta = match sc.exponential_gamma() {
                Some(gamma) => choose_beta_exponential(gamma, t, problem.tau, delta)?,
                None => choose_beta_general(sc, t, problem.tau, delta)?,
            };
            let bound = total_bound(sc, beta, t, problem.tau, delta)?;
            (beta, truncated_solution(&noisy, t, beta)?, bound)
        }
        Method::Lavrentiev => {
            let gamma = sc
                .exponential_gamma()
                .ok_or_else(|| Error::invalid("Lavrentiev needs an exponential source condition"))?;
            let choice = choose_alpha_lavrentiev(gamma, sc.rho(), delta)?;
            let bound = choice.bound(sc.rho(), delta);
            (choice.alpha, lavrentiev_solution(&noisy, t, choice.alpha)?, bound)
        }
    };
    Ok(RateRow {
        delta,
        seed,
        method,
        parameter,
        error: (truth - &solution).norm(),
        bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SaturationVerdict {
    /// `γ ≤ 1` or a slope is undefined: nothing to assert.
    NotApplicable,
    /// Truncation keeps up with (or beats) Lavrentiev above saturation.
    Consistent,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub gamma: f64,
    pub truncation: RateReport,
    pub lavrentiev: RateReport,
    pub verdict: SaturationVerdict,
}

impl Comparison {
    pub fn slope_gap(&self) -> Option<f64> {
        Some(self.truncation.slope()? - self.lavrentiev.slope()?)
    }
}

/// Both methods on identical perturbation draws.
pub fn compare_methods(
    problem: &FinalValueProblem,
    sc: &SourceCondition,
    deltas: &[f64],
    seeds: &[u64],
    t: f64,
    cfg: &StudyConfig,
) -> Result<Comparison> {
    let gamma = sc
        .exponential_gamma()
        .ok_or_else(|| Error::invalid("method comparison needs an exponential source condition"))?;
    let truncation = run_convergence_study(problem, sc, Method::Truncation, deltas, seeds, t, cfg)?;
    let lavrentiev = run_convergence_study(problem, sc, Method::Lavrentiev, deltas, seeds, t, cfg)?;
    let verdict = match (truncation.slope(), lavrentiev.slope()) {
        (Some(tr), Some(lv)) if gamma > 1.0 => {
            if tr >= lv - SATURATION_MARGIN {
                SaturationVerdict::Consistent
            } else {
                SaturationVerdict::Violated
            }
        }
        _ => SaturationVerdict::NotApplicable,
    };
    Ok(Comparison {
        gamma,
        truncation,
        lavrentiev,
        verdict,
    })
}

/// Floats with 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV with columns `delta, seed, method, parameter, error, bound`.
pub fn write_csv<'a, W: Write>(out: W, rows: impl IntoIterator<Item = &'a RateRow>) -> std::io::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["delta", "seed", "method", "parameter", "error", "bound"])?;
    for row in rows {
        writer.write_record([
            format_float(row.delta),
            row.seed.to_string(),
            row.method.to_string(),
            format_float(row.parameter),
            format_float(row.error),
            format_float(row.bound),
        ])?;
    }
    writer.flush()
}

pub fn write_csv_file<'a>(path: &Path, rows: impl IntoIterator<Item = &'a RateRow>) -> std::io::Result<()> {
    write_csv(std::fs::File::create(path)?, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{manufacture_problem, ModeFunction};
    use crate::spectral::EigenSystem;

    fn small_problem() -> FinalValueProblem {
        let es = EigenSystem::arithmetic(8, 0.5).unwrap();
        let u0 = SpectralVector::new(
            es.eigenvalues().iter().map(|l| (-2.0 * l).exp()).collect(),
        )
        .unwrap();
        let source = SourceTerm::new(
            es.eigenvalues()
                .iter()
                .map(|l| ModeFunction::exponential(0.1 * (-l).exp(), -1.0))
                .collect(),
        )
        .unwrap();
        manufacture_problem(es, 1.0, u0, source).unwrap()
    }

    fn q() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn perturbation_budget_split_extremes() {
        let p = small_problem();
        let (phi, f) = perturb_data(&p, &NoiseSpec::new(1e-3, 1.0, 4).unwrap()).unwrap();
        assert_eq!(f, p.source);
        assert!(((&phi - &p.phi_tau).norm() / 1e-3 - 1.0).abs() < 1e-12);

        let (phi, f) = perturb_data(&p, &NoiseSpec::new(1e-3, 0.0, 4).unwrap()).unwrap();
        assert_eq!(phi, p.phi_tau);
        assert!((l1_time_norm(&p.source, &f, p.tau, &q()).unwrap() / 1e-3 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perturbation_is_deterministic_per_seed() {
        let p = small_problem();
        let spec = NoiseSpec::new(1e-2, 0.5, 11).unwrap();
        assert_eq!(perturb_data(&p, &spec).unwrap(), perturb_data(&p, &spec).unwrap());
        let other = NoiseSpec { seed: 12, ..spec };
        assert_ne!(perturb_data(&p, &spec).unwrap().0, perturb_data(&p, &other).unwrap().0);
    }

    #[test]
    fn noise_spec_validation() {
        assert!(NoiseSpec::new(0.0, 0.5, 0).is_err());
        assert!(NoiseSpec::new(1e-3, 1.5, 0).is_err());
    }

    #[test]
    fn l1_examples() {
        let f = SourceTerm::new(vec![ModeFunction::exponential(1.0, -1.0)]).unwrap();
        assert_eq!(l1_time_norm(&f, &f, 1.0, &q()).unwrap(), 0.0);

        let shift = SpectralVector::new(vec![3.0, 4.0]).unwrap();
        let zero = SourceTerm::zero(2);
        let g = zero.shifted(&shift);
        assert_eq!(l1_time_norm(&zero, &g, 2.5, &q()).unwrap(), 12.5);

        let z = SourceTerm::zero(1);
        let v = l1_time_norm(&z, &f, 1.0, &q()).unwrap();
        assert!((v - 0.632_120_558_828_557_7).abs() < 1e-14);
    }

    #[test]
    fn l1_over_sampled_difference() {
        // |s - 0.5| on [0, 1] sampled at the kink: exact 0.25
        let values: Vec<f64> = (0..=10).map(|j| j as f64 * 0.1 - 0.5).collect();
        let f = SourceTerm::new(vec![ModeFunction::sampled(values, 0.1).unwrap()]).unwrap();
        let v = l1_time_norm(&SourceTerm::zero(1), &f, 1.0, &q()).unwrap();
        assert!((v - 0.25).abs() < 1e-14);
    }

    #[test]
    fn rate_examples() {
        let deltas: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
        let pairs: Vec<(f64, f64)> = deltas.iter().map(|&d| (d, d.powf(2.0 / 3.0))).collect();
        let fit = estimate_rate(&pairs).unwrap();
        assert!((fit.slope - 2.0 / 3.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);

        let pairs: Vec<(f64, f64)> = deltas.iter().map(|&d| (d, 5.0 * d)).collect();
        assert!((estimate_rate(&pairs).unwrap().slope - 1.0).abs() < 1e-12);

        assert!(estimate_rate(&[(0.1, 1.0), (0.1, 2.0), (0.1, 3.0)]).is_err());
        assert!(estimate_rate(&[(0.1, 1.0), (0.01, 2.0)]).is_err());
        assert!(estimate_rate(&[(0.1, 1.0), (0.01, 0.0), (0.001, 1.0)]).is_err());
    }

    #[test]
    fn single_delta_study_has_rows_but_no_slope() {
        let p = small_problem();
        let sc = SourceCondition::exponential(2.0, 1.0).unwrap();
        let cmp = compare_methods(&p, &sc, &[1e-3], &[0, 1], 0.0, &StudyConfig::default()).unwrap();
        assert_eq!(cmp.truncation.rows.len(), 2);
        assert!(cmp.truncation.fit.is_none() && cmp.lavrentiev.fit.is_none());
        assert_eq!(cmp.verdict, SaturationVerdict::NotApplicable);
    }

    #[test]
    fn study_requires_truth() {
        let mut p = small_problem();
        p.truth = None;
        let sc = SourceCondition::exponential(2.0, 1.0).unwrap();
        assert!(run_convergence_study(&p, &sc, Method::Truncation, &[1e-2], &[0], 0.0, &StudyConfig::default()).is_err());
    }

    #[test]
    fn csv_has_fixed_schema() {
        let row = RateRow {
            delta: 0.1,
            seed: 3,
            method: Method::Lavrentiev,
            parameter: 0.25,
            error: 1e-3,
            bound: 2e-3,
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, [&row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("delta,seed,method,parameter,error,bound"));
        assert_eq!(
            lines.next(),
            Some("1.0000000000000001e-1,3,lavrentiev,2.5000000000000000e-1,1.0000000000000000e-3,2.0000000000000000e-3")
        );
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = geometric_grid(1e-1, 1e-6, 6).unwrap();
        assert_eq!(g.len(), 6);
        assert!((g[5] / 1e-6 - 1.0).abs() < 1e-12);
        assert_eq!(geometric_grid(0.5, 1e-3, 1).unwrap(), vec![0.5]);
    }
}
