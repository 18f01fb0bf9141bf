//! Time quadrature for the Bochner integrals `∫_a^b e^{−(H−s)λ} f(s) ds`.
//!
//! Closed-form antiderivatives cover constant and exponential mode functions.
//! Sampled data go through a composite trapezoid rule whose error is
//! estimated by comparing against the same rule at twice the step.

use crate::error::{Error, Result};

/// The kernel `s ↦ e^{−(horizon − s)·rate}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub rate: f64,
    pub horizon: f64,
}

impl Kernel {
    pub fn new(rate: f64, horizon: f64) -> Self {
        Self { rate, horizon }
    }

    pub fn eval(&self, s: f64) -> f64 {
        (-(self.horizon - s) * self.rate).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Largest accepted Richardson error estimate, relative to `∫|integrand|`.
    pub tolerance: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { tolerance: 1e-3 }
    }
}

/// `∫_a^b e^{−(H−s)λ} · c·e^{μs} ds` in closed form.
///
/// The antiderivative is anchored at whichever endpoint carries the larger
/// integrand so that neither factor overflows for steep kernels.
pub fn exponential_kernel_integral(coeff: f64, mu: f64, kernel: Kernel, a: f64, b: f64) -> f64 {
    let length = b - a;
    if length == 0.0 || coeff == 0.0 {
        return 0.0;
    }
    let lambda = kernel.rate;
    let kappa = lambda + mu;
    if kappa == 0.0 {
        return coeff * (-kernel.horizon * lambda).exp() * length;
    }
    if kappa > 0.0 {
        let anchor = (-(kernel.horizon - b) * lambda + mu * b).exp();
        coeff * anchor * (-(-kappa * length).exp_m1()) / kappa
    } else {
        let anchor = (-(kernel.horizon - a) * lambda + mu * a).exp();
        coeff * anchor * (kappa * length).exp_m1() / kappa
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureRule {
    Trapezoid,
    /// Gauss-Legendre with `order` nodes per panel, `1..=5`.
    GaussLegendre { order: usize },
}

/// Ascending panel boundaries in time plus the rule applied on each panel.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    rule: QuadratureRule,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>, rule: QuadratureRule) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("time grid needs at least two points"));
        }
        if points.iter().any(|p| !p.is_finite()) || points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("time grid points must be finite and strictly ascending"));
        }
        if let QuadratureRule::GaussLegendre { order } = rule {
            if !(1..=5).contains(&order) {
                return Err(Error::invalid(format!(
                    "Gauss-Legendre order must lie in 1..=5, got {order}"
                )));
            }
        }
        Ok(Self { points, rule })
    }

    pub fn uniform(a: f64, b: f64, intervals: usize, rule: QuadratureRule) -> Result<Self> {
        if intervals == 0 || !(b > a) {
            return Err(Error::invalid(format!(
                "uniform grid needs b > a and at least one interval (a={a}, b={b}, n={intervals})"
            )));
        }
        let h = (b - a) / intervals as f64;
        let mut points: Vec<f64> = (0..intervals).map(|j| a + j as f64 * h).collect();
        points.push(b);
        Self::new(points, rule)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn rule(&self) -> QuadratureRule {
        self.rule
    }

    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        match self.rule {
            QuadratureRule::Trapezoid => trapezoid(&self.points, &g),
            QuadratureRule::GaussLegendre { order } => {
                let (nodes, weights) = gauss_legendre(order);
                self.points
                    .windows(2)
                    .map(|w| {
                        let mid = 0.5 * (w[0] + w[1]);
                        let half = 0.5 * (w[1] - w[0]);
                        half * nodes
                            .iter()
                            .zip(weights)
                            .map(|(x, wt)| wt * g(mid + half * x))
                            .sum::<f64>()
                    })
                    .sum()
            }
        }
    }

    /// Every panel split in two.
    pub fn refined(&self) -> Self {
        let mut points = Vec::with_capacity(2 * self.points.len() - 1);
        for w in self.points.windows(2) {
            points.push(w[0]);
            points.push(0.5 * (w[0] + w[1]));
        }
        points.push(*self.points.last().expect("at least two points"));
        Self {
            points,
            rule: self.rule,
        }
    }

    /// Integral on this grid, certified against the refined grid.
    ///
    /// Returns the refined value; the estimate is the difference scaled by
    /// the rule's order (`1/3` for trapezoid, plain difference otherwise).
    pub fn integrate_certified(&self, g: impl Fn(f64) -> f64, cfg: &QuadratureConfig) -> Result<f64> {
        let fine_grid = self.refined();
        let coarse = self.integrate(&g);
        let fine = fine_grid.integrate(&g);
        let estimate = match self.rule {
            QuadratureRule::Trapezoid => (fine - coarse).abs() / 3.0,
            QuadratureRule::GaussLegendre { .. } => (fine - coarse).abs(),
        };
        let scale = fine_grid.integrate(|s| g(s).abs());
        check_estimate(estimate, scale, cfg)?;
        Ok(fine)
    }
}

fn check_estimate(estimate: f64, scale: f64, cfg: &QuadratureConfig) -> Result<()> {
    let tolerance = cfg.tolerance * scale;
    if estimate.is_nan() || estimate > tolerance {
        return Err(Error::QuadratureTolerance { estimate, tolerance });
    }
    Ok(())
}

fn trapezoid(points: &[f64], g: &impl Fn(f64) -> f64) -> f64 {
    let values: Vec<f64> = points.iter().map(|&s| g(s)).collect();
    trapezoid_values(points, &values)
}

fn trapezoid_values(points: &[f64], values: &[f64]) -> f64 {
    points
        .windows(2)
        .zip(values.windows(2))
        .map(|(p, v)| 0.5 * (p[1] - p[0]) * (v[0] + v[1]))
        .sum()
}

/// Composite trapezoid over `nodes` with a Richardson certificate from the
/// every-other-node partition. With an odd interval count the final interval
/// is shared by both partitions.
pub(crate) fn certified_trapezoid(
    nodes: &[f64],
    values: &[f64],
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let fine = trapezoid_values(nodes, values);
    if nodes.len() < 3 {
        return Ok(fine);
    }
    let intervals = nodes.len() - 1;
    let paired = intervals - intervals % 2;
    let mut coarse_nodes: Vec<f64> = nodes[..=paired].iter().step_by(2).copied().collect();
    let mut coarse_values: Vec<f64> = values[..=paired].iter().step_by(2).copied().collect();
    if paired < intervals {
        coarse_nodes.push(nodes[intervals]);
        coarse_values.push(values[intervals]);
    }
    let coarse = trapezoid_values(&coarse_nodes, &coarse_values);
    let abs_values: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let scale = trapezoid_values(nodes, &abs_values);
    check_estimate((fine - coarse).abs() / 3.0, scale, cfg)?;
    Ok(fine)
}

fn gauss_legendre(order: usize) -> (&'static [f64], &'static [f64]) {
    match order {
        1 => (&[0.0], &[2.0]),
        2 => (&[-0.577_350_269_189_625_8, 0.577_350_269_189_625_8], &[1.0, 1.0]),
        3 => (
            &[-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4],
            &[5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0],
        ),
        4 => (
            &[
                -0.861_136_311_594_052_6,
                -0.339_981_043_584_856_3,
                0.339_981_043_584_856_3,
                0.861_136_311_594_052_6,
            ],
            &[
                0.347_854_845_137_453_9,
                0.652_145_154_862_546_1,
                0.652_145_154_862_546_1,
                0.347_854_845_137_453_9,
            ],
        ),
        5 => (
            &[
                -0.906_179_845_938_664,
                -0.538_469_310_105_683_1,
                0.0,
                0.538_469_310_105_683_1,
                0.906_179_845_938_664,
            ],
            &[
                0.236_926_885_056_189_1,
                0.478_628_670_499_366_5,
                0.568_888_888_888_888_9,
                0.478_628_670_499_366_5,
                0.236_926_885_056_189_1,
            ],
        ),
        _ => unreachable!("order validated by TimeGrid::new"),
    }
}
