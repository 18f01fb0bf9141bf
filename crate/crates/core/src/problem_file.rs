//! Human-editable problem files.
//!
//! A problem file is a TOML document:
//!
//! ```toml
//! tau = 1.0
//! eigensystem = "dirichlet_laplacian: 2"     # or an explicit list [1.0, 4.0]
//! phi_tau = [0.36787944117144233, 0.0]      # final value; optional when u0 is given
//! u0 = [1.0, 0.0]                           # known initial state (enables error reports)
//! source = "zero"                           # one entry for all modes, or one per mode
//! source_condition = "exp gamma=2 rho=auto" # or "power p=1 rho=3.5"
//! quadrature_tol = 1e-3
//!
//! [noise]
//! delta = 1e-3
//! split = 0.5
//! seed = 7
//! ```
//!
//! Per-mode source entries are sums of `const c`, `exp c mu` (`c·e^{mu s}`)
//! and `samples [v0, v1, ...] step h`, joined by ` + `. `rho=auto` certifies
//! `ρ_t` from the known solution at the requested time.

use std::fmt::Write as _;
use std::ops::Range;

use serde::Deserialize;
use thiserror::Error;
use toml::{Spanned, Value};

use crate::error::Error;
use crate::evolution::{manufacture_problem_with, FinalValueProblem, ModeFunction, ModeTerm, SourceTerm, Truth};
use crate::experiments::format_float;
use crate::quadrature::QuadratureConfig;
use crate::regularization::{source_condition_norm, SourceCondition};
use crate::spectral::{EigenSystem, SpectralVector};

#[derive(Debug, Error)]
pub enum ProblemFileError {
    #[error("{0}")]
    Syntax(String),
    #[error("line {line}: {field}: {message}")]
    Field {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("missing field `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(#[from] Error),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    tau: Option<Spanned<Value>>,
    eigensystem: Option<Spanned<Value>>,
    phi_tau: Option<Spanned<Value>>,
    u0: Option<Spanned<Value>>,
    source: Option<Spanned<Value>>,
    source_condition: Option<Spanned<Value>>,
    quadrature_tol: Option<Spanned<Value>>,
    noise: Option<RawNoise>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    delta: Option<Spanned<Value>>,
    split: Option<Spanned<Value>>,
    seed: Option<Spanned<Value>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rho {
    Value(f64),
    /// Certified from the known solution.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConditionFamily {
    Power { p: f64 },
    Exponential { gamma: f64 },
}

/// Source condition as written in a file, before `ρ_t` is resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionSpec {
    pub family: ConditionFamily,
    pub rho: Rho,
}

impl ConditionSpec {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut words = text.split_whitespace();
        let kind = words.next().ok_or("empty source condition")?;
        let mut params = std::collections::BTreeMap::new();
        for word in words {
            let (key, value) = word
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {word:?}"))?;
            params.insert(key, value);
        }
        let number = |key: &str| -> Result<f64, String> {
            let raw = params.get(key).ok_or_else(|| format!("missing {key}="))?;
            raw.parse::<f64>()
                .map_err(|_| format!("{key}={raw} is not a number"))
        };
        let family = match kind {
            "power" => ConditionFamily::Power { p: number("p")? },
            "exp" | "exponential" => ConditionFamily::Exponential {
                gamma: number("gamma")?,
            },
            other => return Err(format!("unknown source condition family {other:?}")),
        };
        let rho = match params.get("rho") {
            None | Some(&"auto") => Rho::Auto,
            Some(_) => Rho::Value(number("rho")?),
        };
        let allowed: &[&str] = match family {
            ConditionFamily::Power { .. } => &["p", "rho"],
            ConditionFamily::Exponential { .. } => &["gamma", "rho"],
        };
        if let Some(key) = params.keys().find(|k| !allowed.contains(k)) {
            return Err(format!("unexpected parameter {key:?}"));
        }
        let spec = Self { family, rho };
        // validate the family parameters eagerly
        spec.build(1.0).map_err(|e| e.to_string())?;
        Ok(spec)
    }

    fn build(&self, rho: f64) -> Result<SourceCondition, Error> {
        match self.family {
            ConditionFamily::Power { p } => SourceCondition::power(p, rho),
            ConditionFamily::Exponential { gamma } => SourceCondition::exponential(gamma, rho),
        }
    }

    /// Concrete condition at time `t`; `rho=auto` needs the problem's truth.
    pub fn resolve(&self, problem: &FinalValueProblem, t: f64) -> Result<SourceCondition, Error> {
        match self.rho {
            Rho::Value(rho) => self.build(rho),
            Rho::Auto => {
                let truth = problem.truth_at(t).ok_or_else(|| {
                    Error::InvalidArgument("rho=auto needs u0 in the problem file".into())
                })??;
                let probe = self.build(1.0)?;
                let rho = source_condition_norm(&problem.eigensystem, &truth, &probe, t, problem.tau)?;
                // a vanishing solution satisfies every condition
                self.build(if rho > 0.0 { rho } else { f64::MIN_POSITIVE })
            }
        }
    }
}

impl std::fmt::Display for ConditionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.family {
            ConditionFamily::Power { p } => write!(f, "power p={}", format_float(p))?,
            ConditionFamily::Exponential { gamma } => write!(f, "exp gamma={}", format_float(gamma))?,
        }
        match self.rho {
            Rho::Auto => f.write_str(" rho=auto"),
            Rho::Value(rho) => write!(f, " rho={}", format_float(rho)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDefaults {
    pub delta: Option<f64>,
    pub split: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub problem: FinalValueProblem,
    pub condition: Option<ConditionSpec>,
    pub noise: Option<NoiseDefaults>,
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        let end = span.start.min(self.text.len());
        self.text[..end].matches('\n').count() + 1
    }

    fn err(&self, field: &'static str, span: Range<usize>, message: impl Into<String>) -> ProblemFileError {
        ProblemFileError::Field {
            line: self.line(span),
            field,
            message: message.into(),
        }
    }

    fn number(&self, field: &'static str, value: &Spanned<Value>) -> Result<f64, ProblemFileError> {
        as_number(value.get_ref()).ok_or_else(|| self.err(field, value.span(), "expected a number"))
    }

    fn list(&self, field: &'static str, value: &Spanned<Value>) -> Result<Vec<f64>, ProblemFileError> {
        match value.get_ref() {
            Value::Array(items) => items
                .iter()
                .map(|v| as_number(v).ok_or_else(|| self.err(field, value.span(), "expected numbers only")))
                .collect(),
            _ => Err(self.err(field, value.span(), "expected an array of numbers")),
        }
    }
}

fn as_number(value: &Value) -> Option<f64> {
    match value {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self, ProblemFileError> {
        let raw: RawProblem = toml::from_str(text).map_err(|e| ProblemFileError::Syntax(e.to_string()))?;
        let ctx = Ctx { text };

        let tau_field = raw.tau.as_ref().ok_or(ProblemFileError::Missing("tau"))?;
        let tau = ctx.number("tau", tau_field)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(ctx.err("tau", tau_field.span(), "must be a positive number"));
        }

        let eig_field = raw.eigensystem.as_ref().ok_or(ProblemFileError::Missing("eigensystem"))?;
        let eigensystem = parse_eigensystem(&ctx, eig_field)?;
        let n = eigensystem.len();

        let mut quadrature = QuadratureConfig::default();
        if let Some(field) = &raw.quadrature_tol {
            let tol = ctx.number("quadrature_tol", field)?;
            if !(tol > 0.0) {
                return Err(ctx.err("quadrature_tol", field.span(), "must be positive"));
            }
            quadrature.tolerance = tol;
        }

        let source = match &raw.source {
            None => SourceTerm::zero(n),
            Some(field) => parse_source(&ctx, field, n, tau)?,
        };

        let vector = |name: &'static str, field: &Spanned<Value>| -> Result<SpectralVector, ProblemFileError> {
            let values = ctx.list(name, field)?;
            if values.len() != n {
                return Err(ctx.err(
                    name,
                    field.span(),
                    format!("expected {n} coefficients, got {}", values.len()),
                ));
            }
            SpectralVector::new(values).map_err(|e| ctx.err(name, field.span(), e.to_string()))
        };
        let u0 = raw.u0.as_ref().map(|f| vector("u0", f)).transpose()?;
        let phi_tau = raw.phi_tau.as_ref().map(|f| vector("phi_tau", f)).transpose()?;

        let problem = match (phi_tau, u0) {
            (Some(phi), u0) => {
                let p = FinalValueProblem::new(eigensystem, tau, phi, source.clone())?.with_quadrature(quadrature);
                match u0 {
                    Some(initial_state) => p.with_truth(Truth {
                        initial_state,
                        source,
                    })?,
                    None => p,
                }
            }
            (None, Some(u0)) => manufacture_problem_with(eigensystem, tau, u0, source, quadrature)?,
            (None, None) => return Err(ProblemFileError::Missing("phi_tau (or u0)")),
        };

        let condition = match &raw.source_condition {
            None => None,
            Some(field) => match field.get_ref() {
                Value::String(s) => Some(
                    ConditionSpec::parse(s).map_err(|m| ctx.err("source_condition", field.span(), m))?,
                ),
                _ => return Err(ctx.err("source_condition", field.span(), "expected a string")),
            },
        };

        let noise = match &raw.noise {
            None => None,
            Some(noise) => Some(NoiseDefaults {
                delta: noise.delta.as_ref().map(|f| ctx.number("noise.delta", f)).transpose()?,
                split: noise.split.as_ref().map(|f| ctx.number("noise.split", f)).transpose()?,
                seed: noise
                    .seed
                    .as_ref()
                    .map(|f| match f.get_ref() {
                        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                        _ => Err(ctx.err("noise.seed", f.span(), "expected a non-negative integer")),
                    })
                    .transpose()?,
            }),
        };

        Ok(Self {
            problem,
            condition,
            noise,
        })
    }

    pub fn to_toml_string(&self) -> String {
        let p = &self.problem;
        let mut out = String::from("# fvp-reglab problem file\n");
        let _ = writeln!(out, "tau = {}", format_float(p.tau));
        let laplacian = EigenSystem::dirichlet_laplacian(p.n_modes()).ok();
        if laplacian.as_ref().map(|l| l.eigenvalues()) == Some(p.eigensystem.eigenvalues()) {
            let _ = writeln!(out, "eigensystem = \"dirichlet_laplacian: {}\"", p.n_modes());
        } else {
            let _ = writeln!(out, "eigensystem = {}", float_list(p.eigensystem.eigenvalues()));
        }
        let _ = writeln!(out, "phi_tau = {}", float_list(p.phi_tau.coefficients()));
        if let Some(truth) = &p.truth {
            let _ = writeln!(out, "u0 = {}", float_list(truth.initial_state.coefficients()));
        }
        if p.source.is_zero() {
            out.push_str("source = \"zero\"\n");
        } else {
            out.push_str("source = [\n");
            for mode in p.source.modes() {
                let _ = writeln!(out, "  \"{}\",", format_mode(mode));
            }
            out.push_str("]\n");
        }
        if let Some(condition) = &self.condition {
            let _ = writeln!(out, "source_condition = \"{condition}\"");
        }
        let _ = writeln!(out, "quadrature_tol = {}", format_float(p.quadrature.tolerance));
        if let Some(noise) = &self.noise {
            out.push_str("\n[noise]\n");
            if let Some(d) = noise.delta {
                let _ = writeln!(out, "delta = {}", format_float(d));
            }
            if let Some(s) = noise.split {
                let _ = writeln!(out, "split = {}", format_float(s));
            }
            if let Some(s) = noise.seed {
                let _ = writeln!(out, "seed = {s}");
            }
        }
        out
    }
}

fn float_list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|&v| format_float(v)).collect();
    format!("[{}]", items.join(", "))
}

pub fn format_mode(mode: &ModeFunction) -> String {
    if mode.terms().is_empty() {
        return "zero".into();
    }
    let terms: Vec<String> = mode
        .terms()
        .iter()
        .map(|term| match term {
            ModeTerm::Constant(c) => format!("const {}", format_float(*c)),
            ModeTerm::Exponential { coeff, rate } => {
                format!("exp {} {}", format_float(*coeff), format_float(*rate))
            }
            ModeTerm::Sampled { values, step } => {
                format!("samples {} step {}", float_list(values), format_float(*step))
            }
        })
        .collect();
    terms.join(" + ")
}

/// One per-mode source entry.
pub fn parse_mode(text: &str) -> Result<ModeFunction, String> {
    let text = text.trim();
    if text == "zero" {
        return Ok(ModeFunction::zero());
    }
    let mut terms = Vec::new();
    for piece in split_terms(text) {
        terms.extend(parse_term(piece.trim())?.terms().iter().cloned());
    }
    Ok(ModeFunction::from_terms(terms))
}

/// Split on `+` signs that stand alone between whitespace, outside brackets.
fn split_terms(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut start = 0;
    let mut pieces = Vec::new();
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'[' => depth += 1,
            b']' => depth = depth.saturating_sub(1),
            b'+' if depth == 0
                && i > 0
                && bytes[i - 1].is_ascii_whitespace()
                && bytes.get(i + 1).is_some_and(|c| c.is_ascii_whitespace()) =>
            {
                pieces.push(&text[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    pieces.push(&text[start..]);
    pieces
}

fn parse_number(word: &str, what: &str) -> Result<f64, String> {
    word.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| format!("{what}: {word:?} is not a finite number"))
}

fn parse_term(text: &str) -> Result<ModeFunction, String> {
    let (kind, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
    let rest = rest.trim();
    match kind {
        "const" => {
            let words: Vec<&str> = rest.split_whitespace().collect();
            match words.as_slice() {
                [c] => Ok(ModeFunction::constant(parse_number(c, "const")?)),
                _ => Err(format!("expected `const c`, got {text:?}")),
            }
        }
        "exp" => {
            let words: Vec<&str> = rest.split_whitespace().collect();
            match words.as_slice() {
                [c, mu] => Ok(ModeFunction::exponential(
                    parse_number(c, "exp coefficient")?,
                    parse_number(mu, "exp rate")?,
                )),
                _ => Err(format!("expected `exp c mu`, got {text:?}")),
            }
        }
        "samples" => {
            let open = rest.find('[').ok_or("samples: missing `[`")?;
            let close = rest.find(']').ok_or("samples: missing `]`")?;
            if open != 0 || close < open {
                return Err(format!("expected `samples [v0, ...] step h`, got {text:?}"));
            }
            let values = rest[open + 1..close]
                .split(',')
                .map(|w| parse_number(w.trim(), "sample"))
                .collect::<Result<Vec<f64>, String>>()?;
            let tail: Vec<&str> = rest[close + 1..].split_whitespace().collect();
            let step = match tail.as_slice() {
                ["step", h] => parse_number(h, "step")?,
                _ => return Err(format!("samples: expected `step h` after the values, got {text:?}")),
            };
            ModeFunction::sampled(values, step).map_err(|e| e.to_string())
        }
        other => Err(format!("unknown source term {other:?} (expected const, exp or samples)")),
    }
}

fn parse_eigensystem(ctx: &Ctx<'_>, field: &Spanned<Value>) -> Result<EigenSystem, ProblemFileError> {
    let result = match field.get_ref() {
        Value::String(s) => {
            let (name, size) = s
                .split_once(':')
                .ok_or_else(|| ctx.err("eigensystem", field.span(), "expected `dirichlet_laplacian: N`"))?;
            if name.trim() != "dirichlet_laplacian" {
                return Err(ctx.err(
                    "eigensystem",
                    field.span(),
                    format!("unknown builtin {:?}", name.trim()),
                ));
            }
            let n: usize = size
                .trim()
                .parse()
                .map_err(|_| ctx.err("eigensystem", field.span(), format!("bad size {:?}", size.trim())))?;
            EigenSystem::dirichlet_laplacian(n)
        }
        Value::Array(_) => EigenSystem::new(ctx.list("eigensystem", field)?),
        _ => return Err(ctx.err("eigensystem", field.span(), "expected a builtin name or a list")),
    };
    result.map_err(|e| ctx.err("eigensystem", field.span(), e.to_string()))
}

fn parse_source(ctx: &Ctx<'_>, field: &Spanned<Value>, n: usize, tau: f64) -> Result<SourceTerm, ProblemFileError> {
    let modes = match field.get_ref() {
        Value::String(s) => {
            let mode = parse_mode(s).map_err(|m| ctx.err("source", field.span(), m))?;
            vec![mode; n]
        }
        Value::Array(items) => {
            if items.len() != n {
                return Err(ctx.err(
                    "source",
                    field.span(),
                    format!("expected {n} per-mode entries, got {}", items.len()),
                ));
            }
            items
                .iter()
                .enumerate()
                .map(|(k, item)| match item {
                    Value::String(s) => {
                        parse_mode(s).map_err(|m| ctx.err("source", field.span(), format!("mode {k}: {m}")))
                    }
                    _ => Err(ctx.err("source", field.span(), format!("mode {k}: expected a string"))),
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        _ => return Err(ctx.err("source", field.span(), "expected a string or a list of strings")),
    };
    let source = SourceTerm::new(modes).map_err(|e| ctx.err("source", field.span(), e.to_string()))?;
    if let Some(step) = source.sample_step() {
        let covered = source
            .modes()
            .iter()
            .flat_map(|m| m.terms())
            .all(|t| match t {
                ModeTerm::Sampled { values, .. } => ((values.len() - 1) as f64 * step - tau).abs() <= 1e-9 * tau.max(1.0),
                _ => true,
            });
        if !covered {
            return Err(ctx.err("source", field.span(), format!("sampled modes must cover [0, {tau}]")));
        }
    }
    Ok(source)
}
