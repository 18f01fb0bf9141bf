//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage or parse error, 3 numerical
//! failure (domain violation, parameter overflow, failed bound or verdict).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::Error;
use crate::evolution::{manufacture_problem_with, ModeFunction, SourceTerm};
use crate::experiments::{
    compare_methods, default_delta_grid, format_float, perturb_data, run_convergence_study, write_csv, Method,
    NoiseSpec, RateReport, RateSummary, SaturationVerdict, StudyConfig,
};
use crate::problem_file::{parse_mode, ConditionSpec, ProblemFile, ProblemFileError};
use crate::quadrature::QuadratureConfig;
use crate::regularization::{
    choose_alpha_lavrentiev, choose_beta_exponential, choose_beta_general, lavrentiev_bound, stability_bound,
    total_bound, RegChoice, SourceCondition,
};
use crate::spectral::{EigenSystem, ScalarSymbol, SpectralVector};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fvp-reglab", version, about = "Regularized backward final-value problems in spectral coordinates")]
struct Cli {
    /// Worker threads for studies (default: logical processors).
    #[arg(long, global = true, env = "FVP_REGLAB_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a manufactured problem file with its known solution.
    MakeProblem(MakeProblemArgs),
    /// Solve one (possibly noisy) instance and print the coefficients.
    Solve(SolveArgs),
    /// Convergence-rate study for one method.
    Study(StudyArgs),
    /// Truncation and Lavrentiev on shared noise draws.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("spectrum").required(true).args(["laplacian", "uniform", "eigenvalues"])))]
struct MakeProblemArgs {
    /// Dirichlet Laplacian on (0, π): λ_k = k², k = 1..N.
    #[arg(long, value_name = "N")]
    laplacian: Option<usize>,
    /// Evenly spaced spectrum λ_k = k·spacing, k = 1..N.
    #[arg(long, value_name = "N")]
    uniform: Option<usize>,
    #[arg(long, default_value_t = 1.0, requires = "uniform")]
    spacing: f64,
    /// Explicit eigenvalues, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    eigenvalues: Option<Vec<f64>>,
    #[arg(long)]
    tau: f64,
    /// decay:r | mode:k | smooth:g | values:a,b,...
    #[arg(long, default_value = "decay:0.5")]
    u0: String,
    /// zero | const:c | exp:c:mu | a per-mode expression such as "exp 1 -2 + const 0.5".
    #[arg(long, default_value = "zero")]
    source: String,
    /// Source condition, e.g. "exp gamma=2 rho=auto".
    #[arg(long)]
    condition: Option<String>,
    #[arg(long)]
    quadrature_tol: Option<f64>,
    #[arg(long, default_value = "problem.toml")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    /// Total data noise ‖φ − φ̃‖ + ‖f − f̃‖₁ (overrides the file).
    #[arg(long)]
    delta: Option<f64>,
    /// Share of the noise placed on φ_τ (overrides the file).
    #[arg(long)]
    split: Option<f64>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("choice").required(true).args(["beta", "alpha", "auto"])))]
struct SolveArgs {
    file: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    t: f64,
    #[arg(long, default_value = "truncation")]
    method: Method,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// A-priori parameter from the source condition.
    #[arg(long)]
    auto: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Source condition (overrides the file).
    #[arg(long)]
    condition: Option<String>,
    #[command(flatten)]
    noise: NoiseArgs,
}

#[derive(Debug, Args)]
struct StudyArgs {
    file: PathBuf,
    #[arg(long, default_value = "truncation")]
    method: Method,
    #[command(flatten)]
    common: StudyCommon,
}

#[derive(Debug, Args)]
struct CompareArgs {
    file: PathBuf,
    #[command(flatten)]
    common: StudyCommon,
}

#[derive(Debug, Args)]
struct StudyCommon {
    /// Noise levels, comma separated (default 1e-1 … 1e-6).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    deltas: Option<Vec<f64>>,
    /// Number of seeds per noise level; seeds are 0..N.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 0.0)]
    t: f64,
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    condition: Option<String>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) | CliError::Io(m) => m,
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Entry point shared by the binary and the tests.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return if code == 0 { EXIT_OK } else { EXIT_USAGE };
        }
    };

    let result = match cli.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(jobs) => match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => {
                // the pool's closure must be Send, so collect output first
                let mut buffer = Vec::new();
                let result = pool.install(|| dispatch(cli.command, &mut buffer));
                let _ = out.write_all(&buffer);
                result
            }
            Err(e) => Err(CliError::Usage(format!("cannot start {jobs} workers: {e}"))),
        },
        None => dispatch(cli.command, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> CliResult<i32> {
    match command {
        Command::MakeProblem(args) => make_problem(args, out),
        Command::Solve(args) => solve(args, out),
        Command::Study(args) => study(args, out),
        Command::Compare(args) => compare(args, out),
    }
}

fn emit(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> CliResult<()> {
    out.write_fmt(text)
        .map_err(|e| CliError::Io(format!("standard output: {e}")))
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        emit($out, format_args!("{}\n", format_args!($($arg)*)))
    };
}

fn parse_initial_state(spec: &str, eigensystem: &EigenSystem, tau: f64) -> CliResult<SpectralVector> {
    let n = eigensystem.len();
    let bad = |m: String| CliError::Usage(format!("--u0 {spec}: {m}"));
    let (kind, arg) = spec.split_once(':').ok_or_else(|| bad("expected kind:value".into()))?;
    let number = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("{s:?} is not a number")));
    let coefficients = match kind {
        "decay" => {
            let r = number(arg)?;
            (0..n).map(|k| r.powi(k as i32)).collect()
        }
        "mode" => {
            let k: usize = arg.trim().parse().map_err(|_| bad("expected a mode index".into()))?;
            if k == 0 || k > n {
                return Err(bad(format!("mode index must lie in 1..={n}")));
            }
            let mut c = vec![0.0; n];
            c[k - 1] = 1.0;
            c
        }
        "smooth" => {
            // e^{-gτA} applied to a flat unit vector: satisfies the exponential
            // condition with index g at t = 0
            let g = number(arg)?;
            if !(g >= 0.0) {
                return Err(bad("smoothness index must be >= 0".into()));
            }
            let flat = SpectralVector::new(vec![1.0 / (n as f64).sqrt(); n])?;
            return Ok(eigensystem.apply(&ScalarSymbol::Semigroup { time: g * tau }, &flat)?);
        }
        "values" => {
            let values = arg.split(',').map(number).collect::<CliResult<Vec<f64>>>()?;
            if values.len() != n {
                return Err(bad(format!("expected {n} values, got {}", values.len())));
            }
            values
        }
        other => return Err(bad(format!("unknown kind {other:?}"))),
    };
    Ok(SpectralVector::new(coefficients)?)
}

fn parse_source_flag(spec: &str, n: usize) -> CliResult<SourceTerm> {
    let bad = |m: String| CliError::Usage(format!("--source {spec}: {m}"));
    let number = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("{s:?} is not a number")));
    let parts: Vec<&str> = spec.split(':').collect();
    let mode = match parts.as_slice() {
        ["zero"] => return Ok(SourceTerm::zero(n)),
        ["const", c] => ModeFunction::constant(number(c)?),
        ["exp", c, mu] => ModeFunction::exponential(number(c)?, number(mu)?),
        _ => parse_mode(spec).map_err(bad)?,
    };
    Ok(SourceTerm::new(vec![mode; n])?)
}

fn parse_condition(text: &str) -> CliResult<ConditionSpec> {
    ConditionSpec::parse(text).map_err(|m| CliError::Usage(format!("--condition {text}: {m}")))
}

fn make_problem(args: MakeProblemArgs, out: &mut dyn Write) -> CliResult<i32> {
    let eigensystem = if let Some(n) = args.laplacian {
        EigenSystem::dirichlet_laplacian(n)?
    } else if let Some(n) = args.uniform {
        EigenSystem::arithmetic(n, args.spacing)?
    } else {
        EigenSystem::new(args.eigenvalues.unwrap_or_default())?
    };
    if !(args.tau > 0.0 && args.tau.is_finite()) {
        return Err(CliError::Usage(format!("--tau must be positive, got {}", args.tau)));
    }
    let u0 = parse_initial_state(&args.u0, &eigensystem, args.tau)?;
    let source = parse_source_flag(&args.source, eigensystem.len())?;
    let condition = args.condition.as_deref().map(parse_condition).transpose()?;
    let mut quadrature = QuadratureConfig::default();
    if let Some(tol) = args.quadrature_tol {
        if !(tol > 0.0) {
            return Err(CliError::Usage("--quadrature-tol must be positive".into()));
        }
        quadrature.tolerance = tol;
    }
    let problem = manufacture_problem_with(eigensystem, args.tau, u0, source, quadrature)?;
    let file = ProblemFile {
        problem,
        condition,
        noise: None,
    };
    fs::write(&args.out, file.to_toml_string()).map_err(|e| CliError::io(&args.out, e))?;
    say!(out, "wrote {} ({} modes)", args.out.display(), file.problem.n_modes())?;
    Ok(EXIT_OK)
}

fn load(path: &Path) -> CliResult<ProblemFile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    ProblemFile::parse(&text).map_err(|e| match e {
        ProblemFileError::Invalid(inner) if inner.is_numerical() => {
            CliError::Numerical(format!("{}: {inner}", path.display()))
        }
        other => CliError::Usage(format!("{}: {other}", path.display())),
    })
}

fn resolve_condition(
    file: &ProblemFile,
    flag: Option<&str>,
    t: f64,
) -> CliResult<Option<SourceCondition>> {
    let spec = match flag {
        Some(text) => Some(parse_condition(text)?),
        None => file.condition,
    };
    Ok(spec.map(|s| s.resolve(&file.problem, t)).transpose()?)
}

fn require_condition(condition: Option<SourceCondition>) -> CliResult<SourceCondition> {
    condition.ok_or_else(|| {
        CliError::Usage("a source condition is required (problem file or --condition)".into())
    })
}

fn solve(args: SolveArgs, out: &mut dyn Write) -> CliResult<i32> {
    let file = load(&args.file)?;
    let problem = &file.problem;
    let defaults = file.noise.unwrap_or(crate::problem_file::NoiseDefaults {
        delta: None,
        split: None,
        seed: None,
    });
    let delta = args.noise.delta.or(defaults.delta).unwrap_or(0.0);
    let split = args.noise.split.or(defaults.split).unwrap_or(StudyConfig::default().split);
    let seed = args.seed.or(defaults.seed).unwrap_or(0);
    let condition = resolve_condition(&file, args.condition.as_deref(), args.t)?;

    let choice = match (args.method, args.beta, args.alpha, args.auto) {
        (Method::Truncation, Some(beta), None, false) => RegChoice::truncation(beta)?,
        (Method::Lavrentiev, None, Some(alpha), false) => RegChoice::lavrentiev(alpha)?,
        (method, None, None, true) => {
            if !(delta > 0.0) {
                return Err(CliError::Usage("--auto needs a positive --delta".into()));
            }
            let sc = require_condition(condition.clone())?;
            match method {
                Method::Truncation => RegChoice::truncation(match sc.exponential_gamma() {
                    Some(gamma) => choose_beta_exponential(gamma, args.t, problem.tau, delta)?,
                    None => choose_beta_general(&sc, args.t, problem.tau, delta)?,
                })?,
                Method::Lavrentiev => {
                    let gamma = sc.exponential_gamma().ok_or_else(|| {
                        CliError::Usage("Lavrentiev --auto needs an exponential source condition".into())
                    })?;
                    RegChoice::lavrentiev(choose_alpha_lavrentiev(gamma, sc.rho(), delta)?.alpha)?
                }
            }
        }
        (Method::Truncation, _, _, _) => return Err(CliError::Usage("truncation takes --beta or --auto".into())),
        (Method::Lavrentiev, _, _, _) => {
            return Err(CliError::Usage("lavrentiev takes --alpha or --auto".into()))
        }
    };

    let noisy = if delta > 0.0 {
        let (phi, source) = perturb_data(problem, &NoiseSpec::new(delta, split, seed)?)?;
        problem.with_data(phi, source)?
    } else if delta == 0.0 {
        problem.clone()
    } else {
        return Err(CliError::Usage(format!("--delta must be >= 0, got {delta}")));
    };
    let solution = choice.solve(&noisy, args.t)?;
    let truth = problem.truth_at(args.t).transpose()?;

    let bound = match (&choice, &condition) {
        (RegChoice::Truncation { beta }, Some(sc)) => Some(("total", total_bound(sc, *beta, args.t, problem.tau, delta)?)),
        (RegChoice::Truncation { beta }, None) => Some(("stability", stability_bound(*beta, args.t, problem.tau, delta)?)),
        (RegChoice::Lavrentiev { alpha }, Some(sc)) => sc
            .exponential_gamma()
            .map(|gamma| ("lavrentiev", lavrentiev_bound(gamma, sc.rho(), *alpha, delta))),
        (RegChoice::Lavrentiev { .. }, None) => None,
    };

    let (name, value) = match choice {
        RegChoice::Truncation { beta } => ("beta", beta),
        RegChoice::Lavrentiev { alpha } => ("alpha", alpha),
    };
    say!(out, "method\t{}", args.method)?;
    say!(out, "t\t{}", format_float(args.t))?;
    say!(out, "{name}\t{}", format_float(value))?;
    say!(out, "delta\t{}", format_float(delta))?;
    say!(out, "seed\t{seed}")?;
    say!(out, "mode\teigenvalue\tcoefficient\ttruth")?;
    for (k, (&lambda, &c)) in problem
        .eigensystem
        .eigenvalues()
        .iter()
        .zip(solution.coefficients())
        .enumerate()
    {
        let exact = truth
            .as_ref()
            .map_or_else(|| "-".to_string(), |u| format_float(u.coefficients()[k]));
        say!(out, "{}\t{}\t{}\t{exact}", k + 1, format_float(lambda), format_float(c))?;
    }
    if let Some(u) = &truth {
        say!(out, "error\t{}", format_float((u - &solution).norm()))?;
    }
    if let Some((kind, b)) = bound {
        say!(out, "bound\t{}\t({kind})", format_float(b))?;
    }
    Ok(EXIT_OK)
}

fn study_inputs(
    file: &ProblemFile,
    common: &StudyCommon,
) -> CliResult<(SourceCondition, Vec<f64>, Vec<u64>, StudyConfig)> {
    let sc = require_condition(resolve_condition(file, common.condition.as_deref(), common.t)?)?;
    let deltas = common.deltas.clone().unwrap_or_else(default_delta_grid);
    if common.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..common.seeds).collect();
    let split = common
        .split
        .or(file.noise.and_then(|n| n.split))
        .unwrap_or(StudyConfig::default().split);
    Ok((sc, deltas, seeds, StudyConfig { split }))
}

fn write_outputs(dir: &Path, stem: &str, reports: &[&RateReport], summary: &impl Serialize) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let file = fs::File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    write_csv(file, reports.iter().flat_map(|r| r.rows.iter())).map_err(|e| CliError::io(&csv_path, e))?;
    let json_path = dir.join(format!("{stem}_summary.json"));
    let json = serde_json::to_string_pretty(summary).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(&json_path, json + "\n").map_err(|e| CliError::io(&json_path, e))?;
    Ok(())
}

fn describe_slope(slope: Option<f64>) -> String {
    slope.map_or_else(|| "undefined".into(), format_float)
}

fn study(args: StudyArgs, out: &mut dyn Write) -> CliResult<i32> {
    let file = load(&args.file)?;
    let (sc, deltas, seeds, cfg) = study_inputs(&file, &args.common)?;
    let report = run_convergence_study(&file.problem, &sc, args.method, &deltas, &seeds, args.common.t, &cfg)?;
    let stem = args.method.to_string();
    write_outputs(&args.common.out, &stem, &[&report], &report.summary())?;
    say!(out, "{} slope\t{}", args.method, describe_slope(report.slope()))?;
    if let Some((from, to)) = report.clamped_gamma {
        say!(out, "gamma clamped from {} to {}", format_float(from), format_float(to))?;
    }
    let violations = report.violations().len();
    say!(out, "bound violations\t{violations}")?;
    Ok(if violations == 0 { EXIT_OK } else { EXIT_NUMERICAL })
}

#[derive(Serialize)]
struct CompareSummary {
    gamma: f64,
    verdict: SaturationVerdict,
    slope_gap: Option<f64>,
    truncation: RateSummary,
    lavrentiev: RateSummary,
}

fn compare(args: CompareArgs, out: &mut dyn Write) -> CliResult<i32> {
    let file = load(&args.file)?;
    let (sc, deltas, seeds, cfg) = study_inputs(&file, &args.common)?;
    let cmp = compare_methods(&file.problem, &sc, &deltas, &seeds, args.common.t, &cfg)?;
    let summary = CompareSummary {
        gamma: cmp.gamma,
        verdict: cmp.verdict,
        slope_gap: cmp.slope_gap(),
        truncation: cmp.truncation.summary(),
        lavrentiev: cmp.lavrentiev.summary(),
    };
    write_outputs(&args.common.out, "compare", &[&cmp.truncation, &cmp.lavrentiev], &summary)?;
    say!(out, "truncation slope\t{}", describe_slope(cmp.truncation.slope()))?;
    say!(out, "lavrentiev slope\t{}", describe_slope(cmp.lavrentiev.slope()))?;
    let verdict = match cmp.verdict {
        SaturationVerdict::NotApplicable => "not applicable",
        SaturationVerdict::Consistent => "consistent",
        SaturationVerdict::Violated => "violated",
    };
    say!(out, "saturation verdict\t{verdict}")?;
    let violations = cmp.truncation.violations().len() + cmp.lavrentiev.violations().len();
    say!(out, "bound violations\t{violations}")?;
    Ok(if violations == 0 && cmp.verdict != SaturationVerdict::Violated {
        EXIT_OK
    } else {
        EXIT_NUMERICAL
    })
}
