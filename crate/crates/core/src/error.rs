use thiserror::Error;

/// Failures raised by the numerical layers (spectral calculus, evolution,
/// regularization and experiments).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A per-mode product `g(λ_n)·v_n` is not representable: the vector is
    /// outside `D(g(A))` at working precision.
    #[error("domain violation at mode {mode} (eigenvalue {eigenvalue}): log-magnitude {log_magnitude:.3} exceeds {threshold}")]
    DomainViolation {
        mode: usize,
        eigenvalue: f64,
        log_magnitude: f64,
        threshold: f64,
    },

    /// The amplification factor `e^{(τ−t)β}` of a truncation level overflows.
    #[error("parameter overflow: exponent (tau - t) * beta = {exponent:.3} exceeds {threshold}")]
    ParameterOverflow { exponent: f64, threshold: f64 },

    /// `ρ/δ` does not exceed `ξ_t(0)`, so no positive truncation level balances the bound.
    #[error("no bracket: target rho/delta = {target:e} does not exceed xi_t(0) = {at_zero:e}")]
    NoBracket { target: f64, at_zero: f64 },

    #[error("quadrature tolerance exceeded: Richardson estimate {estimate:e} > {tolerance:e}")]
    QuadratureTolerance { estimate: f64, tolerance: f64 },

    #[error("dimension mismatch: expected {expected} modes, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for the failures that signal a numerical domain problem rather
    /// than a malformed request.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DomainViolation { .. }
                | Error::ParameterOverflow { .. }
                | Error::NoBracket { .. }
                | Error::QuadratureTolerance { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
