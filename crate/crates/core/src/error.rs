use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation (e.g. a negative time).
    #[error("{what} out of domain: {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A numerical routine (quadrature, root bracketing, optimizer) failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A Fisher or covariance matrix could not be inverted.
    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("ill-posed estimation problem: {0}")]
    IllPosed(String),

    /// The measured frequency carries no decay signal (f0 <= 1/2).
    #[error("no signal: observed frequency {0} does not exceed 1/2")]
    NoSignal(f64),

    /// All particle weights vanished during a Bayesian update.
    #[error("degenerate Bayesian update at step {step}: total likelihood underflowed")]
    DegenerateUpdate { step: usize },

    #[error("too many failed fits: {failed} of {total} did not converge")]
    Unreliable { failed: usize, total: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(what: &'static str, value: f64) -> Self {
        Error::Domain { what, value }
    }
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain("time", t))
    }
}
