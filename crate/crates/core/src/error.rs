use thiserror::Error;

/// Errors raised by model construction, solvers and samplers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid constraint system: {0}")]
    InvalidSystem(String),

    #[error("ill-conditioned model: {0}")]
    IllConditioned(String),

    /// The constraint set (together with the interpolation conditions) is empty.
    /// `row` is the inequality that could not be satisfied together with the
    /// rows listed in `active`.
    #[error("infeasible constraints: row {row} conflicts with active rows {active:?}")]
    Infeasible { row: usize, active: Vec<usize> },

    #[error("solver did not converge after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        best: Vec<f64>,
    },

    /// `partial` holds the accepted draws of `eta` collected before the cap
    /// was hit, `partial_latent` the same draws in whitened coordinates.
    #[error("rejection cap reached: {accepted} of {requested} draws accepted after {proposed} proposals")]
    LowAcceptance {
        accepted: usize,
        requested: usize,
        proposed: usize,
        partial: Vec<Vec<f64>>,
        partial_latent: Vec<Vec<f64>>,
    },

    #[error("chain stuck: {rejections} consecutive rejected proposals")]
    StuckChain { rejections: usize },

    #[error("eta is not in the image of the constraint matrix (residual {residual:e})")]
    InconsistentEta { residual: f64 },

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("estimation failed: every start returned a non-finite objective")]
    EstimationFailure,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
