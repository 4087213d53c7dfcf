use thiserror::Error;

/// Command failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, unreadable or malformed input files.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    IllConditioned(String),
    /// Sampler, solver or estimation failures.
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Io(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::IllConditioned(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<lineqgp::Error> for CliError {
    fn from(e: lineqgp::Error) -> Self {
        use lineqgp::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(_) | E::DimensionMismatch { .. } | E::InvalidSystem(_) => CliError::Input(msg),
            E::Infeasible { .. } => CliError::Infeasible(msg),
            E::IllConditioned(_) => CliError::IllConditioned(msg),
            E::NonConvergence { .. }
            | E::LowAcceptance { .. }
            | E::StuckChain { .. }
            | E::InconsistentEta { .. }
            | E::Undefined(_)
            | E::EstimationFailure => CliError::Numerical(msg),
        }
    }
}
