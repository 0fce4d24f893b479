use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// `H_e H_e^H` is singular or too ill-conditioned for zero forcing.
    #[error("rank-deficient channel: condition number {condition:.3e} exceeds {limit:.1e}")]
    RankDeficient { condition: f64, limit: f64 },

    #[error("infeasible subproblem: {0}")]
    InfeasibleSubproblem(String),

    #[error("placement error: {0}")]
    Placement(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("probe at coordinate {coordinate} returned a non-finite value")]
    Probe { coordinate: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn numerical(what: impl Into<String>) -> Self {
        Error::NumericalFailure(what.into())
    }
}
