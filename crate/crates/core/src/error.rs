use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no forcing available at t = {time} s (hydrograph spans [{start}, {end}] s)")]
    MissingForcing { time: f64, start: f64, end: f64 },

    #[error("solver diverged at cell (row {row}, col {col}) at t = {time} s")]
    Divergence { row: usize, col: usize, time: f64 },

    #[error("member {member} diverged in window {window}: {source}")]
    MemberDivergence {
        member: usize,
        window: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("zone {0} has no usable cells")]
    EmptyZone(usize),

    #[error("no recorded diagnostic for observation {0}")]
    MissingDiagnostic(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("innovation covariance is not positive definite")]
    SingularCovariance,

    #[error("{0} is undefined for these counts")]
    UndefinedScore(&'static str),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("missing artifacts: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingArtifacts(Vec<PathBuf>),

    #[error("malformed file {}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Divergence { .. } | Error::MemberDivergence { .. } => 3,
            Error::MissingArtifact(_) | Error::MissingArtifacts(_) => 4,
            _ => 1,
        }
    }
}
