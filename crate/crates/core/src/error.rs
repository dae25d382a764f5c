use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChnsError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("potential argument {0} outside the admissible interval")]
    Domain(f64),

    #[error("mean-incompatible right-hand side (mean {mean:.3e}, max norm {scale:.3e})")]
    MeanIncompatible { mean: f64, scale: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("{solver}: operator is not positive definite (curvature {curvature:.3e})")]
    Indefinite { solver: &'static str, curvature: f64 },

    #[error("time step {dt:.3e} violates the CFL bound {limit:.3e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("config error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("rate fit refused: {0}")]
    FitRefused(String),

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<ChnsError>,
    },
}

impl ChnsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ChnsError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of an iterative or nonlinear solve.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            ChnsError::NoConvergence { .. }
            | ChnsError::Indefinite { .. }
            | ChnsError::Domain(_) | ChnsError::Cfl { .. } => true,
            ChnsError::StepFailed { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, ChnsError>;
