use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polynomial order {0}: must be at least 1")]
    InvalidOrder(usize),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("water depth collapsed to {depth:.3e} m at x = {x:.6} m")]
    DepthCollapse { x: f64, depth: f64 },

    #[error("singular Jacobian in element {0}")]
    InvalidElement(usize),

    #[error("invalid coarsening plan: {0}")]
    InvalidPlan(String),

    #[error("local Schwarz block of element {element} is not positive definite")]
    SmootherBuild { element: usize },

    #[error("conjugate gradient breakdown at iteration {iteration}: p^T A p = {curvature:.3e}")]
    Breakdown { iteration: usize, curvature: f64 },

    #[error("matrix is not symmetric positive definite (pivot {pivot} = {value:.3e})")]
    NotSpd { pivot: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite free-surface state at t = {t:.6} s")]
    Diverged { t: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that come from the numerics rather than from input
    /// validation (used by the CLI to pick an exit code).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DepthCollapse { .. }
                | Error::InvalidElement(_)
                | Error::SmootherBuild { .. }
                | Error::Breakdown { .. }
                | Error::NotSpd { .. }
                | Error::Diverged { .. }
        )
    }
}
