//! Spectral-element multigrid solvers for the `x–σ` Laplace problem of a
//! fully nonlinear potential-flow wave model.

pub mod assembly;
pub mod basis;
pub mod cases;
pub mod direct;
pub mod error;
pub mod fnpf;
pub mod mesh;
pub mod multigrid;
pub mod solvers;
pub mod sparse;

pub use error::{Error, Result};
