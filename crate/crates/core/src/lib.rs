//! Numerical toolkit for pathwise viscosity solutions of Hamilton–Jacobi
//! equations driven by geometric rough paths.

pub mod characteristics;
pub mod datum;
pub mod error;
pub mod expr;
pub mod grid;
pub mod hamiltonians;
pub mod linalg;
pub mod local_solver;
pub mod pde_solver;
pub mod perron_verify;
pub mod rough_path;

pub use error::{Error, Result};
