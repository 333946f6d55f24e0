//! Exact perturbation theory: formal power-series solutions of implicit
//! equations `F(hbar, z) = 0`, their Borel resummation through a
//! convolution integral equation in the Borel plane, and block
//! diagonalisation of holomorphic matrix families.

pub mod borel;
pub mod error;
pub mod formal;
pub mod hbar;
pub mod kernels;
pub mod laplace;
pub mod linalg;
pub mod matrix;
pub mod oracle;
pub mod poly;
pub mod series;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
