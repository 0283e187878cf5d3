//! Composable structure-aware QR factorizations and Levenberg-Marquardt
//! optimizers built on them.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*F32` / `*F64` aliases below name the two instantiations.

pub mod error;
pub mod householder;
pub mod levmar;
pub mod matrix;
pub mod ordering;
pub mod problems;
pub mod scalar;
pub mod structured;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};

pub type DenseMatrixF32 = matrix::DenseMatrix<f32>;
pub type DenseMatrixF64 = matrix::DenseMatrix<f64>;
