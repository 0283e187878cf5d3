//! Matrix storage shared by every solver: dense, triplet, block diagonal,
//! block banded, and row/column permutations.

mod block;
mod dense;
pub mod market;
mod permutation;
mod triplet;

pub use block::{BandedBlockMatrix, BlockDiagonalMatrix};
pub use dense::{axpy, dot, gemm, norm2, norm_inf, DenseMatrix};
pub use permutation::{permute_columns, Permutation, RowPermute};
pub use triplet::TripletMatrix;
