//! Complex Hermitian linear algebra and the Hermitian-definite generalized
//! eigenvalue solver used for joint diagonalization.

mod eig;
mod factor;
mod gevd;
pub(crate) mod kernels;
mod matrix;

pub use eig::{hermitian_eig, HermitianEig};
pub use factor::{solve_hermitian_system, solve_linear, Cholesky, Lu};
pub use gevd::{gevd_hpd, PencilDecomposition, DEFINITENESS_FLOOR};
pub use matrix::{CMatrix, HermitianMatrix, HERMITIAN_TOLERANCE};
