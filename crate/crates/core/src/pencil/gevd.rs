//! Hermitian-definite generalized eigenvalue problem `Phi p = lambda Psi p`.
//!
//! Built by congruence with the eigenbasis of `Psi`:
//! `Psi = U S U^H`, `Phi~ = S^{-1/2} U^H Phi U S^{-1/2}`, `Phi~ q = lambda q`,
//! `p = U S^{-1/2} q`. The resulting `P` satisfies `P^H Psi P = I` and
//! `P^H Phi P = diag(lambda)`.

use super::eig::{hermitian_eig, normalize_column_phases};
use super::matrix::{CMatrix, HermitianMatrix};
use crate::error::{Error, Result};

/// `Psi` is accepted as positive definite when its smallest eigenvalue
/// exceeds this fraction of its mean eigenvalue.
pub const DEFINITENESS_FLOOR: f64 = 1e-12;

/// Generalized eigenvalues (descending) and `Psi`-orthonormal eigenvectors.
#[derive(Clone, Debug)]
pub struct PencilDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
}

impl PencilDecomposition {
    pub fn order(&self) -> usize {
        self.eigenvalues.len()
    }
}

pub fn gevd_hpd(phi: &HermitianMatrix, psi: &HermitianMatrix) -> Result<PencilDecomposition> {
    let n = psi.order();
    if phi.order() != n {
        return Err(Error::InvalidInput(format!(
            "pencil orders differ: {} vs {}",
            phi.order(),
            n
        )));
    }
    let psi_eig = hermitian_eig(psi)?;
    let min = psi_eig.values.last().copied().unwrap_or(0.0);
    let mean = psi_eig.values.iter().sum::<f64>() / n as f64;
    if !(min > 0.0) || min <= DEFINITENESS_FLOOR * mean {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }

    // whitening = U S^{-1/2}
    let mut whitening = psi_eig.vectors;
    for j in 0..n {
        let s = psi_eig.values[j].sqrt().recip();
        for i in 0..n {
            whitening[(i, j)] *= s;
        }
    }
    let phi_tilde = phi.congruence(&whitening);
    let inner = hermitian_eig(&phi_tilde)?;
    let mut eigenvectors = whitening.mul(&inner.vectors);
    normalize_column_phases(&mut eigenvectors);
    Ok(PencilDecomposition {
        eigenvalues: inner.values,
        eigenvectors,
    })
}
