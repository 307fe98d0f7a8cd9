//! Hermitian eigendecomposition by the cyclic complex Jacobi method.
//!
//! Each rotation first removes the phase of the pivot `a_pq` with a diagonal
//! unitary, then applies the classical real Jacobi rotation. For the orders
//! used here (D <= 16) this is accurate to a few ulps of `||A||` and needs no
//! tridiagonal reduction.

use num_complex::Complex64;

use super::matrix::{CMatrix, HermitianMatrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenvalues sorted descending and the matching unitary eigenvector matrix
/// (eigenvectors in columns).
#[derive(Clone, Debug)]
pub struct HermitianEig {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

pub fn hermitian_eig(a: &HermitianMatrix) -> Result<HermitianEig> {
    let n = a.order();
    let mut m = a.as_matrix().as_slice().to_vec();
    let mut v = CMatrix::identity(n).into_vec();
    let total: f64 = m.iter().map(|z| z.norm_sqr()).sum();

    let mut converged = n <= 1;
    for sweep in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| m[p * n + q].norm_sqr())
            .sum();
        if off == 0.0 || off <= 1e-34 * total {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                let mag = apq.norm();
                if mag == 0.0 {
                    continue;
                }
                let app = m[p * n + p].re;
                let aqq = m[q * n + q].re;
                // Once the pivot no longer perturbs either diagonal entry it
                // can be dropped outright.
                if sweep > 3 && app.abs() + 100.0 * mag == app.abs() && aqq.abs() + 100.0 * mag == aqq.abs() {
                    m[p * n + q] = Complex64::new(0.0, 0.0);
                    m[q * n + p] = Complex64::new(0.0, 0.0);
                    continue;
                }
                rotate(&mut m, &mut v, n, p, q, apq / mag, mag, app, aqq);
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[y * n + y].re.total_cmp(&m[x * n + x].re));
    let values = order.iter().map(|&k| m[k * n + k].re).collect();
    let mut vectors = CMatrix::from_fn(n, n, |i, j| v[i * n + order[j]]);
    normalize_column_phases(&mut vectors);
    Ok(HermitianEig { values, vectors })
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn rotate(
    m: &mut [Complex64],
    v: &mut [Complex64],
    n: usize,
    p: usize,
    q: usize,
    phase: Complex64,
    mag: f64,
    app: f64,
    aqq: f64,
) {
    let theta = (aqq - app) / (2.0 * mag);
    let t = if theta == 0.0 {
        1.0
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let phase_c = phase.conj();

    // A <- A G, V <- V G with G = diag(.., conj(phase) at q) * R(c, s).
    for k in 0..n {
        let akp = m[k * n + p];
        let akq = m[k * n + q];
        m[k * n + p] = akp * c - akq * phase_c * s;
        m[k * n + q] = akp * s + akq * phase_c * c;
        let vkp = v[k * n + p];
        let vkq = v[k * n + q];
        v[k * n + p] = vkp * c - vkq * phase_c * s;
        v[k * n + q] = vkp * s + vkq * phase_c * c;
    }
    // A <- G^H A
    for k in 0..n {
        let apk = m[p * n + k];
        let aqk = m[q * n + k];
        m[p * n + k] = apk * c - aqk * phase * s;
        m[q * n + k] = apk * s + aqk * phase * c;
    }
    m[p * n + q] = Complex64::new(0.0, 0.0);
    m[q * n + p] = Complex64::new(0.0, 0.0);
    m[p * n + p] = Complex64::new(app - t * mag, 0.0);
    m[q * n + q] = Complex64::new(aqq + t * mag, 0.0);
}

/// Rotates each column so its largest-modulus entry is real and positive.
pub(crate) fn normalize_column_phases(vectors: &mut CMatrix) {
    let (rows, cols) = (vectors.rows(), vectors.cols());
    for j in 0..cols {
        let mut best = 0;
        let mut best_mag = -1.0;
        for i in 0..rows {
            let mag = vectors[(i, j)].norm();
            if mag > best_mag {
                best = i;
                best_mag = mag;
            }
        }
        if best_mag <= 0.0 {
            continue;
        }
        let rot = vectors[(best, j)].conj() / best_mag;
        for i in 0..rows {
            vectors[(i, j)] *= rot;
        }
        vectors[(best, j)] = Complex64::new(best_mag, 0.0);
    }
}
