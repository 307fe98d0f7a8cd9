//! Cholesky and LU factorizations, and the linear solves built on them.

use num_complex::Complex64;

use super::kernels;
use super::matrix::{CMatrix, HermitianMatrix};
use crate::error::{Error, Result};

/// Relative pivot threshold below which an LU factorization is declared singular.
const SINGULAR_PIVOT: f64 = 1e-14;

/// Cholesky factor `L` of a Hermitian positive-definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<Complex64>,
}

impl Cholesky {
    pub fn new(a: &HermitianMatrix) -> Result<Self> {
        let n = a.order();
        let mut l = a.as_matrix().as_slice().to_vec();
        if !kernels::cholesky_in_place(&mut l, n) {
            return Err(Error::Singular(
                "Cholesky factorization failed: matrix is not positive definite".into(),
            ));
        }
        Ok(Self { n, l })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn factor(&self) -> CMatrix {
        CMatrix::from_vec(self.n, self.n, self.l.clone())
    }

    pub(crate) fn raw(&self) -> &[Complex64] {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        kernels::cholesky_log_det(&self.l, self.n)
    }

    pub fn solve(&self, b: &CMatrix) -> CMatrix {
        assert_eq!(b.rows(), self.n);
        let cols = b.cols();
        let mut x = b.clone();
        kernels::cholesky_solve_in_place(&self.l, self.n, x.as_mut_slice(), cols);
        x
    }

    pub fn inverse(&self) -> HermitianMatrix {
        let mut out = CMatrix::zeros(self.n, self.n);
        kernels::cholesky_inverse(&self.l, self.n, out.as_mut_slice());
        HermitianMatrix::from_hermitian_part(&out)
    }
}

/// LU factorization with partial (row) pivoting: `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
    odd: bool,
}

impl Lu {
    pub fn new(a: &CMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidInput("LU requires a square matrix".into()));
        }
        let n = a.rows();
        let mut lu = a.as_slice().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut odd = false;
        let scale = a.max_abs();
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Singular("matrix is zero or non-finite".into()));
        }
        for k in 0..n {
            let (piv, mag) =
                (k..n)
                    .map(|i| (i, lu[i * n + k].norm()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if mag <= SINGULAR_PIVOT * scale {
                return Err(Error::Singular(format!(
                    "pivot {mag:e} in column {k} is below {SINGULAR_PIVOT:e} x {scale:e}"
                )));
            }
            if piv != k {
                for j in 0..n {
                    lu.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
                odd = !odd;
            }
            let inv = lu[k * n + k].inv();
            for i in k + 1..n {
                let factor = lu[i * n + k] * inv;
                lu[i * n + k] = factor;
                for j in k + 1..n {
                    let ukj = lu[k * n + j];
                    lu[i * n + j] -= factor * ukj;
                }
            }
        }
        Ok(Self { n, lu, perm, odd })
    }

    /// Solves `A x = b` in place for a single right-hand side.
    pub fn solve_in_place(&self, b: &mut [Complex64], scratch: &mut [Complex64]) {
        let n = self.n;
        for i in 0..n {
            scratch[i] = b[self.perm[i]];
        }
        for i in 0..n {
            let mut s = scratch[i];
            for k in 0..i {
                s -= self.lu[i * n + k] * scratch[k];
            }
            scratch[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = scratch[i];
            for k in i + 1..n {
                s -= self.lu[i * n + k] * scratch[k];
            }
            scratch[i] = s / self.lu[i * n + i];
        }
        b[..n].copy_from_slice(&scratch[..n]);
    }

    pub fn solve(&self, b: &CMatrix) -> CMatrix {
        assert_eq!(b.rows(), self.n);
        let mut out = CMatrix::zeros(self.n, b.cols());
        let mut col = vec![Complex64::new(0.0, 0.0); self.n];
        let mut scratch = col.clone();
        for j in 0..b.cols() {
            for i in 0..self.n {
                col[i] = b[(i, j)];
            }
            self.solve_in_place(&mut col, &mut scratch);
            for i in 0..self.n {
                out[(i, j)] = col[i];
            }
        }
        out
    }

    pub fn det(&self) -> Complex64 {
        let d: Complex64 = (0..self.n).map(|i| self.lu[i * self.n + i]).product();
        if self.odd {
            -d
        } else {
            d
        }
    }

    /// `log |det A|^2`.
    pub fn log_abs_det_sq(&self) -> f64 {
        (0..self.n).map(|i| self.lu[i * self.n + i].norm_sqr().ln()).sum()
    }
}

/// Solves `Psi X = B`. Positive-definite systems go through Cholesky; any
/// other nonsingular Hermitian system falls back to pivoted LU.
pub fn solve_hermitian_system(psi: &HermitianMatrix, b: &CMatrix) -> Result<CMatrix> {
    if b.rows() != psi.order() {
        return Err(Error::InvalidInput(format!(
            "right-hand side has {} rows, system order is {}",
            b.rows(),
            psi.order()
        )));
    }
    match Cholesky::new(psi) {
        Ok(chol) => Ok(chol.solve(b)),
        Err(_) => solve_linear(psi.as_matrix(), b),
    }
}

/// Solves a general square system `A X = B`.
pub fn solve_linear(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if b.rows() != a.rows() {
        return Err(Error::InvalidInput(format!(
            "right-hand side has {} rows, system order is {}",
            b.rows(),
            a.rows()
        )));
    }
    Ok(Lu::new(a)?.solve(b))
}
