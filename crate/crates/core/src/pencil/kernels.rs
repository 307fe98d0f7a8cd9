//! Allocation-free kernels on square row-major complex buffers.
//!
//! These are the building blocks of the per-frame loops; callers own the
//! scratch buffers and pass the order `n` explicitly.

use num_complex::Complex64;

#[inline]
pub(crate) fn matmul(a: &[Complex64], b: &[Complex64], out: &mut [Complex64], n: usize) {
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        let dst = &mut out[i * n..(i + 1) * n];
        dst.fill(Complex64::new(0.0, 0.0));
        for (k, &aik) in row.iter().enumerate() {
            let brow = &b[k * n..(k + 1) * n];
            for (d, &bkj) in dst.iter_mut().zip(brow) {
                *d += aik * bkj;
            }
        }
    }
}

#[inline]
pub(crate) fn matvec(a: &[Complex64], x: &[Complex64], out: &mut [Complex64], n: usize) {
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        out[i] = row.iter().zip(x).map(|(&aik, &xk)| aik * xk).sum();
    }
}

/// `out = a^H x`.
#[inline]
pub(crate) fn adjoint_matvec(a: &[Complex64], x: &[Complex64], out: &mut [Complex64], n: usize) {
    out[..n].fill(Complex64::new(0.0, 0.0));
    for (k, &xk) in x.iter().enumerate().take(n) {
        let row = &a[k * n..(k + 1) * n];
        for (o, &akj) in out.iter_mut().zip(row) {
            *o += akj.conj() * xk;
        }
    }
}

/// In-place Cholesky factorization `A = L L^H` reading the lower triangle.
/// On success the lower triangle holds `L` (real positive diagonal) and the
/// strict upper triangle is zeroed. Returns `false` if a pivot is not
/// strictly positive.
pub(crate) fn cholesky_in_place(a: &mut [Complex64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for k in 0..j {
            d -= a[j * n + k].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let ljj = d.sqrt();
        a[j * n + j] = Complex64::new(ljj, 0.0);
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k].conj();
            }
            a[i * n + j] = s / ljj;
        }
        for k in j + 1..n {
            a[j * n + k] = Complex64::new(0.0, 0.0);
        }
    }
    true
}

/// `log det(L L^H)` from a Cholesky factor.
#[inline]
pub(crate) fn cholesky_log_det(l: &[Complex64], n: usize) -> f64 {
    let mut prod = 1.0;
    for i in 0..n {
        prod *= l[i * n + i].re;
    }
    if prod.is_normal() {
        2.0 * prod.ln()
    } else {
        (0..n).map(|i| 2.0 * l[i * n + i].re.ln()).sum()
    }
}

/// Solves `L L^H X = B` in place, `B` being `n x cols` row-major.
pub(crate) fn cholesky_solve_in_place(l: &[Complex64], n: usize, b: &mut [Complex64], cols: usize) {
    for i in 0..n {
        for k in 0..i {
            let lik = l[i * n + k];
            if lik == Complex64::new(0.0, 0.0) {
                continue;
            }
            for c in 0..cols {
                let bk = b[k * cols + c];
                b[i * cols + c] -= lik * bk;
            }
        }
        let inv = 1.0 / l[i * n + i].re;
        for c in 0..cols {
            b[i * cols + c] *= inv;
        }
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let lki = l[k * n + i].conj();
            if lki == Complex64::new(0.0, 0.0) {
                continue;
            }
            for c in 0..cols {
                let bk = b[k * cols + c];
                b[i * cols + c] -= lki * bk;
            }
        }
        let inv = 1.0 / l[i * n + i].re;
        for c in 0..cols {
            b[i * cols + c] *= inv;
        }
    }
}

/// Explicit inverse `(L L^H)^{-1}` written to `out`.
pub(crate) fn cholesky_inverse(l: &[Complex64], n: usize, out: &mut [Complex64]) {
    out[..n * n].fill(Complex64::new(0.0, 0.0));
    for i in 0..n {
        out[i * n + i] = Complex64::new(1.0, 0.0);
    }
    cholesky_solve_in_place(l, n, out, n);
}

/// Real part of the trace of a square buffer.
#[inline]
pub(crate) fn trace_re(a: &[Complex64], n: usize) -> f64 {
    (0..n).map(|i| a[i * n + i].re).sum()
}
