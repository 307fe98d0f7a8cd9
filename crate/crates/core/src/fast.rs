//! EM in the basis that jointly diagonalizes the two spatial covariances.
//!
//! With `P^H S_1 P = diag(lambda)` and `P^H S_2 P = I`, the mixture
//! covariance of every frame is diagonal in the transformed coordinates
//! `y~ = P^H y`. The E-step and the power update then reduce to scalar
//! arithmetic on `I` diagonal entries plus one rank-one outer product per
//! source; the only matrix work left is one pencil decomposition per bin
//! and iteration.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::engine::{self, BinEngine, BinRecord, Shape};
use crate::error::{Error, Result};
use crate::model::{
    Algorithm, PowerSpectra, RunOptions, SeparationResult, SpatialModel, COVARIANCE_LOADING, NUM_SOURCES,
};
use crate::ops::{Op, OpReport, OpTally};
use crate::pencil::{gevd_hpd, kernels, CMatrix, HermitianMatrix, Lu};
use crate::stft::SpectrogramTensor;

/// Parameters in diagonalized form: `S_1 = P^-H diag(lambda) P^-1`,
/// `S_2 = P^-H P^-1`.
#[derive(Clone, Debug)]
pub struct DiagonalizedState {
    pub basis: Vec<CMatrix>,
    pub lambda: Vec<Vec<f64>>,
    pub power: PowerSpectra,
    pub power_floor: Vec<f64>,
}

impl DiagonalizedState {
    /// Back to microphone-basis covariances.
    pub fn to_model(&self) -> Result<SpatialModel> {
        let mut spatial: [Vec<HermitianMatrix>; 2] = [Vec::new(), Vec::new()];
        for (p, lambda) in self.basis.iter().zip(&self.lambda) {
            spatial[0].push(recover_covariance(p, &HermitianMatrix::from_diag(lambda))?);
            spatial[1].push(recover_covariance(p, &HermitianMatrix::identity(p.rows()))?);
        }
        SpatialModel::new(self.power.clone(), spatial, self.power_floor.clone())
    }
}

/// One pencil decomposition of `(S_1, S_2)` per bin.
pub fn diagonalize(model: &SpatialModel) -> Result<DiagonalizedState> {
    let mut basis = Vec::with_capacity(model.bins());
    let mut lambda = Vec::with_capacity(model.bins());
    for f in 0..model.bins() {
        let d = gevd_hpd(&model.spatial[0][f], &model.spatial[1][f])?;
        basis.push(d.eigenvectors);
        lambda.push(d.eigenvalues);
    }
    Ok(DiagonalizedState {
        basis,
        lambda,
        power: model.power.clone(),
        power_floor: model.power_floor.clone(),
    })
}

/// `y~(n, f) = P(f)^H y(n, f)`.
pub fn transform_observations(y: &SpectrogramTensor, basis: &[CMatrix]) -> Result<SpectrogramTensor> {
    let ch = y.channels();
    if basis.len() != y.bins() || basis.iter().any(|p| p.rows() != ch || p.cols() != ch) {
        return Err(Error::InvalidInput("one IxI basis per bin is required".into()));
    }
    let mut out = SpectrogramTensor::zeros(y.frames(), y.bins(), ch);
    for n in 0..y.frames() {
        for (f, p) in basis.iter().enumerate() {
            kernels::adjoint_matvec(p.as_slice(), y.at(n, f), out.at_mut(n, f), ch);
        }
    }
    Ok(out)
}

/// Transformed posterior moments `mu~_j`, `Phi~_j` (indexed `n * bins + f`).
#[derive(Clone, Debug)]
pub struct FastPosterior {
    pub mu_tilde: [SpectrogramTensor; NUM_SOURCES],
    pub phi_tilde: [Vec<HermitianMatrix>; NUM_SOURCES],
}

impl FastPosterior {
    pub fn phi_at(&self, j: usize, n: usize, f: usize) -> &HermitianMatrix {
        &self.phi_tilde[j][n * self.mu_tilde[0].bins() + f]
    }
}

pub fn fast_e_step(y_tilde: &SpectrogramTensor, power: &PowerSpectra, lambda: &[Vec<f64>]) -> Result<FastPosterior> {
    let (frames, bins, ch) = (y_tilde.frames(), y_tilde.bins(), y_tilde.channels());
    if (power.frames(), power.bins()) != (frames, bins) || lambda.len() != bins {
        return Err(Error::InvalidInput(
            "transformed observations and parameters differ in shape".into(),
        ));
    }
    let mut mu = [
        SpectrogramTensor::zeros(frames, bins, ch),
        SpectrogramTensor::zeros(frames, bins, ch),
    ];
    let mut phi: [Vec<HermitianMatrix>; 2] = [Vec::new(), Vec::new()];
    let mut cross = vec![0.0; ch];
    for n in 0..frames {
        for f in 0..bins {
            let (v1, v2) = (power.get(0, n, f), power.get(1, n, f));
            let yt = y_tilde.at(n, f);
            for i in 0..ch {
                let w = 1.0 / (v1 * lambda[f][i] + v2);
                mu[0].at_mut(n, f)[i] = yt[i] * (v1 * lambda[f][i] * w);
                mu[1].at_mut(n, f)[i] = yt[i] * (v2 * w);
                cross[i] = v1 * v2 * lambda[f][i] * w;
            }
            for j in 0..NUM_SOURCES {
                let m = mu[j].at(n, f);
                let mut p = CMatrix::from_fn(ch, ch, |a, b| m[a] * m[b].conj());
                for i in 0..ch {
                    p[(i, i)] += cross[i];
                }
                phi[j].push(HermitianMatrix::from_hermitian_part(&p));
            }
        }
    }
    Ok(FastPosterior {
        mu_tilde: mu,
        phi_tilde: phi,
    })
}

/// `v_1 = tr(diag(lambda)^-1 Phi~_1) / I`, `v_2 = tr(Phi~_2) / I`, floored.
pub fn fast_m_step_v(posterior: &FastPosterior, lambda: &[Vec<f64>], floor: &[f64]) -> PowerSpectra {
    let (frames, bins, ch) = (
        posterior.mu_tilde[0].frames(),
        posterior.mu_tilde[0].bins(),
        posterior.mu_tilde[0].channels(),
    );
    let mut power = PowerSpectra::filled(frames, bins, 0.0);
    for n in 0..frames {
        for f in 0..bins {
            let p1 = posterior.phi_at(0, n, f);
            let p2 = posterior.phi_at(1, n, f);
            let v1: f64 = (0..ch).map(|i| p1[(i, i)].re / lambda[f][i]).sum::<f64>() / ch as f64;
            let v2: f64 = (0..ch).map(|i| p2[(i, i)].re).sum::<f64>() / ch as f64;
            power.set(0, n, f, v1.max(floor[f]));
            power.set(1, n, f, v2.max(floor[f]));
        }
    }
    power
}

/// `S~_j = mean_n Phi~_j / v_j`, symmetrized and loaded with
/// `COVARIANCE_LOADING * tr(S~_j) / I` times the identity.
pub fn fast_m_step_s(posterior: &FastPosterior, power: &PowerSpectra) -> [Vec<HermitianMatrix>; NUM_SOURCES] {
    let (frames, bins, ch) = (
        posterior.mu_tilde[0].frames(),
        posterior.mu_tilde[0].bins(),
        posterior.mu_tilde[0].channels(),
    );
    let mut out: [Vec<HermitianMatrix>; 2] = [Vec::new(), Vec::new()];
    for (j, s) in out.iter_mut().enumerate() {
        for f in 0..bins {
            let mut acc = vec![Complex64::new(0.0, 0.0); ch * ch];
            for n in 0..frames {
                let inv = 1.0 / power.get(j, n, f);
                for (a, p) in acc.iter_mut().zip(posterior.phi_at(j, n, f).as_matrix().as_slice()) {
                    *a += p * inv;
                }
            }
            s.push(loaded_mean(acc, frames, ch));
        }
    }
    out
}

fn loaded_mean(mut acc: Vec<Complex64>, frames: usize, ch: usize) -> HermitianMatrix {
    let inv_frames = 1.0 / frames as f64;
    acc.iter_mut().for_each(|z| *z *= inv_frames);
    let sym = CMatrix::from_vec(ch, ch, acc).hermitian_part();
    let eps = COVARIANCE_LOADING * sym.trace().re / ch as f64;
    HermitianMatrix::from_hermitian_part(&sym.add(&CMatrix::identity(ch).scale(eps)))
}

/// `(Q, Sigma) = gevd(S~_1, S~_2)`; returns `(P Q, Sigma)`.
pub fn propagate_pencil(
    s1_tilde: &HermitianMatrix,
    s2_tilde: &HermitianMatrix,
    p_prev: &CMatrix,
) -> Result<(CMatrix, Vec<f64>)> {
    let d = gevd_hpd(s1_tilde, s2_tilde)?;
    Ok((p_prev.mul(&d.eigenvectors), d.eigenvalues))
}

/// `P^-H S~ P^-1`, computed with two linear solves.
pub fn recover_covariance(basis: &CMatrix, s_tilde: &HermitianMatrix) -> Result<HermitianMatrix> {
    let lu = Lu::new(&basis.adjoint())?;
    let x = lu.solve(s_tilde.as_matrix());
    let y = lu.solve(&x.adjoint());
    Ok(HermitianMatrix::from_hermitian_part(&y.adjoint()))
}

/// Observed-data log-likelihood evaluated in the diagonalized form
/// `sum -I ln(pi) + ln|det P|^2 - sum_i ln d_i - sum_i |y~_i|^2 / d_i`
/// with `d_i = v_1 lambda_i + v_2`.
pub fn diagonalized_log_likelihood(y: &SpectrogramTensor, state: &DiagonalizedState) -> Result<f64> {
    let y_tilde = transform_observations(y, &state.basis)?;
    let ch = y.channels();
    let mut total = 0.0;
    for f in 0..y.bins() {
        let log_det_p = Lu::new(&state.basis[f])?.log_abs_det_sq();
        for n in 0..y.frames() {
            let (v1, v2) = (state.power.get(0, n, f), state.power.get(1, n, f));
            let yt = y_tilde.at(n, f);
            let mut term = -(ch as f64) * PI.ln() + log_det_p;
            for i in 0..ch {
                let d = v1 * state.lambda[f][i] + v2;
                term -= d.ln() + yt[i].norm_sqr() / d;
            }
            total += term;
        }
    }
    Ok(total)
}

struct FastBin {
    index: usize,
    channels: usize,
    y: Vec<Complex64>,
    power: [Vec<f64>; NUM_SOURCES],
    basis: CMatrix,
    lambda: Vec<f64>,
    log_det_basis: f64,
    floor: f64,
    images: Option<[Vec<Complex64>; NUM_SOURCES]>,
    /// Basis and transformed covariances of the latest M-step.
    last_update: Option<(CMatrix, [HermitianMatrix; NUM_SOURCES])>,
}

impl FastBin {
    fn frames(&self) -> usize {
        self.power[0].len()
    }

    fn basis_lu(&self) -> Result<Lu> {
        Lu::new(&self.basis)
            .map_err(|_| Error::Singular(format!("joint diagonalizer of bin {} is singular", self.index)))
    }

    fn images_from_transformed(&self, mu_tilde: &mut [Vec<Complex64>; NUM_SOURCES]) -> Result<()> {
        let lu = Lu::new(&self.basis.adjoint())
            .map_err(|_| Error::Singular(format!("joint diagonalizer of bin {} is singular", self.index)))?;
        let n = self.channels;
        let mut scratch = vec![Complex64::new(0.0, 0.0); n];
        for img in mu_tilde.iter_mut() {
            for chunk in img.chunks_exact_mut(n) {
                lu.solve_in_place(chunk, &mut scratch);
            }
        }
        Ok(())
    }
}

impl BinEngine for FastBin {
    fn iterate<T: OpTally>(&mut self, keep_images: bool, frame: &mut T, bin: &mut T) -> Result<f64> {
        let n = self.channels;
        let frames = self.frames();
        let lambda = &self.lambda;
        let p = self.basis.as_slice();
        let mut yt = vec![Complex64::new(0.0, 0.0); n];
        let mut mu = [vec![Complex64::new(0.0, 0.0); n], vec![Complex64::new(0.0, 0.0); n]];
        let mut cross = vec![0.0; n];
        let mut acc = [
            vec![Complex64::new(0.0, 0.0); n * n],
            vec![Complex64::new(0.0, 0.0); n * n],
        ];
        let mut diag_acc = [vec![0.0; n], vec![0.0; n]];
        let mut new_power = [vec![0.0; frames], vec![0.0; frames]];
        let mut images = keep_images.then(|| {
            [
                vec![Complex64::new(0.0, 0.0); frames * n],
                vec![Complex64::new(0.0, 0.0); frames * n],
            ]
        });
        let inv_n = 1.0 / n as f64;
        let mut quad_sum = 0.0;
        let mut log_det_sum = 0.0;

        for t in 0..frames {
            let y = &self.y[t * n..(t + 1) * n];
            kernels::adjoint_matvec(p, y, &mut yt, n);
            frame.record(Op::MatrixVector(n));

            let (v1, v2) = (self.power[0][t], self.power[1][t]);
            let mut det = 1.0;
            let (mut u1, mut u2) = (0.0, 0.0);
            for i in 0..n {
                let d = v1 * lambda[i] + v2;
                let w = 1.0 / d;
                det *= d;
                quad_sum += yt[i].norm_sqr() * w;
                let g1 = v1 * lambda[i] * w;
                mu[0][i] = yt[i] * g1;
                mu[1][i] = yt[i] * (v2 * w);
                cross[i] = v2 * g1;
                u1 += (mu[0][i].norm_sqr() + cross[i]) / lambda[i];
                u2 += mu[1][i].norm_sqr() + cross[i];
            }
            log_det_sum += det.ln();
            frame.record(Op::Scalar(30 * n));

            let v = [(u1 * inv_n).max(self.floor), (u2 * inv_n).max(self.floor)];
            for j in 0..NUM_SOURCES {
                new_power[j][t] = v[j];
                let inv = 1.0 / v[j];
                let m = &mu[j];
                let a = &mut acc[j];
                // upper triangle of the rank-one part; the diagonal cross
                // term is accumulated separately
                for r in 0..n {
                    let mr = m[r] * inv;
                    for c in r..n {
                        a[r * n + c] += mr * m[c].conj();
                    }
                    diag_acc[j][r] += cross[r] * inv;
                }
                frame.record(Op::OuterProduct(n));
            }
            if let Some(img) = images.as_mut() {
                for j in 0..NUM_SOURCES {
                    img[j][t * n..(t + 1) * n].copy_from_slice(&mu[j]);
                }
            }
        }
        if !log_det_sum.is_finite() {
            return Err(Error::non_finite(format!("mixture determinant in bin {}", self.index)));
        }
        let loglik = frames as f64 * (-(n as f64) * PI.ln() + self.log_det_basis) - log_det_sum - quad_sum;

        let mut s_tilde: [HermitianMatrix; 2] = [HermitianMatrix::identity(n), HermitianMatrix::identity(n)];
        for j in 0..NUM_SOURCES {
            let a = &mut acc[j];
            for r in 0..n {
                a[r * n + r] += diag_acc[j][r];
                for c in 0..r {
                    a[r * n + c] = a[c * n + r].conj();
                }
            }
            s_tilde[j] = loaded_mean(std::mem::take(a), frames, n);
        }

        if let Some(mut img) = images {
            for _ in 0..NUM_SOURCES * frames {
                frame.record(Op::TriangularSolve(n));
            }
            bin.record(Op::Factorization(n));
            self.images_from_transformed(&mut img)?;
            self.images = Some(img);
        }

        let (next_basis, next_lambda) =
            propagate_pencil(&s_tilde[0], &s_tilde[1], &self.basis).map_err(|e| match e {
                Error::NotPositiveDefinite { .. } => e,
                other => Error::Singular(format!("pencil update in bin {}: {other}", self.index)),
            })?;
        bin.record(Op::Eigendecomposition(n));
        bin.record(Op::MatrixProduct(n));
        let previous = std::mem::replace(&mut self.basis, next_basis);
        self.lambda = next_lambda;
        self.log_det_basis = self.basis_lu()?.log_abs_det_sq();
        bin.record(Op::Factorization(n));
        self.power = new_power;
        self.last_update = Some((previous, s_tilde));
        Ok(loglik)
    }

    fn log_likelihood(&self) -> Result<f64> {
        let n = self.channels;
        let mut yt = vec![Complex64::new(0.0, 0.0); n];
        let mut total = 0.0;
        for t in 0..self.frames() {
            kernels::adjoint_matvec(self.basis.as_slice(), &self.y[t * n..(t + 1) * n], &mut yt, n);
            let (v1, v2) = (self.power[0][t], self.power[1][t]);
            let mut det = 1.0;
            for i in 0..n {
                let d = v1 * self.lambda[i] + v2;
                det *= d;
                total -= yt[i].norm_sqr() / d;
            }
            total -= det.ln();
        }
        Ok(total + self.frames() as f64 * (-(n as f64) * PI.ln() + self.log_det_basis))
    }

    fn compute_images(&mut self) -> Result<()> {
        let n = self.channels;
        let frames = self.frames();
        let mut yt = vec![Complex64::new(0.0, 0.0); n];
        let mut img = [
            vec![Complex64::new(0.0, 0.0); frames * n],
            vec![Complex64::new(0.0, 0.0); frames * n],
        ];
        for t in 0..frames {
            kernels::adjoint_matvec(self.basis.as_slice(), &self.y[t * n..(t + 1) * n], &mut yt, n);
            let (v1, v2) = (self.power[0][t], self.power[1][t]);
            for i in 0..n {
                let w = 1.0 / (v1 * self.lambda[i] + v2);
                img[0][t * n + i] = yt[i] * (v1 * self.lambda[i] * w);
                img[1][t * n + i] = yt[i] * (v2 * w);
            }
        }
        self.images_from_transformed(&mut img)?;
        self.images = Some(img);
        Ok(())
    }

    fn images(&self) -> Option<&[Vec<Complex64>; NUM_SOURCES]> {
        self.images.as_ref()
    }

    fn power(&self) -> &[Vec<f64>; NUM_SOURCES] {
        &self.power
    }

    fn record(&self) -> BinRecord {
        match &self.last_update {
            Some((basis, covariances)) => BinRecord::Transformed {
                basis: basis.clone(),
                covariances: covariances.clone(),
            },
            None => BinRecord::Transformed {
                basis: self.basis.clone(),
                covariances: [
                    HermitianMatrix::from_diag(&self.lambda),
                    HermitianMatrix::identity(self.channels),
                ],
            },
        }
    }
}

fn prepare(y: &SpectrogramTensor, init: &SpatialModel) -> Result<(Vec<FastBin>, Shape)> {
    init.check_matches(y)?;
    if y.frames() == 0 || y.bins() == 0 || y.channels() == 0 {
        return Err(Error::InvalidInput("observations are empty".into()));
    }
    let state = diagonalize(init)?;
    let blocks = engine::split_bins(y);
    let mut bins = Vec::with_capacity(y.bins());
    for (f, ((block, basis), lambda)) in blocks.into_iter().zip(state.basis).zip(state.lambda).enumerate() {
        let mut b = FastBin {
            index: f,
            channels: y.channels(),
            y: block,
            power: [
                (0..y.frames()).map(|n| init.power.get(0, n, f)).collect(),
                (0..y.frames()).map(|n| init.power.get(1, n, f)).collect(),
            ],
            basis,
            lambda,
            log_det_basis: 0.0,
            floor: init.power_floor[f],
            images: None,
            last_update: None,
        };
        b.log_det_basis = b.basis_lu()?.log_abs_det_sq();
        bins.push(b);
    }
    let shape = Shape {
        frames: y.frames(),
        bins: y.bins(),
        channels: y.channels(),
    };
    Ok((bins, shape))
}

pub fn fastfca_run(y: &SpectrogramTensor, init: &SpatialModel, iterations: usize) -> Result<SeparationResult> {
    fastfca_run_with(y, init, iterations, RunOptions::default())
}

pub fn fastfca_run_with(
    y: &SpectrogramTensor,
    init: &SpatialModel,
    iterations: usize,
    opts: RunOptions,
) -> Result<SeparationResult> {
    let (mut bins, shape) = prepare(y, init)?;
    engine::drive(Algorithm::FastFca, &mut bins, shape, iterations, opts, None)
}

/// Single-threaded run that tallies the matrix operations of every loop level.
pub fn fastfca_count_ops(
    y: &SpectrogramTensor,
    init: &SpatialModel,
    iterations: usize,
) -> Result<(SeparationResult, OpReport)> {
    let (mut bins, shape) = prepare(y, init)?;
    let mut report = OpReport::default();
    let result = engine::drive(
        Algorithm::FastFca,
        &mut bins,
        shape,
        iterations,
        RunOptions::default(),
        Some(&mut report),
    )?;
    Ok((result, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fca;
    use crate::init::init_random;
    use crate::model::SpatialIterate;
    use crate::synthetic::{random_matrix, random_problem};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn transform_matches_direct_products() {
        let (y, _) = random_problem(1, 3, 4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let basis: Vec<CMatrix> = (0..2).map(|_| random_matrix(3, &mut rng)).collect();
        let yt = transform_observations(&y, &basis).unwrap();
        for n in 0..4 {
            for f in 0..2 {
                let direct = basis[f].adjoint().mul_vec(y.at(n, f));
                for (a, b) in yt.at(n, f).iter().zip(&direct) {
                    assert!((a - b).norm() <= 1e-14 * b.norm().max(1.0));
                }
            }
        }
        let identity = vec![CMatrix::identity(3); 2];
        assert_eq!(transform_observations(&y, &identity).unwrap(), y);
    }

    #[test]
    fn symmetric_sources_split_evenly() {
        let (y, _) = random_problem(2, 2, 3, 1).unwrap();
        let power = PowerSpectra::filled(3, 1, 0.7);
        let post = fast_e_step(&y, &power, &[vec![1.0, 1.0]]).unwrap();
        for n in 0..3 {
            for i in 0..2 {
                assert!((post.mu_tilde[0].at(n, 0)[i] - y.at(n, 0)[i] * 0.5).norm() < 1e-15);
                assert!((post.mu_tilde[1].at(n, 0)[i] - y.at(n, 0)[i] * 0.5).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn vanishing_second_source() {
        let (y, _) = random_problem(3, 2, 2, 1).unwrap();
        let mut power = PowerSpectra::filled(2, 1, 1.0);
        for n in 0..2 {
            power.set(1, n, 0, 1e-14);
        }
        let post = fast_e_step(&y, &power, &[vec![2.0, 0.5]]).unwrap();
        for n in 0..2 {
            for i in 0..2 {
                assert!((post.mu_tilde[0].at(n, 0)[i] - y.at(n, 0)[i]).norm() < 1e-12);
                assert!(post.mu_tilde[1].at(n, 0)[i].norm() < 1e-12);
            }
        }
    }

    #[test]
    fn power_update_fixed_points() {
        let (y, _) = random_problem(4, 3, 1, 1).unwrap();
        let lambda = vec![vec![3.0, 2.0, 0.5]];
        let mut post = fast_e_step(&y, &PowerSpectra::filled(1, 1, 1.0), &lambda).unwrap();
        post.phi_tilde[0][0] = HermitianMatrix::from_diag(&lambda[0]);
        post.phi_tilde[1][0] = HermitianMatrix::identity(3).scale(2.5);
        let v = fast_m_step_v(&post, &lambda, &[1e-30]);
        assert!((v.get(0, 0, 0) - 1.0).abs() < 1e-15);
        assert!((v.get(1, 0, 0) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn covariance_update_proportional_and_single_frame() {
        let (y, _) = random_problem(5, 2, 4, 1).unwrap();
        let mut post = fast_e_step(&y, &PowerSpectra::filled(4, 1, 1.0), &[vec![1.0, 1.0]]).unwrap();
        let c = crate::synthetic::random_hpd(2, 0.5, &mut ChaCha8Rng::seed_from_u64(1));
        let mut power = PowerSpectra::filled(4, 1, 1.0);
        for n in 0..4 {
            let v = 0.5 + n as f64;
            power.set(0, n, 0, v);
            post.phi_tilde[0][n] = c.scale(v);
        }
        let s = fast_m_step_s(&post, &power);
        assert!(s[0][0].as_matrix().sub(c.as_matrix()).max_abs() <= 1e-8 * c.as_matrix().max_abs());
    }

    #[test]
    fn already_diagonal_pencil_keeps_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_matrix(3, &mut rng);
        let lambda = [4.0, 2.0, 1.0];
        let (next, sigma) =
            propagate_pencil(&HermitianMatrix::from_diag(&lambda), &HermitianMatrix::identity(3), &p).unwrap();
        for i in 0..3 {
            assert!((sigma[i] - lambda[i]).abs() < 1e-12);
            // columns agree up to a unit phase
            let a = p.column(i);
            let b = next.column(i);
            let inner: Complex64 = a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum();
            let na: f64 = a.iter().map(|z| z.norm_sqr()).sum();
            assert!((inner.norm() - na).abs() <= 1e-10 * na);
        }
    }

    #[test]
    fn propagated_basis_diagonalizes_back_transformed_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_matrix(4, &mut rng);
        let s1t = crate::synthetic::random_hpd(4, 0.3, &mut rng);
        let s2t = crate::synthetic::random_hpd(4, 0.3, &mut rng);
        let (next, sigma) = propagate_pencil(&s1t, &s2t, &p).unwrap();
        let s1 = recover_covariance(&p, &s1t).unwrap();
        let s2 = recover_covariance(&p, &s2t).unwrap();
        let d1 = next.adjoint().mul(s1.as_matrix()).mul(&next);
        let d2 = next.adjoint().mul(s2.as_matrix()).mul(&next);
        let scale = sigma[0].max(1.0);
        assert!(d1.sub(&CMatrix::from_diag(&sigma)).max_abs() <= 1e-9 * scale);
        assert!(d2.sub(&CMatrix::identity(4)).max_abs() <= 1e-9);
    }

    #[test]
    fn diagonalized_likelihood_matches_dense_evaluation() {
        for (seed, ch) in [(1, 2), (2, 3), (3, 4)] {
            let (y, model) = random_problem(seed, ch, 5, 3).unwrap();
            let state = diagonalize(&model).unwrap();
            let fast = diagonalized_log_likelihood(&y, &state).unwrap();
            let dense = fca::log_likelihood(&y, &model).unwrap();
            assert!(rel(fast, dense) <= 1e-10, "{fast} vs {dense}");
        }
    }

    #[test]
    fn e_step_back_transforms_to_conventional_posterior() {
        let (y, model) = random_problem(8, 3, 6, 2).unwrap();
        let state = diagonalize(&model).unwrap();
        let yt = transform_observations(&y, &state.basis).unwrap();
        let post = fast_e_step(&yt, &state.power, &state.lambda).unwrap();
        let reference = fca::e_step(&y, &model).unwrap();
        for f in 0..2 {
            let lu = Lu::new(&state.basis[f].adjoint()).unwrap();
            for n in 0..6 {
                for j in 0..2 {
                    let mu = lu.solve(&CMatrix::column_vector(post.mu_tilde[j].at(n, f)));
                    let expected = reference.mu[j].at(n, f);
                    let scale = expected.iter().map(|z| z.norm()).fold(1e-300, f64::max);
                    for i in 0..3 {
                        assert!((mu[(i, 0)] - expected[i]).norm() <= 1e-10 * scale);
                    }
                    let phi = recover_covariance(&state.basis[f], post.phi_at(j, n, f)).unwrap();
                    let target = reference.phi_at(j, n, f).as_matrix();
                    assert!(phi.as_matrix().sub(target).max_abs() <= 1e-10 * target.max_abs());
                }
            }
        }
    }

    #[test]
    fn m_step_matches_conventional_update() {
        let (y, model) = random_problem(9, 4, 8, 2).unwrap();
        let state = diagonalize(&model).unwrap();
        let yt = transform_observations(&y, &state.basis).unwrap();
        let post = fast_e_step(&yt, &state.power, &state.lambda).unwrap();
        let power = fast_m_step_v(&post, &state.lambda, &state.power_floor);
        let s_tilde = fast_m_step_s(&post, &power);
        let reference = fca::m_step(&fca::e_step(&y, &model).unwrap(), &model).unwrap();
        assert!(power.max_relative_diff(&reference.power) <= 1e-10);
        for j in 0..2 {
            for f in 0..2 {
                let s = recover_covariance(&state.basis[f], &s_tilde[j][f]).unwrap();
                let target = reference.spatial[j][f].as_matrix();
                assert!(s.as_matrix().sub(target).max_abs() <= 1e-10 * target.max_abs());
            }
        }
    }

    #[test]
    fn run_matches_conventional_engine() {
        for (seed, ch) in [(11, 2), (12, 3), (13, 4)] {
            let (y, _) = random_problem(seed, ch, 24, 5).unwrap();
            let init = init_random(&y, seed).unwrap();
            let opts = RunOptions {
                threads: 1,
                record_iterates: true,
            };
            let slow = fca::fca_run_with(&y, &init, 6, opts).unwrap();
            let fast = fastfca_run_with(&y, &init, 6, opts).unwrap();
            assert!(slow.images[0].max_abs_diff(&fast.images[0]) <= 1e-6);
            assert!(slow.images[1].max_abs_diff(&fast.images[1]) <= 1e-6);
            for (a, b) in slow.log_likelihood.iter().zip(&fast.log_likelihood) {
                assert!(rel(*a, *b) <= 1e-9, "{a} vs {b}");
            }
            for (a, b) in slow.iterates.iter().zip(&fast.iterates) {
                assert!(a.power.max_relative_diff(&b.power) <= 1e-8);
                let (SpatialIterate::Direct(s), SpatialIterate::Transformed { basis, covariances }) =
                    (&a.spatial, &b.spatial)
                else {
                    panic!("unexpected iterate kinds");
                };
                for j in 0..2 {
                    for f in 0..5 {
                        let back = recover_covariance(&basis[f], &covariances[j][f]).unwrap();
                        let target = s[j][f].as_matrix();
                        assert!(back.as_matrix().sub(target).max_abs() <= 1e-8 * target.max_abs());
                    }
                }
            }
        }
    }

    #[test]
    fn zero_iterations_give_posterior_under_init() {
        let (y, model) = random_problem(14, 3, 6, 2).unwrap();
        let result = fastfca_run(&y, &model, 0).unwrap();
        let reference = fca::e_step(&y, &model).unwrap();
        for j in 0..2 {
            assert!(result.images[j].max_abs_diff(&reference.mu[j]) <= 1e-10);
        }
        assert_eq!(result.log_likelihood.len(), 1);
    }

    #[test]
    fn likelihood_is_nondecreasing() {
        let (y, _) = random_problem(15, 4, 30, 4).unwrap();
        let init = crate::init::init_from_masks(&y).unwrap();
        let result = fastfca_run(&y, &init, 10).unwrap();
        for w in result.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
        }
    }

    #[test]
    fn frame_loop_does_no_matrix_inversions_or_products() {
        let (y, _) = random_problem(16, 4, 10, 3).unwrap();
        let init = init_random(&y, 1).unwrap();
        let (_, fast) = fastfca_count_ops(&y, &init, 3).unwrap();
        assert_eq!(fast.frame.matrix_inversions, 0);
        assert_eq!(fast.frame.matrix_products, 0);
        assert_eq!(fast.frame.factorizations, 0);
        assert_eq!(fast.bin.eigendecompositions, 9);
        let (_, slow) = fca::fca_count_ops(&y, &init, 3).unwrap();
        assert_eq!(slow.frame.matrix_inversions, 90);
        assert!(slow.flops_per_frame() > 4.0 * fast.flops_per_frame());
    }

    #[test]
    fn threaded_run_is_bitwise_identical() {
        let (y, _) = random_problem(17, 3, 12, 6).unwrap();
        let init = init_random(&y, 2).unwrap();
        let a = fastfca_run(&y, &init, 3).unwrap();
        let b = fastfca_run_with(
            &y,
            &init,
            3,
            RunOptions {
                threads: 3,
                record_iterates: false,
            },
        )
        .unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.log_likelihood, b.log_likelihood);
    }
}
