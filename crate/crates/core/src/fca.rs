//! Conventional EM for the full-rank spatial covariance model.
//!
//! This is the reference the fast engine is checked against, so it is a
//! direct transcription of the update rules: every time-frequency point
//! forms the mixture covariance, inverts it explicitly, and multiplies
//! `I x I` matrices to get the posterior moments.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::engine::{self, BinEngine, BinRecord, Shape};
use crate::error::{Error, Result};
use crate::model::{
    Algorithm, PowerSpectra, RunOptions, SeparationResult, SpatialModel, COVARIANCE_LOADING, NUM_SOURCES,
};
use crate::ops::{NoTally, Op, OpReport, OpTally};
use crate::pencil::{kernels, CMatrix, Cholesky, HermitianMatrix};
use crate::stft::SpectrogramTensor;

/// Posterior means `mu_j(n, f)` and second moments `Phi_j(n, f)`.
#[derive(Clone, Debug)]
pub struct PosteriorMoments {
    pub mu: [SpectrogramTensor; NUM_SOURCES],
    /// Indexed `n * bins + f`.
    pub phi: [Vec<HermitianMatrix>; NUM_SOURCES],
}

impl PosteriorMoments {
    pub fn phi_at(&self, j: usize, n: usize, f: usize) -> &HermitianMatrix {
        &self.phi[j][n * self.mu[0].bins() + f]
    }
}

/// Scratch space for one time-frequency point.
struct Workspace {
    n: usize,
    r: Vec<Complex64>,
    rinv: Vec<Complex64>,
    a: Vec<Complex64>,
    k: Vec<Complex64>,
    z: Vec<Complex64>,
    mu: [Vec<Complex64>; NUM_SOURCES],
    phi: [Vec<Complex64>; NUM_SOURCES],
    w: Vec<Complex64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        let mat = || vec![Complex64::new(0.0, 0.0); n * n];
        let vec_ = || vec![Complex64::new(0.0, 0.0); n];
        Self {
            n,
            r: mat(),
            rinv: mat(),
            a: mat(),
            k: mat(),
            z: vec_(),
            mu: [vec_(), vec_()],
            phi: [mat(), mat()],
            w: mat(),
        }
    }
}

/// E-step at one point: fills `ws.mu`, `ws.phi` and returns the point's
/// log-likelihood term, or `None` if `v_1 S_1 + v_2 S_2` is not positive definite.
#[inline]
fn posterior_frame<T: OpTally>(
    y: &[Complex64],
    v: [f64; NUM_SOURCES],
    s: [&[Complex64]; NUM_SOURCES],
    ws: &mut Workspace,
    tally: &mut T,
) -> Option<f64> {
    let n = ws.n;
    let nn = n * n;
    for idx in 0..nn {
        ws.r[idx] = s[0][idx] * v[0] + s[1][idx] * v[1];
    }
    tally.record(Op::Scalar(8 * nn));

    if !kernels::cholesky_in_place(&mut ws.r, n) {
        return None;
    }
    tally.record(Op::Factorization(n));
    let log_det = kernels::cholesky_log_det(&ws.r, n);
    kernels::cholesky_inverse(&ws.r, n, &mut ws.rinv);
    tally.record(Op::MatrixInverse(n));

    kernels::matvec(&ws.rinv, y, &mut ws.z, n);
    tally.record(Op::MatrixVector(n));
    let quad: f64 = y.iter().zip(&ws.z).map(|(a, b)| (a.conj() * b).re).sum();

    for j in 0..NUM_SOURCES {
        kernels::matvec(s[j], &ws.z, &mut ws.mu[j], n);
        for m in ws.mu[j].iter_mut() {
            *m *= v[j];
        }
        tally.record(Op::MatrixVector(n));
    }

    // v_1 S_1 R^{-1} v_2 S_2, shared by both sources
    kernels::matmul(s[0], &ws.rinv, &mut ws.a, n);
    kernels::matmul(&ws.a, s[1], &mut ws.k, n);
    tally.record(Op::MatrixProduct(n));
    tally.record(Op::MatrixProduct(n));
    let vv = v[0] * v[1];

    for j in 0..NUM_SOURCES {
        let mu = &ws.mu[j];
        let phi = &mut ws.phi[j];
        for a in 0..n {
            for b in 0..n {
                phi[a * n + b] = mu[a] * mu[b].conj() + ws.k[a * n + b] * vv;
            }
        }
        tally.record(Op::OuterProduct(n));
    }
    Some(-(n as f64) * PI.ln() - log_det - quad)
}

/// `tr(S^{-1} Phi) / I` through the Cholesky factor of `S`.
#[inline]
fn power_update<T: OpTally>(
    phi: &[Complex64],
    chol: &[Complex64],
    n: usize,
    w: &mut [Complex64],
    tally: &mut T,
) -> f64 {
    w.copy_from_slice(phi);
    kernels::cholesky_solve_in_place(chol, n, w, n);
    for _ in 0..n {
        tally.record(Op::TriangularSolve(n));
    }
    kernels::trace_re(w, n) / n as f64
}

/// Log-likelihood term of one point, or `None` for a singular mixture covariance.
fn frame_log_likelihood(
    y: &[Complex64],
    v: [f64; NUM_SOURCES],
    s: [&[Complex64]; NUM_SOURCES],
    l: &mut [Complex64],
    z: &mut [Complex64],
) -> Option<f64> {
    let n = y.len();
    for idx in 0..n * n {
        l[idx] = s[0][idx] * v[0] + s[1][idx] * v[1];
    }
    if !kernels::cholesky_in_place(l, n) {
        return None;
    }
    z.copy_from_slice(y);
    kernels::cholesky_solve_in_place(l, n, z, 1);
    let quad: f64 = y.iter().zip(z.iter()).map(|(a, b)| (a.conj() * b).re).sum();
    Some(-(n as f64) * PI.ln() - kernels::cholesky_log_det(l, n) - quad)
}

/// Symmetrized mean of the accumulated `Phi_j / v_j`, loaded with
/// `eps * S_2^prev` where `eps = COVARIANCE_LOADING * tr(S_2^prev^{-1} S) / I`.
///
/// Loading along the previous `S_2` rather than the identity keeps the
/// update congruent with the one the fast engine applies in the
/// jointly-diagonalizing basis, where `S_2^prev` maps to the identity.
fn regularized_update(
    acc: &[Complex64],
    frames: usize,
    n: usize,
    s2_prev: &HermitianMatrix,
    chol_s2_prev: &Cholesky,
) -> HermitianMatrix {
    let inv_frames = 1.0 / frames as f64;
    let mean = CMatrix::from_vec(n, n, acc.iter().map(|z| z * inv_frames).collect());
    let sym = mean.hermitian_part();
    let eps = COVARIANCE_LOADING * chol_s2_prev.solve(&sym).trace().re / n as f64;
    HermitianMatrix::from_hermitian_part(&sym.add(&s2_prev.as_matrix().scale(eps)))
}

fn factor_covariance(s: &HermitianMatrix, j: usize, f: usize) -> Result<Cholesky> {
    Cholesky::new(s)
        .map_err(|_| Error::Singular(format!("spatial covariance S_{}({f}) is not positive definite", j + 1)))
}

fn singular_at(n: usize, f: usize) -> Error {
    Error::Singular(format!(
        "mixture covariance at frame {n}, bin {f} is not positive definite"
    ))
}

/// Observed-data log-likelihood summed over all time-frequency points.
pub fn log_likelihood(y: &SpectrogramTensor, model: &SpatialModel) -> Result<f64> {
    model.check_matches(y)?;
    let n = y.channels();
    let mut l = vec![Complex64::new(0.0, 0.0); n * n];
    let mut z = vec![Complex64::new(0.0, 0.0); n];
    let mut total = 0.0;
    for f in 0..y.bins() {
        let s = [
            model.spatial[0][f].as_matrix().as_slice(),
            model.spatial[1][f].as_matrix().as_slice(),
        ];
        for t in 0..y.frames() {
            let v = [model.power.get(0, t, f), model.power.get(1, t, f)];
            total += frame_log_likelihood(y.at(t, f), v, s, &mut l, &mut z).ok_or_else(|| singular_at(t, f))?;
        }
    }
    Ok(total)
}

/// Posterior moments under `model`, using frame-wise explicit inversion of
/// the mixture covariance.
pub fn e_step(y: &SpectrogramTensor, model: &SpatialModel) -> Result<PosteriorMoments> {
    model.check_matches(y)?;
    let (frames, bins, n) = (y.frames(), y.bins(), y.channels());
    let mut mu = [
        SpectrogramTensor::zeros(frames, bins, n),
        SpectrogramTensor::zeros(frames, bins, n),
    ];
    let mut phi: [Vec<HermitianMatrix>; 2] = [Vec::with_capacity(frames * bins), Vec::with_capacity(frames * bins)];
    let mut ws = Workspace::new(n);
    for t in 0..frames {
        for f in 0..bins {
            let s = [
                model.spatial[0][f].as_matrix().as_slice(),
                model.spatial[1][f].as_matrix().as_slice(),
            ];
            let v = [model.power.get(0, t, f), model.power.get(1, t, f)];
            posterior_frame(y.at(t, f), v, s, &mut ws, &mut NoTally).ok_or_else(|| singular_at(t, f))?;
            for j in 0..NUM_SOURCES {
                mu[j].at_mut(t, f).copy_from_slice(&ws.mu[j]);
                phi[j].push(HermitianMatrix::from_hermitian_part(&CMatrix::from_vec(
                    n,
                    n,
                    ws.phi[j].clone(),
                )));
            }
        }
    }
    Ok(PosteriorMoments { mu, phi })
}

/// Power update with the previous covariances, then covariance update with
/// the new powers.
pub fn m_step(posterior: &PosteriorMoments, model_prev: &SpatialModel) -> Result<SpatialModel> {
    let (frames, bins, n) = (
        posterior.mu[0].frames(),
        posterior.mu[0].bins(),
        posterior.mu[0].channels(),
    );
    if (frames, bins, n) != (model_prev.frames(), model_prev.bins(), model_prev.channels()) {
        return Err(Error::InvalidInput("posterior and model dimensions differ".into()));
    }
    let mut power = PowerSpectra::filled(frames, bins, 0.0);
    let mut spatial: [Vec<HermitianMatrix>; 2] = [Vec::with_capacity(bins), Vec::with_capacity(bins)];
    let mut w = vec![Complex64::new(0.0, 0.0); n * n];
    for f in 0..bins {
        let chol = [
            factor_covariance(&model_prev.spatial[0][f], 0, f)?,
            factor_covariance(&model_prev.spatial[1][f], 1, f)?,
        ];
        let floor = model_prev.power_floor[f];
        let mut acc = [
            vec![Complex64::new(0.0, 0.0); n * n],
            vec![Complex64::new(0.0, 0.0); n * n],
        ];
        for t in 0..frames {
            for j in 0..NUM_SOURCES {
                let phi = posterior.phi_at(j, t, f).as_matrix().as_slice();
                let v = power_update(phi, chol[j].raw(), n, &mut w, &mut NoTally).max(floor);
                power.set(j, t, f, v);
                for (a, p) in acc[j].iter_mut().zip(phi) {
                    *a += p / v;
                }
            }
        }
        for j in 0..NUM_SOURCES {
            spatial[j].push(regularized_update(
                &acc[j],
                frames,
                n,
                &model_prev.spatial[1][f],
                &chol[1],
            ));
        }
    }
    SpatialModel::new(power, spatial, model_prev.power_floor.clone())
}

struct FcaBin {
    index: usize,
    channels: usize,
    y: Vec<Complex64>,
    power: [Vec<f64>; NUM_SOURCES],
    spatial: [HermitianMatrix; NUM_SOURCES],
    floor: f64,
    images: Option<[Vec<Complex64>; NUM_SOURCES]>,
}

impl FcaBin {
    fn frames(&self) -> usize {
        self.power[0].len()
    }
}

impl BinEngine for FcaBin {
    fn iterate<T: OpTally>(&mut self, keep_images: bool, frame: &mut T, bin: &mut T) -> Result<f64> {
        let n = self.channels;
        let frames = self.frames();
        let chol = [
            factor_covariance(&self.spatial[0], 0, self.index)?,
            factor_covariance(&self.spatial[1], 1, self.index)?,
        ];
        bin.record(Op::Factorization(n));
        bin.record(Op::Factorization(n));

        let mut ws = Workspace::new(n);
        let mut acc = [
            vec![Complex64::new(0.0, 0.0); n * n],
            vec![Complex64::new(0.0, 0.0); n * n],
        ];
        let mut new_power = [vec![0.0; frames], vec![0.0; frames]];
        let mut images = keep_images.then(|| {
            [
                vec![Complex64::new(0.0, 0.0); frames * n],
                vec![Complex64::new(0.0, 0.0); frames * n],
            ]
        });
        let s = [
            self.spatial[0].as_matrix().as_slice(),
            self.spatial[1].as_matrix().as_slice(),
        ];
        let mut loglik = 0.0;
        for t in 0..frames {
            let y = &self.y[t * n..(t + 1) * n];
            let v = [self.power[0][t], self.power[1][t]];
            loglik += posterior_frame(y, v, s, &mut ws, frame).ok_or_else(|| singular_at(t, self.index))?;
            for j in 0..NUM_SOURCES {
                let vj = power_update(&ws.phi[j], chol[j].raw(), n, &mut ws.w, frame).max(self.floor);
                new_power[j][t] = vj;
                let inv = 1.0 / vj;
                for (a, p) in acc[j].iter_mut().zip(&ws.phi[j]) {
                    *a += p * inv;
                }
                frame.record(Op::Scalar(4 * n * n));
            }
            if let Some(img) = images.as_mut() {
                for j in 0..NUM_SOURCES {
                    img[j][t * n..(t + 1) * n].copy_from_slice(&ws.mu[j]);
                }
            }
        }

        let updated = [
            regularized_update(&acc[0], frames, n, &self.spatial[1], &chol[1]),
            regularized_update(&acc[1], frames, n, &self.spatial[1], &chol[1]),
        ];
        bin.record(Op::TriangularSolve(n));
        bin.record(Op::TriangularSolve(n));
        self.spatial = updated;
        self.power = new_power;
        if images.is_some() {
            self.images = images;
        }
        Ok(loglik)
    }

    fn log_likelihood(&self) -> Result<f64> {
        let n = self.channels;
        let mut l = vec![Complex64::new(0.0, 0.0); n * n];
        let mut z = vec![Complex64::new(0.0, 0.0); n];
        let s = [
            self.spatial[0].as_matrix().as_slice(),
            self.spatial[1].as_matrix().as_slice(),
        ];
        let mut total = 0.0;
        for t in 0..self.frames() {
            let v = [self.power[0][t], self.power[1][t]];
            total += frame_log_likelihood(&self.y[t * n..(t + 1) * n], v, s, &mut l, &mut z)
                .ok_or_else(|| singular_at(t, self.index))?;
        }
        Ok(total)
    }

    fn compute_images(&mut self) -> Result<()> {
        let n = self.channels;
        let frames = self.frames();
        let mut ws = Workspace::new(n);
        let mut images = [
            vec![Complex64::new(0.0, 0.0); frames * n],
            vec![Complex64::new(0.0, 0.0); frames * n],
        ];
        let s = [
            self.spatial[0].as_matrix().as_slice(),
            self.spatial[1].as_matrix().as_slice(),
        ];
        for t in 0..frames {
            let v = [self.power[0][t], self.power[1][t]];
            posterior_frame(&self.y[t * n..(t + 1) * n], v, s, &mut ws, &mut NoTally)
                .ok_or_else(|| singular_at(t, self.index))?;
            for j in 0..NUM_SOURCES {
                images[j][t * n..(t + 1) * n].copy_from_slice(&ws.mu[j]);
            }
        }
        self.images = Some(images);
        Ok(())
    }

    fn images(&self) -> Option<&[Vec<Complex64>; NUM_SOURCES]> {
        self.images.as_ref()
    }

    fn power(&self) -> &[Vec<f64>; NUM_SOURCES] {
        &self.power
    }

    fn record(&self) -> BinRecord {
        BinRecord::Direct(self.spatial.clone())
    }
}

fn prepare(y: &SpectrogramTensor, init: &SpatialModel) -> Result<(Vec<FcaBin>, Shape)> {
    init.check_matches(y)?;
    if y.frames() == 0 || y.bins() == 0 || y.channels() == 0 {
        return Err(Error::InvalidInput("observations are empty".into()));
    }
    let blocks = engine::split_bins(y);
    let bins = blocks
        .into_iter()
        .enumerate()
        .map(|(f, block)| FcaBin {
            index: f,
            channels: y.channels(),
            y: block,
            power: [
                (0..y.frames()).map(|n| init.power.get(0, n, f)).collect(),
                (0..y.frames()).map(|n| init.power.get(1, n, f)).collect(),
            ],
            spatial: [init.spatial[0][f].clone(), init.spatial[1][f].clone()],
            floor: init.power_floor[f],
            images: None,
        })
        .collect();
    let shape = Shape {
        frames: y.frames(),
        bins: y.bins(),
        channels: y.channels(),
    };
    Ok((bins, shape))
}

pub fn fca_run(y: &SpectrogramTensor, init: &SpatialModel, iterations: usize) -> Result<SeparationResult> {
    fca_run_with(y, init, iterations, RunOptions::default())
}

pub fn fca_run_with(
    y: &SpectrogramTensor,
    init: &SpatialModel,
    iterations: usize,
    opts: RunOptions,
) -> Result<SeparationResult> {
    let (mut bins, shape) = prepare(y, init)?;
    engine::drive(Algorithm::Fca, &mut bins, shape, iterations, opts, None)
}

/// Single-threaded run that tallies the matrix operations of every loop level.
pub fn fca_count_ops(
    y: &SpectrogramTensor,
    init: &SpatialModel,
    iterations: usize,
) -> Result<(SeparationResult, OpReport)> {
    let (mut bins, shape) = prepare(y, init)?;
    let mut report = OpReport::default();
    let result = engine::drive(
        Algorithm::Fca,
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
    use crate::model::power_floor;
    use crate::pencil::solve_linear;
    use crate::synthetic::random_problem;

    fn scalar_model(v: [f64; 2], s: [f64; 2], y: Complex64) -> (SpectrogramTensor, SpatialModel) {
        let y = SpectrogramTensor::new(1, 1, 1, vec![y]).unwrap();
        let power = PowerSpectra::new(1, 1, [vec![v[0]], vec![v[1]]]).unwrap();
        let spatial = [
            vec![HermitianMatrix::from_diag(&[s[0]])],
            vec![HermitianMatrix::from_diag(&[s[1]])],
        ];
        let model = SpatialModel::new(power, spatial, vec![1e-30]).unwrap();
        (y, model)
    }

    /// Literal dense transcription of the E-step, using LU inversion.
    fn dense_posterior(y: &[Complex64], v: [f64; 2], s: [&CMatrix; 2]) -> ([Vec<Complex64>; 2], [CMatrix; 2]) {
        let n = y.len();
        let r = s[0].scale(v[0]).add(&s[1].scale(v[1]));
        let rinv = solve_linear(&r, &CMatrix::identity(n)).unwrap();
        let mu1 = s[0].scale(v[0]).mul(&rinv).mul_vec(y);
        let mu2 = s[1].scale(v[1]).mul(&rinv).mul_vec(y);
        let cross = s[0].scale(v[0]).mul(&rinv).mul(&s[1].scale(v[1]));
        let outer = |m: &[Complex64]| CMatrix::from_fn(n, n, |a, b| m[a] * m[b].conj());
        let phi1 = outer(&mu1).add(&cross);
        let phi2 = outer(&mu2).add(&cross);
        ([mu1, mu2], [phi1, phi2])
    }

    fn dense_log_likelihood(y: &SpectrogramTensor, model: &SpatialModel) -> f64 {
        let n = y.channels();
        let mut total = 0.0;
        for t in 0..y.frames() {
            for f in 0..y.bins() {
                let r = model.spatial[0][f]
                    .as_matrix()
                    .scale(model.power.get(0, t, f))
                    .add(&model.spatial[1][f].as_matrix().scale(model.power.get(1, t, f)));
                let lu = crate::pencil::Lu::new(&r).unwrap();
                let x = lu.solve(&CMatrix::column_vector(y.at(t, f)));
                let quad: f64 = (0..n).map(|i| (y.at(t, f)[i].conj() * x[(i, 0)]).re).sum();
                let log_det = lu.det().re.ln();
                total += -(n as f64) * PI.ln() - log_det - quad;
            }
        }
        total
    }

    #[test]
    fn scalar_gaussian_at_mean() {
        let (y, model) = scalar_model([0.5, 0.5], [1.0, 1.0], Complex64::new(0.0, 0.0));
        let ll = log_likelihood(&y, &model).unwrap();
        assert!((ll + PI.ln()).abs() < 1e-15);
    }

    #[test]
    fn scalar_formula_under_power_scaling() {
        let yv = Complex64::new(0.8, -0.3);
        for scale in [1.0, 2.0] {
            let (y, model) = scalar_model([0.7 * scale, 0.4 * scale], [1.0, 1.0], yv);
            let r = 1.1 * scale;
            let expected = -PI.ln() - r.ln() - yv.norm_sqr() / r;
            assert!((log_likelihood(&y, &model).unwrap() - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn log_likelihood_matches_dense_formula() {
        let (y, model) = random_problem(7, 2, 3, 2).unwrap();
        let fast = log_likelihood(&y, &model).unwrap();
        let dense = dense_log_likelihood(&y, &model);
        assert!((fast - dense).abs() <= 1e-10 * dense.abs());
    }

    #[test]
    fn scalar_wiener_filter() {
        let yv = Complex64::new(1.5, 0.5);
        let (y, model) = scalar_model([3.0, 1.0], [1.0, 1.0], yv);
        let post = e_step(&y, &model).unwrap();
        assert!((post.mu[0].at(0, 0)[0] - yv * 0.75).norm() < 1e-15);
        assert!((post.mu[1].at(0, 0)[0] - yv * 0.25).norm() < 1e-15);
    }

    #[test]
    fn dominant_source_takes_everything() {
        let (y, mut model) = random_problem(1, 3, 4, 2).unwrap();
        for f in 0..2 {
            model.spatial[0][f] = HermitianMatrix::identity(3);
            for t in 0..4 {
                model.power.set(0, t, f, 1.0);
                model.power.set(1, t, f, 1e-8);
            }
        }
        let post = e_step(&y, &model).unwrap();
        for t in 0..4 {
            for f in 0..2 {
                let err: f64 = post.mu[0]
                    .at(t, f)
                    .iter()
                    .zip(y.at(t, f))
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum();
                let norm: f64 = y.at(t, f).iter().map(|z| z.norm_sqr()).sum();
                assert!(err.sqrt() <= 1e-6 * norm.sqrt());
            }
        }
    }

    #[test]
    fn e_step_matches_dense_transcription_and_partitions_y() {
        let (y, model) = random_problem(2, 2, 3, 2).unwrap();
        let post = e_step(&y, &model).unwrap();
        for t in 0..3 {
            for f in 0..2 {
                let v = [model.power.get(0, t, f), model.power.get(1, t, f)];
                let s = [model.spatial[0][f].as_matrix(), model.spatial[1][f].as_matrix()];
                let (mu, phi) = dense_posterior(y.at(t, f), v, s);
                for j in 0..2 {
                    let scale = phi[j].max_abs();
                    for (a, b) in post.mu[j].at(t, f).iter().zip(&mu[j]) {
                        assert!((a - b).norm() <= 1e-12 * scale.sqrt().max(1.0));
                    }
                    let d = post.phi_at(j, t, f).as_matrix().sub(&phi[j].hermitian_part()).max_abs();
                    assert!(d <= 1e-12 * scale, "phi mismatch {d:e}");
                }
                let ynorm: f64 = y.at(t, f).iter().map(|z| z.norm()).fold(0.0, f64::max);
                for i in 0..2 {
                    let sum = post.mu[0].at(t, f)[i] + post.mu[1].at(t, f)[i];
                    assert!((sum - y.at(t, f)[i]).norm() <= 1e-10 * ynorm);
                }
            }
        }
    }

    #[test]
    fn m_step_fixed_point_when_phi_proportional_to_s() {
        let (y, model) = random_problem(3, 2, 5, 2).unwrap();
        let mut post = e_step(&y, &model).unwrap();
        let c = 2.5;
        for j in 0..2 {
            for t in 0..5 {
                for f in 0..2 {
                    post.phi[j][t * 2 + f] = model.spatial[j][f].scale(c);
                }
            }
        }
        let next = m_step(&post, &model).unwrap();
        for j in 0..2 {
            for t in 0..5 {
                for f in 0..2 {
                    assert!((next.power.get(j, t, f) - c).abs() < 1e-12);
                }
            }
            for f in 0..2 {
                let d = next.spatial[j][f]
                    .as_matrix()
                    .sub(model.spatial[j][f].as_matrix())
                    .max_abs();
                assert!(d <= 1e-8 * model.spatial[j][f].as_matrix().max_abs());
            }
        }
    }

    #[test]
    fn m_step_scalar_reduction() {
        // I = 1, Phi constant over n: v = Phi / S_prev and S -> S_prev (up to loading)
        let (y, model) = scalar_model([0.5, 0.5], [1.0, 1.0], Complex64::new(1.0, 0.0));
        let post = e_step(&y, &model).unwrap();
        let next = m_step(&post, &model).unwrap();
        for j in 0..2 {
            let phi = post.phi_at(j, 0, 0)[(0, 0)].re;
            assert!((next.power.get(j, 0, 0) - phi).abs() < 1e-15);
            assert!((next.spatial[j][0][(0, 0)].re - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn m_step_matches_dense_transcription() {
        let (y, model) = random_problem(4, 3, 6, 2).unwrap();
        let post = e_step(&y, &model).unwrap();
        let next = m_step(&post, &model).unwrap();
        for f in 0..2 {
            for j in 0..2 {
                let sinv = solve_linear(model.spatial[j][f].as_matrix(), &CMatrix::identity(3)).unwrap();
                let mut acc = CMatrix::zeros(3, 3);
                for t in 0..6 {
                    let phi = post.phi_at(j, t, f).as_matrix();
                    let v = (sinv.mul(phi).trace().re / 3.0).max(model.power_floor[f]);
                    assert!((next.power.get(j, t, f) - v).abs() <= 1e-12 * v);
                    acc = acc.add(&phi.scale(1.0 / v));
                }
                let s = acc.scale(1.0 / 6.0);
                let d = next.spatial[j][f].as_matrix().sub(&s).max_abs();
                // loading is 1e-9 relative
                assert!(d <= 1e-8 * s.max_abs(), "{d:e}");
            }
        }
    }

    #[test]
    fn em_is_monotone_and_covariances_stay_valid() {
        let (y, _) = random_problem(5, 3, 20, 4).unwrap();
        let init = crate::init::init_random(&y, 9).unwrap();
        let result = fca_run_with(
            &y,
            &init,
            8,
            RunOptions {
                threads: 1,
                record_iterates: true,
            },
        )
        .unwrap();
        assert_eq!(result.log_likelihood.len(), 9);
        for w in result.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
        for it in &result.iterates {
            if let crate::model::SpatialIterate::Direct(s) = &it.spatial {
                let model = SpatialModel::new(it.power.clone(), s.clone(), power_floor(&y)).unwrap();
                model.validate().unwrap();
            }
        }
    }

    #[test]
    fn run_images_partition_observations() {
        let (y, _) = random_problem(6, 2, 10, 3).unwrap();
        let init = crate::init::init_random(&y, 1).unwrap();
        for l in [0, 1, 3] {
            let result = fca_run(&y, &init, l).unwrap();
            for (k, z) in y.data().iter().enumerate() {
                let sum = result.images[0].data()[k] + result.images[1].data()[k];
                assert!((sum - z).norm() <= 1e-10 * z.norm().max(1.0));
            }
        }
    }

    #[test]
    fn single_em_step_does_not_decrease_likelihood() {
        let (y, _) = random_problem(8, 2, 12, 3).unwrap();
        let init = crate::init::init_random(&y, 4).unwrap();
        let before = log_likelihood(&y, &init).unwrap();
        let result = fca_run(&y, &init, 1).unwrap();
        assert!((result.log_likelihood[0] - before).abs() <= 1e-10 * before.abs());
        assert!(result.log_likelihood[1] >= before);
    }

    #[test]
    fn scalar_pipeline_is_wiener_filtering() {
        // Closed-form scalar EM for one bin: S_j is a scalar that the
        // power update absorbs, so each iteration is a Wiener filter.
        let (y, _) = random_problem(10, 1, 16, 1).unwrap();
        let init = crate::init::init_random(&y, 2).unwrap();
        let result = fca_run(&y, &init, 3).unwrap();
        let mut v = [init.power.source(0).to_vec(), init.power.source(1).to_vec()];
        let mut s = [init.spatial[0][0][(0, 0)].re, init.spatial[1][0][(0, 0)].re];
        let floor = init.power_floor[0];
        let mut last_mu = vec![Complex64::new(0.0, 0.0); 16];
        for _ in 0..3 {
            let mut new_v = [vec![0.0; 16], vec![0.0; 16]];
            let mut acc = [0.0; 2];
            for t in 0..16 {
                let r = [v[0][t] * s[0], v[1][t] * s[1]];
                let yt = y.at(t, 0)[0];
                let gain = r[0] / (r[0] + r[1]);
                last_mu[t] = yt * gain;
                let post_var = r[0] * r[1] / (r[0] + r[1]);
                let mus = [yt * gain, yt * (1.0 - gain)];
                for j in 0..2 {
                    let phi = mus[j].norm_sqr() + post_var;
                    new_v[j][t] = (phi / s[j]).max(floor);
                    acc[j] += phi / new_v[j][t];
                }
            }
            let prev_s2 = s[1];
            for j in 0..2 {
                let mean = acc[j] / 16.0;
                s[j] = mean + COVARIANCE_LOADING * (mean / prev_s2) * prev_s2;
            }
            v = new_v;
        }
        for t in 0..16 {
            assert!((result.images[0].at(t, 0)[0] - last_mu[t]).norm() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (y, model) = random_problem(1, 2, 3, 2).unwrap();
        let (y2, _) = random_problem(1, 2, 4, 2).unwrap();
        assert!(matches!(fca_run(&y2, &model, 1), Err(Error::InvalidInput(_))));
        assert!(log_likelihood(&y, &model).is_ok());
    }
}
