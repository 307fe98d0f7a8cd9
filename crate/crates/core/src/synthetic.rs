//! Random problem instances drawn from the full-rank spatial covariance
//! model itself, for tests and benchmarks.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::model::{power_floor, PowerSpectra, SpatialModel};
use crate::pencil::{CMatrix, HermitianMatrix};
use crate::stft::SpectrogramTensor;

/// Circular complex Gaussian sample with unit variance.
pub fn complex_normal(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn random_matrix(n: usize, rng: &mut impl Rng) -> CMatrix {
    CMatrix::from_fn(n, n, |_, _| complex_normal(rng))
}

/// `A A^H + ridge * I` with `A` complex Gaussian.
pub fn random_hpd(n: usize, ridge: f64, rng: &mut impl Rng) -> HermitianMatrix {
    let a = random_matrix(n, rng);
    HermitianMatrix::from_hermitian_part(&a.mul(&a.adjoint()).add(&CMatrix::identity(n).scale(ridge)))
}

pub fn random_hermitian(n: usize, rng: &mut impl Rng) -> HermitianMatrix {
    HermitianMatrix::from_hermitian_part(&random_matrix(n, rng))
}

/// Observations `y = x_1 + x_2` with `x_j ~ N(0, v_j S_j)` and the model
/// that generated them.
pub fn random_problem(
    seed: u64,
    channels: usize,
    frames: usize,
    bins: usize,
) -> Result<(SpectrogramTensor, SpatialModel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spatial: [Vec<HermitianMatrix>; 2] = [
        (0..bins).map(|_| random_hpd(channels, 0.2, &mut rng)).collect(),
        (0..bins).map(|_| random_hpd(channels, 0.2, &mut rng)).collect(),
    ];
    let mut values = [vec![0.0; frames * bins], vec![0.0; frames * bins]];
    for src in values.iter_mut() {
        for v in src.iter_mut() {
            // log-uniform powers over two decades
            *v = 10f64.powf(rng.gen_range(-1.0..1.0));
        }
    }
    let power = PowerSpectra::new(frames, bins, values)?;

    let factors: [Vec<CMatrix>; 2] = [
        spatial[0].iter().map(cholesky_factor).collect(),
        spatial[1].iter().map(cholesky_factor).collect(),
    ];
    let mut data = Vec::with_capacity(frames * bins * channels);
    for n in 0..frames {
        for f in 0..bins {
            let mut y = vec![Complex64::new(0.0, 0.0); channels];
            for j in 0..2 {
                let w: Vec<Complex64> = (0..channels).map(|_| complex_normal(&mut rng)).collect();
                let x = factors[j][f].mul_vec(&w);
                let scale = power.get(j, n, f).sqrt();
                for (yi, xi) in y.iter_mut().zip(x) {
                    *yi += xi * scale;
                }
            }
            data.extend(y);
        }
    }
    let y = SpectrogramTensor::new(frames, bins, channels, data)?;
    let floor = power_floor(&y);
    let model = SpatialModel::new(power, spatial, floor)?;
    Ok((y, model))
}

fn cholesky_factor(s: &HermitianMatrix) -> CMatrix {
    crate::pencil::Cholesky::new(s)
        .expect("random_hpd output is positive definite")
        .factor()
}
