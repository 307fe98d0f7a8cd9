//! Initial parameters for the EM engines.
//!
//! [`init_from_masks`] clusters, per frequency bin, the directions of the
//! observation vectors into two groups, aligns the group labels across
//! bins and turns the resulting soft masks into covariances and powers.
//! [`init_random`] is a seeded fallback.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::model::{power_floor, PowerSpectra, SpatialModel, NUM_SOURCES};
use crate::pencil::{hermitian_eig, CMatrix, HermitianMatrix};
use crate::stft::SpectrogramTensor;
use crate::synthetic::random_matrix;

/// Soft masks are kept inside `[MASK_CLAMP, 1 - MASK_CLAMP]` so that no
/// initial power sits on the floor.
pub const MASK_CLAMP: f64 = 0.02;

/// Diagonal loading of the unit-trace initial covariances.
pub const INIT_LOADING: f64 = 1e-3;

const KMEANS_ITERATIONS: usize = 50;

/// Time-frequency masks of the two sources, stored `n * bins + f`.
/// `values[0][k] + values[1][k] == 1` everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceMasks {
    pub frames: usize,
    pub bins: usize,
    pub values: [Vec<f64>; NUM_SOURCES],
}

impl SourceMasks {
    pub fn get(&self, j: usize, n: usize, f: usize) -> f64 {
        self.values[j][n * self.bins + f]
    }

    /// Power-weighted mean of the source-1 mask over bins, per frame.
    pub fn frame_profile(&self, y: &SpectrogramTensor) -> Vec<f64> {
        (0..self.frames)
            .map(|n| {
                let (mut num, mut den) = (0.0, 0.0);
                for f in 0..self.bins {
                    let w: f64 = y.at(n, f).iter().map(|z| z.norm_sqr()).sum();
                    num += w * self.get(0, n, f);
                    den += w;
                }
                if den > 0.0 {
                    num / den
                } else {
                    0.5
                }
            })
            .collect()
    }
}

/// Masks from per-bin 2-means clustering of phase-aligned unit directions,
/// with labels aligned across bins. `None` when there are fewer than two
/// channels or fewer than `2 I` frames.
pub fn estimate_masks(y: &SpectrogramTensor) -> Result<Option<SourceMasks>> {
    let (frames, bins, ch) = (y.frames(), y.bins(), y.channels());
    if ch < 2 || frames < 2 * ch || bins == 0 {
        return Ok(None);
    }
    let per_bin: Vec<Vec<f64>> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let block: Vec<&[Complex64]> = (0..frames).map(|n| y.at(n, f)).collect();
            cluster_bin(&block, ch)
        })
        .collect::<Result<_>>()?;

    let aligned = align_permutations(per_bin, y);
    let mut values = [vec![0.0; frames * bins], vec![0.0; frames * bins]];
    for (f, m) in aligned.iter().enumerate() {
        for n in 0..frames {
            values[0][n * bins + f] = m[n];
            values[1][n * bins + f] = 1.0 - m[n];
        }
    }
    Ok(Some(SourceMasks { frames, bins, values }))
}

/// Source-1 mask of every frame of one bin.
fn cluster_bin(block: &[&[Complex64]], ch: usize) -> Result<Vec<f64>> {
    let frames = block.len();
    let norms: Vec<f64> = block
        .iter()
        .map(|y| y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let max_norm = norms.iter().cloned().fold(0.0, f64::max);
    if max_norm == 0.0 {
        return Ok(vec![0.5; frames]);
    }

    let mut cov = CMatrix::zeros(ch, ch);
    for y in block {
        let data = cov.as_mut_slice();
        for a in 0..ch {
            for b in 0..ch {
                data[a * ch + b] += y[a] * y[b].conj();
            }
        }
    }
    let principal = hermitian_eig(&HermitianMatrix::from_hermitian_part(&cov))?
        .vectors
        .column(0);

    // unit directions with the phase of their principal component removed
    let active: Vec<bool> = norms.iter().map(|&r| r > 1e-12 * max_norm).collect();
    let weights: Vec<f64> = norms
        .iter()
        .zip(&active)
        .map(|(&r, &a)| if a { r * r } else { 0.0 })
        .collect();
    let dirs: Vec<Vec<Complex64>> = block
        .iter()
        .zip(&norms)
        .zip(&active)
        .map(|((y, &r), &a)| {
            if !a {
                return vec![Complex64::new(0.0, 0.0); ch];
            }
            let p: Complex64 = principal.iter().zip(y.iter()).map(|(u, z)| u.conj() * z).sum();
            let rot = if p.norm() > 0.0 {
                p.conj() / p.norm()
            } else {
                Complex64::new(1.0, 0.0)
            };
            y.iter().map(|z| z * rot / r).collect()
        })
        .collect();

    let dist = |x: &[Complex64], c: &[Complex64]| -> f64 { x.iter().zip(c).map(|(a, b)| (a - b).norm_sqr()).sum() };
    let weighted_mean = |select: &dyn Fn(usize) -> f64| -> Option<Vec<Complex64>> {
        let mut c = vec![Complex64::new(0.0, 0.0); ch];
        let mut total = 0.0;
        for (n, x) in dirs.iter().enumerate() {
            let w = weights[n] * select(n);
            total += w;
            for (ci, xi) in c.iter_mut().zip(x) {
                *ci += xi * w;
            }
        }
        (total > 0.0).then(|| c.into_iter().map(|z| z / total).collect())
    };
    let farthest = |from: &[Complex64]| -> usize {
        let mut best = (0, -1.0);
        for (n, x) in dirs.iter().enumerate() {
            let d = weights[n] * dist(x, from);
            if d > best.1 {
                best = (n, d);
            }
        }
        best.0
    };

    let mean = weighted_mean(&|_| 1.0).unwrap_or_else(|| vec![Complex64::new(0.0, 0.0); ch]);
    let first = farthest(&mean);
    let second = farthest(&dirs[first]);
    let mut centroids = [dirs[first].clone(), dirs[second].clone()];
    let mut labels = vec![0usize; frames];
    for iter in 0..KMEANS_ITERATIONS {
        let mut changed = false;
        for (n, x) in dirs.iter().enumerate() {
            let label = usize::from(dist(x, &centroids[1]) < dist(x, &centroids[0]));
            if label != labels[n] {
                labels[n] = label;
                changed = true;
            }
        }
        if iter > 0 && !changed {
            break;
        }
        for (j, c) in centroids.iter_mut().enumerate() {
            if let Some(m) = weighted_mean(&|n| f64::from(u8::from(labels[n] == j))) {
                *c = m;
            }
        }
    }

    Ok(dirs
        .iter()
        .zip(&active)
        .map(|(x, &a)| {
            if !a {
                return 0.5;
            }
            let d0 = dist(x, &centroids[0]);
            let d1 = dist(x, &centroids[1]);
            let m = if d0 + d1 > 0.0 {
                d1 * d1 / (d0 * d0 + d1 * d1)
            } else {
                0.5
            };
            m.clamp(MASK_CLAMP, 1.0 - MASK_CLAMP)
        })
        .collect())
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum()
}

/// Flips the labels of every bin whose source-1 mask anti-correlates with
/// a reference time profile. The first pass uses the loudest bin as the
/// reference, the second the mean of the aligned masks.
fn align_permutations(mut masks: Vec<Vec<f64>>, y: &SpectrogramTensor) -> Vec<Vec<f64>> {
    let bin_power = |f: usize| -> f64 { (0..y.frames()).flat_map(|n| y.at(n, f)).map(|z| z.norm_sqr()).sum() };
    let mut loudest = 0;
    let mut best = -1.0;
    for f in 0..masks.len() {
        let p = bin_power(f);
        if p > best {
            best = p;
            loudest = f;
        }
    }
    let mut reference = masks[loudest].clone();
    for _pass in 0..2 {
        for m in masks.iter_mut() {
            if correlation(m, &reference) < 0.0 {
                m.iter_mut().for_each(|x| *x = 1.0 - *x);
            }
        }
        let frames = reference.len();
        reference = (0..frames)
            .map(|n| masks.iter().map(|m| m[n]).sum::<f64>() / masks.len() as f64)
            .collect();
    }
    masks
}

/// Mask-based initial model; falls back to `init_random(y, 0)` when the
/// observation has fewer than `2 I` frames or a single channel.
pub fn init_from_masks(y: &SpectrogramTensor) -> Result<SpatialModel> {
    match estimate_masks(y)? {
        Some(masks) => model_from_masks(y, &masks),
        None => init_random(y, 0),
    }
}

/// Mask-weighted covariances with unit trace plus loading, and powers
/// `mask * |y|^2 / I + floor`.
pub fn model_from_masks(y: &SpectrogramTensor, masks: &SourceMasks) -> Result<SpatialModel> {
    let (frames, bins, ch) = (y.frames(), y.bins(), y.channels());
    let floor = power_floor(y);
    let mut spatial: [Vec<HermitianMatrix>; 2] = [Vec::with_capacity(bins), Vec::with_capacity(bins)];
    let mut values = [vec![0.0; frames * bins], vec![0.0; frames * bins]];
    for f in 0..bins {
        for (j, s) in spatial.iter_mut().enumerate() {
            let mut acc = CMatrix::zeros(ch, ch);
            let mut total = 0.0;
            for n in 0..frames {
                let m = masks.get(j, n, f);
                let yv = y.at(n, f);
                let data = acc.as_mut_slice();
                for a in 0..ch {
                    for b in 0..ch {
                        data[a * ch + b] += yv[a] * yv[b].conj() * m;
                    }
                }
                total += m;
                let energy: f64 = yv.iter().map(|z| z.norm_sqr()).sum();
                values[j][n * bins + f] = m * energy / ch as f64 + floor[f];
            }
            let mean = if total > 0.0 { acc.scale(1.0 / total) } else { acc };
            let tr = mean.trace().re;
            let normalized = if tr > 0.0 {
                mean.scale(1.0 / tr)
            } else {
                CMatrix::identity(ch).scale(1.0 / ch as f64)
            };
            let loaded = normalized.add(&CMatrix::identity(ch).scale(INIT_LOADING));
            s.push(HermitianMatrix::from_hermitian_part(&loaded));
        }
    }
    SpatialModel::new(PowerSpectra::new(frames, bins, values)?, spatial, floor)
}

/// `S_1 = A A^H + I`, `S_2 = B B^H + I` with seeded complex Gaussian `A`,
/// `B` per bin, and `v_j = |y|^2 / (2 I)` (at least the floor).
pub fn init_random(y: &SpectrogramTensor, seed: u64) -> Result<SpatialModel> {
    let (frames, bins, ch) = (y.frames(), y.bins(), y.channels());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor = power_floor(y);
    let mut spatial: [Vec<HermitianMatrix>; 2] = [Vec::with_capacity(bins), Vec::with_capacity(bins)];
    for _ in 0..bins {
        for s in spatial.iter_mut() {
            let a = random_matrix(ch, &mut rng);
            s.push(HermitianMatrix::from_hermitian_part(
                &a.mul(&a.adjoint()).add(&CMatrix::identity(ch)),
            ));
        }
    }
    let mut values = vec![0.0; frames * bins];
    for n in 0..frames {
        for f in 0..bins {
            let energy: f64 = y.at(n, f).iter().map(|z| z.norm_sqr()).sum();
            values[n * bins + f] = (energy / (2.0 * ch as f64)).max(floor[f]);
        }
    }
    SpatialModel::new(
        PowerSpectra::new(frames, bins, [values.clone(), values])?,
        spatial,
        floor,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{complex_normal, random_problem};
    use rand::Rng;

    /// Two sources with fixed per-bin steering vectors taking turns in
    /// blocks of frames, plus weak noise.
    fn alternating(seed: u64, ch: usize, frames: usize, bins: usize) -> (SpectrogramTensor, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steer: Vec<[Vec<Complex64>; 2]> = (0..bins)
            .map(|_| {
                [
                    (0..ch).map(|_| complex_normal(&mut rng)).collect(),
                    (0..ch).map(|_| complex_normal(&mut rng)).collect(),
                ]
            })
            .collect();
        let first_active: Vec<bool> = (0..frames).map(|n| (n / 7) % 2 == 0).collect();
        let mut data = Vec::new();
        for n in 0..frames {
            for f in 0..bins {
                let j = usize::from(!first_active[n]);
                let s = complex_normal(&mut rng) * rng.gen_range(0.5..2.0);
                for i in 0..ch {
                    data.push(steer[f][j][i] * s + complex_normal(&mut rng) * 1e-3);
                }
            }
        }
        (SpectrogramTensor::new(frames, bins, ch, data).unwrap(), first_active)
    }

    #[test]
    fn masks_recover_alternating_activity() {
        let (y, truth) = alternating(3, 3, 70, 16);
        let masks = estimate_masks(&y).unwrap().unwrap();
        let profile = masks.frame_profile(&y);
        let hits = profile.iter().zip(&truth).filter(|(p, t)| (**p > 0.5) == **t).count();
        let accuracy = hits.max(truth.len() - hits) as f64 / truth.len() as f64;
        assert!(accuracy >= 0.9, "accuracy {accuracy}");
    }

    #[test]
    fn masks_sum_to_one() {
        let (y, _) = random_problem(1, 3, 20, 5).unwrap();
        let masks = estimate_masks(&y).unwrap().unwrap();
        for k in 0..masks.values[0].len() {
            assert!((masks.values[0][k] + masks.values[1][k] - 1.0).abs() < 1e-15);
            assert!(masks.values[0][k] >= MASK_CLAMP && masks.values[0][k] <= 1.0 - MASK_CLAMP);
        }
    }

    #[test]
    fn initializers_satisfy_model_invariants() {
        let (y, _) = random_problem(2, 4, 24, 6).unwrap();
        init_from_masks(&y).unwrap().validate().unwrap();
        init_random(&y, 5).unwrap().validate().unwrap();
    }

    #[test]
    fn identical_directions_still_give_a_valid_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<Complex64> = (0..2).map(|_| complex_normal(&mut rng)).collect();
        let mut data = Vec::new();
        for _ in 0..12 {
            let s = complex_normal(&mut rng);
            data.extend(a.iter().map(|x| x * s));
        }
        let y = SpectrogramTensor::new(12, 1, 2, data).unwrap();
        init_from_masks(&y).unwrap().validate().unwrap();
    }

    #[test]
    fn silent_input_gives_a_valid_model() {
        let y = SpectrogramTensor::zeros(10, 3, 2);
        init_from_masks(&y).unwrap().validate().unwrap();
        init_random(&y, 1).unwrap().validate().unwrap();
    }

    #[test]
    fn too_few_frames_fall_back_to_random() {
        let (y, _) = random_problem(3, 3, 5, 2).unwrap();
        assert_eq!(init_from_masks(&y).unwrap(), init_random(&y, 0).unwrap());
    }

    #[test]
    fn random_init_is_deterministic() {
        let (y, _) = random_problem(4, 2, 8, 3).unwrap();
        assert_eq!(init_random(&y, 11).unwrap(), init_random(&y, 11).unwrap());
        assert_ne!(init_random(&y, 11).unwrap(), init_random(&y, 12).unwrap());
    }

    #[test]
    fn mask_init_is_equivariant_under_channel_permutation() {
        let (y, _) = alternating(5, 3, 42, 6);
        let perm = [2usize, 0, 1];
        let mut data = Vec::with_capacity(y.data().len());
        for n in 0..y.frames() {
            for f in 0..y.bins() {
                let v = y.at(n, f);
                data.extend(perm.iter().map(|&p| v[p]));
            }
        }
        let yp = SpectrogramTensor::new(y.frames(), y.bins(), 3, data).unwrap();
        let a = init_from_masks(&y).unwrap();
        let b = init_from_masks(&yp).unwrap();
        assert!(a.power.max_relative_diff(&b.power) < 1e-9);
        for j in 0..2 {
            for f in 0..y.bins() {
                for r in 0..3 {
                    for c in 0..3 {
                        let d = (b.spatial[j][f][(r, c)] - a.spatial[j][f][(perm[r], perm[c])]).norm();
                        assert!(d < 1e-9, "bin {f} source {j}: {d:e}");
                    }
                }
            }
        }
    }
}
