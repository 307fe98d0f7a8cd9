//! Parameter containers shared by both EM engines.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pencil::{hermitian_eig, CMatrix, HermitianMatrix, DEFINITENESS_FLOOR};
use crate::stft::SpectrogramTensor;

/// Only the two-source case admits exact joint diagonalization.
pub const NUM_SOURCES: usize = 2;

/// Power floor as a fraction of the mean mixture power of each bin.
pub const POWER_FLOOR_RATIO: f64 = 1e-10;

/// Absolute lower bound on the power floor, reached only by silent bins.
pub const MIN_POWER_FLOOR: f64 = 1e-30;

/// Loading applied after each covariance update, relative to the mean
/// generalized eigenvalue of the updated covariance against the previous
/// `S_2`. The loading matrix is that previous `S_2`, which is the identity
/// in the jointly-diagonalizing basis.
pub const COVARIANCE_LOADING: f64 = 1e-9;

/// Per-source power spectra `v_j(n, f)`, stored `n * bins + f`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerSpectra {
    frames: usize,
    bins: usize,
    values: [Vec<f64>; NUM_SOURCES],
}

impl PowerSpectra {
    pub fn new(frames: usize, bins: usize, values: [Vec<f64>; NUM_SOURCES]) -> Result<Self> {
        if values.iter().any(|v| v.len() != frames * bins) {
            return Err(Error::InvalidInput(format!(
                "power spectra must have {frames}x{bins} entries per source"
            )));
        }
        Ok(Self { frames, bins, values })
    }

    pub fn filled(frames: usize, bins: usize, value: f64) -> Self {
        Self {
            frames,
            bins,
            values: [vec![value; frames * bins], vec![value; frames * bins]],
        }
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn get(&self, j: usize, n: usize, f: usize) -> f64 {
        self.values[j][n * self.bins + f]
    }

    #[inline]
    pub fn set(&mut self, j: usize, n: usize, f: usize, value: f64) {
        self.values[j][n * self.bins + f] = value;
    }

    pub fn source(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    /// Largest elementwise `|a - b| / max(|a|, |b|)`.
    pub fn max_relative_diff(&self, other: &PowerSpectra) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b))
            .map(|(&a, &b)| {
                let scale = a.abs().max(b.abs());
                if scale == 0.0 {
                    0.0
                } else {
                    (a - b).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }
}

/// `R_j(n, f) = v_j(n, f) S_j(f)` for the two sources, plus the per-bin power floor.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialModel {
    pub power: PowerSpectra,
    pub spatial: [Vec<HermitianMatrix>; NUM_SOURCES],
    pub power_floor: Vec<f64>,
}

impl SpatialModel {
    pub fn new(
        power: PowerSpectra,
        spatial: [Vec<HermitianMatrix>; NUM_SOURCES],
        power_floor: Vec<f64>,
    ) -> Result<Self> {
        let model = Self {
            power,
            spatial,
            power_floor,
        };
        model.check_shapes()?;
        Ok(model)
    }

    pub fn frames(&self) -> usize {
        self.power.frames()
    }

    pub fn bins(&self) -> usize {
        self.power.bins()
    }

    pub fn channels(&self) -> usize {
        self.spatial[0].first().map_or(0, |s| s.order())
    }

    fn check_shapes(&self) -> Result<()> {
        let bins = self.bins();
        let order = self.channels();
        if self.power_floor.len() != bins {
            return Err(Error::InvalidInput("power floor must have one entry per bin".into()));
        }
        for s in &self.spatial {
            if s.len() != bins || s.iter().any(|m| m.order() != order) {
                return Err(Error::InvalidInput(
                    "spatial covariances must be one IxI matrix per bin".into(),
                ));
            }
        }
        Ok(())
    }

    /// Checks every model invariant: shapes, floored positive powers and
    /// positive-definite covariances.
    pub fn validate(&self) -> Result<()> {
        self.check_shapes()?;
        for f in 0..self.bins() {
            let floor = self.power_floor[f];
            if !(floor > 0.0) {
                return Err(Error::InvalidInput(format!("non-positive power floor in bin {f}")));
            }
            for j in 0..NUM_SOURCES {
                for n in 0..self.frames() {
                    let v = self.power.get(j, n, f);
                    if !(v >= floor) || !v.is_finite() {
                        return Err(Error::InvalidInput(format!(
                            "power v_{}({n},{f}) = {v:e} below floor {floor:e}",
                            j + 1
                        )));
                    }
                }
                let eig = hermitian_eig(&self.spatial[j][f])?;
                let min = *eig.values.last().unwrap();
                let mean = eig.values.iter().sum::<f64>() / eig.values.len() as f64;
                if !(min > 0.0) || min <= DEFINITENESS_FLOOR * mean {
                    return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
                }
            }
        }
        Ok(())
    }

    /// Checks that the model's dimensions match an observation tensor.
    pub fn check_matches(&self, y: &SpectrogramTensor) -> Result<()> {
        self.check_shapes()?;
        if (self.frames(), self.bins(), self.channels()) != (y.frames(), y.bins(), y.channels()) {
            return Err(Error::InvalidInput(format!(
                "model is {}x{}x{} but observations are {}x{}x{}",
                self.frames(),
                self.bins(),
                self.channels(),
                y.frames(),
                y.bins(),
                y.channels()
            )));
        }
        Ok(())
    }
}

/// `POWER_FLOOR_RATIO` times the mean per-channel mixture power of each bin.
pub fn power_floor(y: &SpectrogramTensor) -> Vec<f64> {
    let denom = (y.frames() * y.channels()).max(1) as f64;
    (0..y.bins())
        .map(|f| {
            let power: f64 = (0..y.frames()).flat_map(|n| y.at(n, f)).map(|z| z.norm_sqr()).sum();
            (POWER_FLOOR_RATIO * power / denom).max(MIN_POWER_FLOOR)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "FCA")]
    Fca,
    #[serde(rename = "FastFCA")]
    FastFca,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Fca => "FCA",
            Algorithm::FastFca => "FastFCA",
        })
    }
}

/// Spatial parameters of one recorded EM iterate.
#[derive(Clone, Debug)]
pub enum SpatialIterate {
    /// Covariances `S_j(f)` in the microphone basis.
    Direct([Vec<HermitianMatrix>; NUM_SOURCES]),
    /// Covariances `P^H S_j P` expressed in the basis `P(f)` that was
    /// current when they were estimated.
    Transformed {
        basis: Vec<CMatrix>,
        covariances: [Vec<HermitianMatrix>; NUM_SOURCES],
    },
}

/// Parameters after one EM iteration.
#[derive(Clone, Debug)]
pub struct Iterate {
    pub power: PowerSpectra,
    pub spatial: SpatialIterate,
}

#[derive(Clone, Debug)]
pub struct SeparationResult {
    pub algorithm: Algorithm,
    /// MMSE source images `mu_j(n, f)`.
    pub images: [SpectrogramTensor; NUM_SOURCES],
    /// Log-likelihood of the parameters before the first and after every
    /// iteration (`iterations + 1` entries).
    pub log_likelihood: Vec<f64>,
    pub iteration_seconds: Vec<f64>,
    /// Empty unless [`RunOptions::record_iterates`] was set.
    pub iterates: Vec<Iterate>,
}

impl SeparationResult {
    /// Wall-clock of the EM iterations.
    pub fn em_seconds(&self) -> f64 {
        self.iteration_seconds.iter().sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    /// Worker threads for the per-bin loops; 1 runs inline.
    pub threads: usize,
    pub record_iterates: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            record_iterates: false,
        }
    }
}
