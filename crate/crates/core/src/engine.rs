//! Iteration driver shared by the conventional and fast engines.
//!
//! Both EM variants decouple completely across frequency bins: every
//! parameter is either per-bin or per-(frame, bin). Each engine therefore
//! implements [`BinEngine`] for the state of a single bin and this module
//! runs the iterations, timing, likelihood bookkeeping and result assembly.

use std::time::Instant;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{Algorithm, Iterate, PowerSpectra, RunOptions, SeparationResult, SpatialIterate, NUM_SOURCES};
use crate::ops::{NoTally, OpReport, OpTally};
use crate::parallel::BinPool;
use crate::pencil::{CMatrix, HermitianMatrix};
use crate::stft::SpectrogramTensor;

/// Spatial parameters of one bin after an iteration.
pub(crate) enum BinRecord {
    Direct([HermitianMatrix; NUM_SOURCES]),
    Transformed {
        basis: CMatrix,
        covariances: [HermitianMatrix; NUM_SOURCES],
    },
}

pub(crate) trait BinEngine: Send {
    /// One EM iteration. Returns the log-likelihood of the parameters the
    /// iteration started from. With `keep_images` the bin retains the MMSE
    /// images computed by this iteration's E-step.
    fn iterate<T: OpTally>(&mut self, keep_images: bool, frame: &mut T, bin: &mut T) -> Result<f64>;

    /// Log-likelihood at the current parameters.
    fn log_likelihood(&self) -> Result<f64>;

    /// MMSE images at the current parameters (used when no iteration runs).
    fn compute_images(&mut self) -> Result<()>;

    fn images(&self) -> Option<&[Vec<Complex64>; NUM_SOURCES]>;

    fn power(&self) -> &[Vec<f64>; NUM_SOURCES];

    fn record(&self) -> BinRecord;
}

/// Observations of each bin as a contiguous `frames x channels` block.
pub(crate) fn split_bins(y: &SpectrogramTensor) -> Vec<Vec<Complex64>> {
    let (frames, bins, ch) = (y.frames(), y.bins(), y.channels());
    (0..bins)
        .map(|f| {
            let mut block = Vec::with_capacity(frames * ch);
            for n in 0..frames {
                block.extend_from_slice(y.at(n, f));
            }
            block
        })
        .collect()
}

pub(crate) struct Shape {
    pub frames: usize,
    pub bins: usize,
    pub channels: usize,
}

pub(crate) fn drive<B: BinEngine>(
    algorithm: Algorithm,
    bins: &mut [B],
    shape: Shape,
    iterations: usize,
    opts: RunOptions,
    mut counts: Option<&mut OpReport>,
) -> Result<SeparationResult> {
    let pool = BinPool::new(opts.threads)?;
    let mut log_likelihood = Vec::with_capacity(iterations + 1);
    let mut iteration_seconds = Vec::with_capacity(iterations);
    let mut iterates = Vec::new();

    for l in 0..iterations {
        let keep_images = l + 1 == iterations;
        let start = Instant::now();
        let parts: Vec<Result<f64>> = match counts.as_deref_mut() {
            Some(report) => {
                let parts = bins
                    .iter_mut()
                    .map(|b| b.iterate(keep_images, &mut report.frame, &mut report.bin))
                    .collect();
                report.frame_visits += (shape.frames * shape.bins) as u64;
                report.bin_visits += shape.bins as u64;
                parts
            }
            None => pool.map(bins, |b| b.iterate(keep_images, &mut NoTally, &mut NoTally)),
        };
        iteration_seconds.push(start.elapsed().as_secs_f64());
        let ll = sum_parts(parts)?;
        if !ll.is_finite() {
            return Err(Error::non_finite(format!("{algorithm} iteration {}", l + 1)));
        }
        log_likelihood.push(ll);
        if opts.record_iterates {
            iterates.push(collect_iterate(bins, &shape)?);
        }
    }

    let final_ll = sum_parts(pool.map(bins, |b| b.log_likelihood()))?;
    if !final_ll.is_finite() {
        return Err(Error::non_finite(format!("{algorithm} final likelihood")));
    }
    log_likelihood.push(final_ll);

    if iterations == 0 {
        pool.map(bins, |b| b.compute_images())
            .into_iter()
            .collect::<Result<Vec<()>>>()?;
    }

    let images = assemble_images(bins, &shape)?;
    if images.iter().any(|t| !t.is_finite()) {
        return Err(Error::non_finite(format!("{algorithm} source images")));
    }
    Ok(SeparationResult {
        algorithm,
        images,
        log_likelihood,
        iteration_seconds,
        iterates,
    })
}

fn sum_parts(parts: Vec<Result<f64>>) -> Result<f64> {
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total)
}

fn collect_iterate<B: BinEngine>(bins: &[B], shape: &Shape) -> Result<Iterate> {
    let mut values = [
        vec![0.0; shape.frames * shape.bins],
        vec![0.0; shape.frames * shape.bins],
    ];
    for (f, b) in bins.iter().enumerate() {
        for (j, src) in b.power().iter().enumerate() {
            for (n, &v) in src.iter().enumerate() {
                values[j][n * shape.bins + f] = v;
            }
        }
    }
    let power = PowerSpectra::new(shape.frames, shape.bins, values)?;

    let records: Vec<BinRecord> = bins.iter().map(|b| b.record()).collect();
    let spatial = match records.first() {
        Some(BinRecord::Transformed { .. }) => {
            let mut basis = Vec::with_capacity(records.len());
            let mut covariances = [Vec::new(), Vec::new()];
            for r in records {
                if let BinRecord::Transformed {
                    basis: p,
                    covariances: [s1, s2],
                } = r
                {
                    basis.push(p);
                    covariances[0].push(s1);
                    covariances[1].push(s2);
                }
            }
            SpatialIterate::Transformed { basis, covariances }
        }
        _ => {
            let mut covariances = [Vec::new(), Vec::new()];
            for r in records {
                if let BinRecord::Direct([s1, s2]) = r {
                    covariances[0].push(s1);
                    covariances[1].push(s2);
                }
            }
            SpatialIterate::Direct(covariances)
        }
    };
    Ok(Iterate { power, spatial })
}

fn assemble_images<B: BinEngine>(bins: &[B], shape: &Shape) -> Result<[SpectrogramTensor; NUM_SOURCES]> {
    let mut out = [
        SpectrogramTensor::zeros(shape.frames, shape.bins, shape.channels),
        SpectrogramTensor::zeros(shape.frames, shape.bins, shape.channels),
    ];
    for (f, b) in bins.iter().enumerate() {
        let images = b
            .images()
            .ok_or_else(|| Error::InvalidInput(format!("bin {f} holds no source images")))?;
        for (j, img) in images.iter().enumerate() {
            for n in 0..shape.frames {
                out[j]
                    .at_mut(n, f)
                    .copy_from_slice(&img[n * shape.channels..(n + 1) * shape.channels]);
            }
        }
    }
    Ok(out)
}
