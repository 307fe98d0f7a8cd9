//! Separation quality and processing speed.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::model::Algorithm;

/// Taps of the least-squares distortion filter allowed by [`sdr`].
pub const SDR_FILTER_TAPS: usize = 32;

/// SDR values are clamped to `[-SDR_CAP_DB, SDR_CAP_DB]`.
pub const SDR_CAP_DB: f64 = 300.0;

/// Signal-to-distortion ratio in dB, averaged over channels.
///
/// Per channel the estimate is projected onto the span of the reference
/// delayed by `0..=max_shift` samples; the SDR is the energy ratio of the
/// projection to the residual.
pub fn sdr(estimate: &AudioBuffer, reference: &AudioBuffer, max_shift: usize) -> Result<f64> {
    if estimate.num_channels() != reference.num_channels() || estimate.len() != reference.len() {
        return Err(Error::InvalidInput(format!(
            "estimate is {}x{} but reference is {}x{}",
            estimate.num_channels(),
            estimate.len(),
            reference.num_channels(),
            reference.len()
        )));
    }
    let mut total = 0.0;
    for (e, r) in estimate.channels().iter().zip(reference.channels()) {
        total += channel_sdr(e, r, max_shift)?;
    }
    Ok(total / estimate.num_channels() as f64)
}

fn channel_sdr(e: &[f64], r: &[f64], max_shift: usize) -> Result<f64> {
    let p = project(e, r, max_shift)?;
    let signal: f64 = p.iter().map(|x| x * x).sum();
    let residual: f64 = e.iter().zip(&p).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(ratio_db(signal, residual))
}

/// `10 log10(signal / residual)`, clamped to the cap.
pub(crate) fn ratio_db(signal: f64, residual: f64) -> f64 {
    let value = 10.0 * (signal / residual).log10();
    if value.is_nan() {
        -SDR_CAP_DB
    } else {
        value.clamp(-SDR_CAP_DB, SDR_CAP_DB)
    }
}

/// Least-squares projection of `e` onto `r` delayed by `0..=max_shift` samples.
pub(crate) fn project(e: &[f64], r: &[f64], max_shift: usize) -> Result<Vec<f64>> {
    let len = r.len();
    let taps = (max_shift + 1).min(len.max(1));
    let ref_energy: f64 = r.iter().map(|x| x * x).sum();
    if !(ref_energy > 0.0) {
        return Err(Error::UndefinedMetric("reference channel is silent".into()));
    }

    // normal equations of min_h |e - sum_k h_k r(. - k)|^2
    let autocorr: Vec<f64> = (0..taps).map(|d| (0..len - d).map(|u| r[u] * r[u + d]).sum()).collect();
    let mut gram = vec![0.0; taps * taps];
    for k in 0..taps {
        for l in 0..taps {
            let (d, m) = (k.abs_diff(l), k.max(l));
            // drop the products whose later factor falls past the end once shifted
            let tail: f64 = (len - m..len - d).map(|u| r[u] * r[u + d]).sum();
            gram[k * taps + l] = autocorr[d] - tail;
        }
    }
    let mut rhs: Vec<f64> = (0..taps).map(|k| (k..len).map(|t| e[t] * r[t - k]).sum()).collect();
    let loading = 1e-12 * autocorr[0];
    for k in 0..taps {
        gram[k * taps + k] += loading;
    }
    solve_spd(&mut gram, &mut rhs, taps)?;
    Ok((0..len)
        .map(|t| (0..taps.min(t + 1)).map(|k| rhs[k] * r[t - k]).sum())
        .collect())
}

/// Solves `A x = b` for symmetric positive-definite `A` (overwritten by its
/// Cholesky factor); `b` receives `x`.
fn solve_spd(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::UndefinedMetric("reference autocorrelation is singular".into()));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(())
}

/// SDR of each reference under the better of the two estimate pairings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedSdr {
    /// `sdr[j]` belongs to reference `j`.
    pub sdr: [f64; 2],
    /// `pairing[j]` is the estimate assigned to reference `j`.
    pub pairing: [usize; 2],
}

impl PairedSdr {
    pub fn mean(&self) -> f64 {
        (self.sdr[0] + self.sdr[1]) / 2.0
    }
}

pub fn paired_sdr(estimates: &[AudioBuffer; 2], references: &[AudioBuffer; 2]) -> Result<PairedSdr> {
    let mut table = [[0.0; 2]; 2];
    for (j, r) in references.iter().enumerate() {
        for (k, e) in estimates.iter().enumerate() {
            table[j][k] = sdr(e, r, SDR_FILTER_TAPS - 1)?;
        }
    }
    let straight = table[0][0] + table[1][1];
    let swapped = table[0][1] + table[1][0];
    Ok(if swapped > straight {
        PairedSdr {
            sdr: [table[0][1], table[1][0]],
            pairing: [1, 0],
        }
    } else {
        PairedSdr {
            sdr: [table[0][0], table[1][1]],
            pairing: [0, 1],
        }
    })
}

/// Processing time over audio duration, median over repeats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RtfMeasurement {
    pub rtf: f64,
    pub seconds: Vec<f64>,
}

pub const DEFAULT_RTF_REPEATS: usize = 3;

/// Times `run` `repeats` times (at least once) against `audio_seconds` of audio.
pub fn measure_rtf<F>(mut run: F, audio_seconds: f64, repeats: usize) -> Result<RtfMeasurement>
where
    F: FnMut() -> Result<()>,
{
    if !(audio_seconds > 0.0) {
        return Err(Error::InvalidInput("audio duration must be positive".into()));
    }
    let mut seconds = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        run()?;
        seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(RtfMeasurement {
        rtf: median(&seconds) / audio_seconds,
        seconds,
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => sorted[n / 2],
        _ => (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0,
    }
}

/// Outcome of one separation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub algorithm: Algorithm,
    /// Empty when no references were available.
    pub sdr_per_source: Vec<f64>,
    pub sdr_mean: Option<f64>,
    pub rtf: f64,
    pub iteration_times: Vec<f64>,
}
