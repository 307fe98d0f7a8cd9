//! Synthetic reverberant two-source mixtures with known source images.
//!
//! Impulse responses are a delayed direct path followed by Gaussian noise
//! under an exponential envelope that falls by 60 dB at the reverberation
//! time. Sources are speech-shaped noise: filtered Gaussian noise switched
//! on and off at a syllabic rate with a formant-like resonance that moves
//! from one syllable to the next.

use std::f64::consts::{LN_10, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::metrics::{project, ratio_db, SDR_FILTER_TAPS};

/// Reverberation times of the benchmark conditions, in seconds.
pub const RT60_PRESETS: [f64; 6] = [0.13, 0.20, 0.25, 0.30, 0.37, 0.44];

pub const DEFAULT_SAMPLE_RATE: u32 = 16000;

/// Default length of generated sources, in seconds.
pub const DEFAULT_DURATION: f64 = 8.0;

/// Gain of the reverberant tail relative to a unit direct path.
pub const DEFAULT_TAIL_GAIN: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    /// Reverberation time in seconds.
    pub rt60: f64,
    pub channels: usize,
    pub sample_rate: u32,
    /// Impulse response length in samples.
    pub filter_length: usize,
    pub seed: u64,
    /// `direct_delays[j][i]`: direct-path delay in samples, source `j`, channel `i`.
    pub direct_delays: [Vec<usize>; 2],
    pub direct_gains: [Vec<f64>; 2],
    pub tail_gain: f64,
}

impl RoomSpec {
    /// Default geometry: the direct-path delays of the two sources run in
    /// opposite directions across the array, and responses last one
    /// reverberation time.
    pub fn preset(rt60: f64, channels: usize, seed: u64) -> Self {
        let delays = |reverse: bool| -> Vec<usize> {
            (0..channels)
                .map(|i| 4 + 2 * if reverse { channels - 1 - i } else { i })
                .collect()
        };
        let gains = |reverse: bool| -> Vec<f64> {
            (0..channels)
                .map(|i| 1.0 - 0.05 * (if reverse { channels - 1 - i } else { i }) as f64)
                .collect()
        };
        let max_delay = 4 + 2 * channels.saturating_sub(1);
        Self {
            rt60,
            channels,
            sample_rate: DEFAULT_SAMPLE_RATE,
            filter_length: ((rt60 * DEFAULT_SAMPLE_RATE as f64).round() as usize).max(max_delay + 1),
            seed,
            direct_delays: [delays(false), delays(true)],
            direct_gains: [gains(false), gains(true)],
            tail_gain: DEFAULT_TAIL_GAIN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.rt60 > 0.0) || !self.rt60.is_finite() {
            return bad(format!("rt60 must be positive, got {}", self.rt60));
        }
        if self.channels < 2 {
            return bad("at least two channels are required".into());
        }
        if self.filter_length == 0 || self.sample_rate == 0 {
            return bad("filter length and sample rate must be positive".into());
        }
        for j in 0..2 {
            if self.direct_delays[j].len() != self.channels || self.direct_gains[j].len() != self.channels {
                return bad("one direct delay and gain per channel and source is required".into());
            }
            if self.direct_delays[j].iter().any(|&d| d >= self.filter_length) {
                return bad("direct delays must lie inside the filter".into());
            }
        }
        if !(self.tail_gain >= 0.0) {
            return bad("tail gain must be non-negative".into());
        }
        Ok(())
    }
}

/// Impulse responses indexed `[source][channel]`.
pub type RoomResponses = [Vec<Vec<f64>>; 2];

/// Direct impulse plus exponentially decaying Gaussian tail, deterministic
/// in `spec.seed`. Each (source, channel) pair draws from its own stream.
pub fn synth_rir(spec: &RoomSpec) -> Result<RoomResponses> {
    spec.validate()?;
    let decay = 3.0 * LN_10 / (spec.rt60 * spec.sample_rate as f64);
    let make = |j: usize, i: usize| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream((j * spec.channels + i) as u64 + 1);
        let delay = spec.direct_delays[j][i];
        let gain = spec.direct_gains[j][i];
        let mut h = vec![0.0; spec.filter_length];
        h[delay] = gain;
        for (t, x) in h.iter_mut().enumerate().skip(delay + 1) {
            let g: f64 = rng.sample(StandardNormal);
            *x = gain * spec.tail_gain * g * (-decay * (t - delay) as f64).exp();
        }
        h
    };
    let pairs: Vec<(usize, usize)> = (0..2).flat_map(|j| (0..spec.channels).map(move |i| (j, i))).collect();
    let mut all: Vec<Vec<f64>> = pairs.par_iter().map(|&(j, i)| make(j, i)).collect();
    let second = all.split_off(spec.channels);
    Ok([all, second])
}

/// Linear convolution truncated to `signal.len()` samples.
pub fn convolve(signal: &[f64], filter: &[f64]) -> Vec<f64> {
    let len = signal.len();
    if len == 0 || filter.is_empty() {
        return vec![0.0; len];
    }
    let size = (len + filter.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);
    let pad = |x: &[f64]| -> Vec<Complex64> {
        let mut v: Vec<Complex64> = x.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        v.resize(size, Complex64::new(0.0, 0.0));
        v
    };
    let mut a = pad(signal);
    let mut b = pad(filter);
    forward.process(&mut a);
    forward.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inverse.process(&mut a);
    a[..len].iter().map(|z| z.re / size as f64).collect()
}

/// Mixture and the two source images `x_j`; `mixture = x_1 + x_2`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub mixture: AudioBuffer,
    pub images: [AudioBuffer; 2],
}

/// Convolves each mono source with its responses and rescales the second
/// image so that the mixture has the same input SDR against either image.
///
/// That common value is 0 dB up to the sample cross-correlation of the two
/// images, which no gain can remove.
pub fn mix(sources: [&AudioBuffer; 2], rirs: &RoomResponses) -> Result<GroundTruth> {
    let [s1, s2] = sources;
    if s1.num_channels() != 1 || s2.num_channels() != 1 {
        return Err(Error::Config("sources must be single-channel".into()));
    }
    if s1.len() != s2.len() || s1.sample_rate() != s2.sample_rate() {
        return Err(Error::Config("sources must share length and sample rate".into()));
    }
    if rirs[0].len() != rirs[1].len() || rirs[0].is_empty() {
        return Err(Error::Config("both sources need one response per channel".into()));
    }
    let rate = s1.sample_rate();
    let image = |src: &AudioBuffer, responses: &[Vec<f64>]| -> Result<AudioBuffer> {
        let channels = responses.par_iter().map(|h| convolve(src.channel(0), h)).collect();
        AudioBuffer::new(rate, channels)
    };
    let x1 = image(s1, &rirs[0])?;
    let mut x2 = image(s2, &rirs[1])?;

    if let Some(gain) = balancing_gain(&x1, &x2)? {
        x2 = x2.scaled(gain);
    }
    let mixture = x1.try_add(&x2)?;
    Ok(GroundTruth {
        mixture,
        images: [x1, x2],
    })
}

/// Gain `g` on `x2` at which the channel-averaged `sdr(x1 + g x2, x1)`
/// and `sdr(x1 + g x2, x2)` agree, or `None` if either image is silent.
///
/// The projections are linear in the mixture, so each channel's SDR is a
/// ratio of quadratics in `g` and the balance point is found by bisection
/// on `ln g` without recomputing any projection.
fn balancing_gain(x1: &AudioBuffer, x2: &AudioBuffer) -> Result<Option<f64>> {
    let shift = SDR_FILTER_TAPS - 1;
    let dot = |u: &[f64], v: &[f64]| -> f64 { u.iter().zip(v).map(|(x, y)| x * y).sum() };
    // per channel, with m = a + g b: onto the shifts of a, P m = a + g P_a(b)
    // and m - P m = g (b - P_a(b)); onto the shifts of b, P m = P_b(a) + g b
    // and m - P m = a - P_b(a)
    let mut channels = Vec::new();
    let (mut total_a, mut total_b) = (0.0, 0.0);
    for (a, b) in x1.channels().iter().zip(x2.channels()) {
        let ea = dot(a, a);
        let eb = dot(b, b);
        if ea == 0.0 || eb == 0.0 {
            continue;
        }
        total_a += ea;
        total_b += eb;
        let pab = project(b, a, shift)?;
        let pba = project(a, b, shift)?;
        let (nab, nba) = (dot(&pab, &pab), dot(&pba, &pba));
        channels.push([
            ea,
            2.0 * dot(a, &pab),
            nab,
            eb - 2.0 * dot(b, &pab) + nab,
            nba,
            2.0 * dot(b, &pba),
            eb,
            ea - 2.0 * dot(a, &pba) + nba,
        ]);
    }
    if channels.is_empty() {
        return Ok(None);
    }
    let centre = 0.5 * (total_a / total_b).ln();
    // an image inside the span of the other's shifts has no finite balance
    // point; equal energies are the only sensible choice then
    if channels.iter().any(|c| c[3] <= 1e-9 * c[6] || c[7] <= 1e-9 * c[0]) {
        return Ok(Some(centre.exp()));
    }
    // mean SDR against x1 minus mean SDR against x2; decreasing in g
    let imbalance = |g: f64| -> f64 {
        channels
            .iter()
            .map(|c| {
                let first = ratio_db(c[0] + g * c[1] + g * g * c[2], g * g * c[3]);
                let second = ratio_db(c[4] + g * c[5] + g * g * c[6], c[7]);
                first - second
            })
            .sum::<f64>()
    };
    let (mut lo, mut hi) = (centre - 10.0, centre + 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if imbalance(mid.exp()) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some((0.5 * (lo + hi)).exp()))
}

/// When a speech-shaped source is active.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activity {
    /// Random syllable-length bursts and pauses.
    Syllabic,
    /// Active during alternate blocks of `period` seconds, starting with
    /// the first block when `first` is true.
    Alternating { period: f64, first: bool },
}

/// Gaussian noise through a time-varying two-pole resonance and a
/// low-pass tilt, gated by `activity`. Peak-normalized to 0.5.
pub fn speech_shaped_noise(len: usize, sample_rate: u32, seed: u64, activity: Activity) -> Result<AudioBuffer> {
    let fs = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    let (mut y1, mut y2, mut tilt) = (0.0, 0.0, 0.0);
    let mut t = 0;
    let mut on = rng.gen_bool(0.5);
    while t < len {
        let seconds = if on {
            rng.gen_range(0.12..0.30)
        } else {
            rng.gen_range(0.05..0.20)
        };
        let seg = ((seconds * fs) as usize).max(1).min(len - t);
        let centre = 250.0 * (12.0f64).powf(rng.gen::<f64>());
        let radius = 0.97;
        let (a1, a2) = (2.0 * radius * (2.0 * PI * centre / fs).cos(), -radius * radius);
        let level = rng.gen_range(0.5..1.5);
        for k in 0..seg {
            let white: f64 = rng.sample(StandardNormal);
            let y0 = white + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y0;
            tilt = 0.6 * tilt + 0.4 * y0;
            let n = t + k;
            let gate = match activity {
                Activity::Syllabic => {
                    if on {
                        // 10 ms raised-cosine ramps
                        let ramp = (0.01 * fs).max(1.0);
                        let edge = (k as f64).min((seg - 1 - k) as f64);
                        if edge < ramp {
                            0.5 - 0.5 * (PI * edge / ramp).cos()
                        } else {
                            1.0
                        }
                    } else {
                        0.0
                    }
                }
                Activity::Alternating { period, first } => {
                    let block = (n as f64 / (period * fs)) as usize;
                    if (block % 2 == 0) == first {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            out[n] = tilt * level * gate;
        }
        t += seg;
        on = !on;
    }
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|x| *x *= 0.5 / peak);
    }
    AudioBuffer::mono(sample_rate, out)
}

/// Benchmark trial: two speech-shaped sources in the preset room for
/// `rt60`, all seeded from `seed`.
pub fn simulate_trial(rt60: f64, channels: usize, duration: f64, seed: u64) -> Result<GroundTruth> {
    let spec = RoomSpec::preset(rt60, channels, seed);
    let len = (duration * spec.sample_rate as f64).round() as usize;
    let s1 = speech_shaped_noise(
        len,
        spec.sample_rate,
        seed.wrapping_mul(2).wrapping_add(1),
        Activity::Syllabic,
    )?;
    let s2 = speech_shaped_noise(
        len,
        spec.sample_rate,
        seed.wrapping_mul(2).wrapping_add(2),
        Activity::Syllabic,
    )?;
    mix([&s1, &s2], &synth_rir(&spec)?)
}
