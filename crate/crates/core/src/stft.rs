//! Square-root-Hann STFT with half-frame hop and perfect-reconstruction
//! overlap-add synthesis.
//!
//! The signal is padded with half a frame of zeros at the start and enough
//! zeros at the end that every input sample lies under exactly two frames.
//! Analysis and synthesis windows multiply to a periodic Hann window, which
//! sums to one at 50% overlap, so synthesis inverts analysis exactly.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Complex STFT coefficients `y(n, f)` in `C^I`, stored frame-major with the
/// channel vector of each time-frequency point contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrogramTensor {
    frames: usize,
    bins: usize,
    channels: usize,
    data: Vec<Complex64>,
}

impl SpectrogramTensor {
    pub fn new(frames: usize, bins: usize, channels: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != frames * bins * channels {
            return Err(Error::InvalidInput(format!(
                "tensor data has {} entries, expected {frames}x{bins}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("tensor contains non-finite values".into()));
        }
        Ok(Self {
            frames,
            bins,
            channels,
            data,
        })
    }

    pub fn zeros(frames: usize, bins: usize, channels: usize) -> Self {
        Self {
            frames,
            bins,
            channels,
            data: vec![Complex64::new(0.0, 0.0); frames * bins * channels],
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
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Channel vector at frame `n`, bin `f`.
    #[inline]
    pub fn at(&self, n: usize, f: usize) -> &[Complex64] {
        let start = (n * self.bins + f) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, f: usize) -> &mut [Complex64] {
        let start = (n * self.bins + f) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn same_shape(&self, other: &SpectrogramTensor) -> bool {
        (self.frames, self.bins, self.channels) == (other.frames, other.bins, other.channels)
    }

    /// Largest `|a - b|` over all entries.
    pub fn max_abs_diff(&self, other: &SpectrogramTensor) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Periodic square-root Hann window of length `len`.
pub fn sqrt_hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|m| (0.5 - 0.5 * (2.0 * PI * m as f64 / len as f64).cos()).sqrt())
        .collect()
}

/// Planned forward/inverse transforms for one frame configuration.
#[derive(Clone)]
pub struct Stft {
    frame_length: usize,
    frame_shift: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft")
            .field("frame_length", &self.frame_length)
            .field("frame_shift", &self.frame_shift)
            .finish()
    }
}

impl Stft {
    pub fn new(frame_length: usize, frame_shift: usize) -> Result<Self> {
        if frame_length < 2 || !frame_length.is_power_of_two() {
            return Err(Error::Config(format!(
                "frame length must be a power of two >= 2, got {frame_length}"
            )));
        }
        if frame_shift * 2 != frame_length {
            return Err(Error::Config(format!(
                "frame shift must be half the frame length ({}), got {frame_shift}",
                frame_length / 2
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            frame_length,
            frame_shift,
            window: sqrt_hann(frame_length),
            forward: planner.plan_fft_forward(frame_length),
            inverse: planner.plan_fft_inverse(frame_length),
        })
    }

    pub fn frame_length(&self) -> usize {
        self.frame_length
    }

    pub fn frame_shift(&self) -> usize {
        self.frame_shift
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Bins up to and including Nyquist.
    pub fn bins(&self) -> usize {
        self.frame_length / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        len.div_ceil(self.frame_shift) + 1
    }

    pub fn analyze(&self, audio: &AudioBuffer) -> SpectrogramTensor {
        let channels = audio.num_channels();
        let frames = self.num_frames(audio.len());
        let bins = self.bins();
        let mut out = SpectrogramTensor::zeros(frames, bins, channels);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.frame_length];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for (ch, samples) in audio.channels().iter().enumerate() {
            for n in 0..frames {
                // frame n starts at padded index n*shift, i.e. signal index n*shift - shift
                let start = (n * self.frame_shift) as isize - self.frame_shift as isize;
                for (m, slot) in buf.iter_mut().enumerate() {
                    let t = start + m as isize;
                    let x = if t >= 0 && (t as usize) < samples.len() {
                        samples[t as usize]
                    } else {
                        0.0
                    };
                    *slot = Complex64::new(x * self.window[m], 0.0);
                }
                self.forward.process_with_scratch(&mut buf, &mut scratch);
                for f in 0..bins {
                    out.data[(n * bins + f) * channels + ch] = buf[f];
                }
            }
        }
        out
    }

    /// Overlap-add synthesis. `length` trims the output to the original
    /// signal length; without it the longest consistent length
    /// `(frames - 1) * shift` is returned.
    pub fn synthesize(&self, spec: &SpectrogramTensor, sample_rate: u32, length: Option<usize>) -> Result<AudioBuffer> {
        if spec.bins() != self.bins() {
            return Err(Error::Config(format!(
                "tensor has {} bins, frame length {} needs {}",
                spec.bins(),
                self.frame_length,
                self.bins()
            )));
        }
        if spec.frames() == 0 {
            return Err(Error::Config("tensor has no frames".into()));
        }
        let max_len = (spec.frames() - 1) * self.frame_shift;
        let len = length.unwrap_or(max_len);
        if len > max_len {
            return Err(Error::Config(format!(
                "requested length {len} exceeds the {max_len} samples covered by {} frames",
                spec.frames()
            )));
        }
        let l = self.frame_length;
        let bins = self.bins();
        let norm = 1.0 / l as f64;
        let mut buf = vec![Complex64::new(0.0, 0.0); l];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let mut channels = Vec::with_capacity(spec.channels());
        for ch in 0..spec.channels() {
            let mut padded = vec![0.0; (spec.frames() + 1) * self.frame_shift];
            for n in 0..spec.frames() {
                let coef = |f: usize| spec.data[(n * bins + f) * spec.channels() + ch];
                buf[0] = Complex64::new(coef(0).re, 0.0);
                buf[l / 2] = Complex64::new(coef(l / 2).re, 0.0);
                for f in 1..l / 2 {
                    let z = coef(f);
                    buf[f] = z;
                    buf[l - f] = z.conj();
                }
                self.inverse.process_with_scratch(&mut buf, &mut scratch);
                let start = n * self.frame_shift;
                for (m, z) in buf.iter().enumerate() {
                    padded[start + m] += z.re * norm * self.window[m];
                }
            }
            channels.push(padded[self.frame_shift..self.frame_shift + len].to_vec());
        }
        AudioBuffer::new(sample_rate, channels)
    }
}

pub fn stft_analyze(audio: &AudioBuffer, frame_length: usize, frame_shift: usize) -> Result<SpectrogramTensor> {
    Ok(Stft::new(frame_length, frame_shift)?.analyze(audio))
}

pub fn stft_synthesize(
    spec: &SpectrogramTensor,
    frame_length: usize,
    frame_shift: usize,
    sample_rate: u32,
    length: Option<usize>,
) -> Result<AudioBuffer> {
    Stft::new(frame_length, frame_shift)?.synthesize(spec, sample_rate, length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(channels: usize, len: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..channels)
            .map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        AudioBuffer::new(16000, data).unwrap()
    }

    /// Direct O(L^2) DFT of one windowed frame, independent of rustfft.
    fn direct_dft_frame(samples: &[f64], start: isize, window: &[f64], bins: usize) -> Vec<Complex64> {
        let l = window.len();
        (0..bins)
            .map(|k| {
                (0..l)
                    .map(|m| {
                        let t = start + m as isize;
                        let x = if t >= 0 && (t as usize) < samples.len() {
                            samples[t as usize]
                        } else {
                            0.0
                        };
                        let ang = -2.0 * PI * (k * m) as f64 / l as f64;
                        Complex64::from_polar(x * window[m], ang)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn table_one_geometry() {
        let stft = Stft::new(1024, 512).unwrap();
        assert_eq!(stft.bins(), 513);
        // 32 ms hop at 16 kHz
        assert_eq!(stft.frame_shift() as f64 / 16000.0, 0.032);
        let spec = stft.analyze(&noise(1, 16000, 0));
        assert_eq!(spec.bins(), 513);
        assert_eq!(spec.frames(), stft.num_frames(16000));
    }

    #[test]
    fn configuration_errors() {
        assert!(matches!(Stft::new(1000, 500), Err(Error::Config(_))));
        assert!(matches!(Stft::new(1024, 256), Err(Error::Config(_))));
        assert!(matches!(Stft::new(1, 0), Err(Error::Config(_))));
        let stft = Stft::new(64, 32).unwrap();
        let wrong = SpectrogramTensor::zeros(4, 17, 1);
        assert!(matches!(stft.synthesize(&wrong, 16000, None), Err(Error::Config(_))));
    }

    #[test]
    fn silence_maps_to_zeros_both_ways() {
        let stft = Stft::new(256, 128).unwrap();
        let spec = stft.analyze(&AudioBuffer::silent(16000, 2, 1000).unwrap());
        assert!(spec.data().iter().all(|z| z.norm() == 0.0));
        let back = stft.synthesize(&spec, 16000, Some(1000)).unwrap();
        assert!(back.channels().iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn matches_direct_dft_and_concentrates_bin_center_sinusoid() {
        let l = 64;
        let stft = Stft::new(l, l / 2).unwrap();
        let k0 = 5;
        let samples: Vec<f64> = (0..400)
            .map(|t| (2.0 * PI * (k0 * t) as f64 / l as f64).cos())
            .collect();
        let audio = AudioBuffer::mono(16000, samples.clone()).unwrap();
        let spec = stft.analyze(&audio);
        for n in [0usize, 3, 7] {
            let start = (n * l / 2) as isize - (l / 2) as isize;
            let oracle = direct_dft_frame(&samples, start, stft.window(), stft.bins());
            for f in 0..stft.bins() {
                assert!((spec.at(n, f)[0] - oracle[f]).norm() < 1e-10);
            }
        }
        // an interior frame: the sqrt-Hann main lobe keeps most energy at k0
        let n = 6;
        let energy: Vec<f64> = (0..stft.bins()).map(|f| spec.at(n, f)[0].norm_sqr()).collect();
        let total: f64 = energy.iter().sum();
        let peak = energy
            .iter()
            .cloned()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        assert_eq!(peak, k0);
        assert!(energy[k0 - 1..=k0 + 1].iter().sum::<f64>() > 0.98 * total);
    }

    #[test]
    fn parseval_per_frame() {
        let l = 128;
        let stft = Stft::new(l, l / 2).unwrap();
        let audio = noise(1, 1000, 9);
        let spec = stft.analyze(&audio);
        for n in 1..spec.frames() - 1 {
            let start = (n * l / 2) as isize - (l / 2) as isize;
            let time: f64 = (0..l)
                .map(|m| {
                    let t = start + m as isize;
                    let x = if t >= 0 && (t as usize) < audio.len() {
                        audio.channel(0)[t as usize]
                    } else {
                        0.0
                    };
                    (x * stft.window()[m]).powi(2)
                })
                .sum();
            let freq: f64 = (0..stft.bins())
                .map(|f| {
                    let w = if f == 0 || f == l / 2 { 1.0 } else { 2.0 };
                    w * spec.at(n, f)[0].norm_sqr()
                })
                .sum();
            assert!((freq / l as f64 - time).abs() <= 1e-10 * time.max(1e-300));
        }
    }

    #[test]
    fn roundtrip_three_seconds_four_channels() {
        let stft = Stft::new(1024, 512).unwrap();
        let audio = noise(4, 48000, 1);
        let back = stft
            .synthesize(&stft.analyze(&audio), 16000, Some(audio.len()))
            .unwrap();
        let err = audio
            .channels()
            .iter()
            .flatten()
            .zip(back.channels().iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-6, "max abs error {err:e}");
    }

    #[test]
    fn linearity() {
        let stft = Stft::new(256, 128).unwrap();
        let x = noise(2, 2000, 2);
        let y = noise(2, 2000, 3);
        let combo = x.scaled(0.7).try_add(&y.scaled(-1.3)).unwrap();
        let (sx, sy, sc) = (stft.analyze(&x), stft.analyze(&y), stft.analyze(&combo));
        let scale = sc.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
        for ((a, b), c) in sx.data().iter().zip(sy.data()).zip(sc.data()) {
            assert!((a * 0.7 - b * 1.3 - c).norm() <= 1e-12 * scale);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn perfect_reconstruction(len in 1usize..3000, log_l in 3u32..10, seed in any::<u64>()) {
            let l = 1usize << log_l;
            let stft = Stft::new(l, l / 2).unwrap();
            let audio = noise(1, len, seed);
            let back = stft.synthesize(&stft.analyze(&audio), 16000, Some(len)).unwrap();
            let peak = audio.peak().max(1e-300);
            for (a, b) in audio.channel(0).iter().zip(back.channel(0)) {
                prop_assert!((a - b).abs() <= 1e-6 * peak);
            }
        }
    }
}
