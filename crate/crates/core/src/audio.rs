use crate::error::{Error, Result};

/// Multichannel time-domain audio, one `Vec` per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    sample_rate: u32,
    channels: Vec<Vec<f64>>,
}

impl AudioBuffer {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if channels.is_empty() {
            return Err(Error::InvalidInput("audio needs at least one channel".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidInput("all channels must have the same length".into()));
        }
        Ok(Self { sample_rate, channels })
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        Self::new(sample_rate, vec![samples])
    }

    pub fn silent(sample_rate: u32, channels: usize, len: usize) -> Result<Self> {
        Self::new(sample_rate, vec![vec![0.0; len]; channels])
    }

    #[inline]
    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    #[inline]
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn channel_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.channels[i]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn peak(&self) -> f64 {
        self.channels.iter().flatten().fold(0.0, |m, &x| m.max(x.abs()))
    }

    pub fn energy(&self) -> f64 {
        self.channels.iter().flatten().map(|x| x * x).sum()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            sample_rate: self.sample_rate,
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|x| x * gain).collect())
                .collect(),
        }
    }

    /// Samplewise sum. Fails on shape or rate mismatch.
    pub fn try_add(&self, other: &AudioBuffer) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            sample_rate: self.sample_rate,
            channels: self
                .channels
                .iter()
                .zip(&other.channels)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect(),
        })
    }

    pub fn check_same_shape(&self, other: &AudioBuffer) -> Result<()> {
        if self.sample_rate != other.sample_rate
            || self.num_channels() != other.num_channels()
            || self.len() != other.len()
        {
            return Err(Error::InvalidInput(format!(
                "audio shape mismatch: {} ch x {} @ {} Hz vs {} ch x {} @ {} Hz",
                self.num_channels(),
                self.len(),
                self.sample_rate,
                other.num_channels(),
                other.len(),
                other.sample_rate
            )));
        }
        Ok(())
    }
}
