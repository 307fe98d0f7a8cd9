//! Flat `key = value` run configuration.
//!
//! ```text
//! # analysis
//! sampling_frequency = 16000
//! frame_length = 1024
//! frame_shift = 512
//! window = sqrt_hann
//! number_of_em_iterations = 10
//! algorithm = both
//! init = masks
//! rt60 = 0.13, 0.20, 0.25, 0.30, 0.37, 0.44
//! ```
//!
//! Blank lines and `#` comments are ignored. Unknown keys and repeated
//! keys are errors. Every key is optional; missing keys keep their default.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{DEFAULT_DURATION, DEFAULT_SAMPLE_RATE, RT60_PRESETS};

/// Upper bounds that keep a configuration within desk-scale resources.
pub const MAX_ITERATIONS: usize = 10_000;
pub const MAX_FRAME_LENGTH: usize = 1 << 16;
pub const MAX_CHANNELS: usize = 64;
pub const MAX_DURATION: f64 = 3600.0;
pub const MAX_TRIALS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmChoice {
    Fca,
    Fastfca,
    Both,
}

impl FromStr for AlgorithmChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fca" => Ok(Self::Fca),
            "fastfca" => Ok(Self::Fastfca),
            "both" => Ok(Self::Both),
            _ => Err(Error::Config(format!("unknown algorithm '{s}' (fca, fastfca, both)"))),
        }
    }
}

impl fmt::Display for AlgorithmChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fca => "fca",
            Self::Fastfca => "fastfca",
            Self::Both => "both",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    Masks,
    Random,
}

impl FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "masks" => Ok(Self::Masks),
            "random" => Ok(Self::Random),
            _ => Err(Error::Config(format!("unknown init '{s}' (masks, random)"))),
        }
    }
}

impl fmt::Display for InitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Masks => "masks",
            Self::Random => "random",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub sample_rate: u32,
    pub frame_length: usize,
    pub frame_shift: usize,
    pub iterations: usize,
    pub algorithm: AlgorithmChoice,
    pub seed: u64,
    pub init: InitMethod,
    /// Reverberation times in seconds for simulation and benchmarking.
    pub rt60: Vec<f64>,
    pub channels: usize,
    /// Simulated source length in seconds.
    pub duration: f64,
    pub trials: usize,
    pub threads: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            frame_length: 1024,
            frame_shift: 512,
            iterations: 10,
            algorithm: AlgorithmChoice::Both,
            seed: 0,
            init: InitMethod::Masks,
            rt60: RT60_PRESETS.to_vec(),
            channels: 4,
            duration: DEFAULT_DURATION,
            trials: 10,
            threads: 1,
            out_dir: None,
        }
    }
}

fn parse_number<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

impl RunConfig {
    /// Parses configuration text on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", number + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("line {}: '{key}' given twice", number + 1)));
            }
            config
                .set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", number + 1, strip_prefix(e))))?;
            seen.push(key.to_string());
        }
        config.validate()?;
        Ok(config)
    }

    /// Applies one `key = value` setting without validating the whole config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "sampling_frequency" => self.sample_rate = parse_number(key, value)?,
            "frame_length" => self.frame_length = parse_number(key, value)?,
            "frame_shift" => self.frame_shift = parse_number(key, value)?,
            "window" => {
                if value != "sqrt_hann" {
                    return Err(Error::Config(format!(
                        "window: only sqrt_hann is supported, got '{value}'"
                    )));
                }
            }
            "number_of_em_iterations" => self.iterations = parse_number(key, value)?,
            "algorithm" => self.algorithm = value.parse()?,
            "seed" => self.seed = parse_number(key, value)?,
            "init" => self.init = value.parse()?,
            "rt60" => {
                self.rt60 = value
                    .split(',')
                    .map(|v| parse_number::<f64>(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "channels" => self.channels = parse_number(key, value)?,
            "duration" => self.duration = parse_number(key, value)?,
            "trials" => self.trials = parse_number(key, value)?,
            "threads" => self.threads = parse_number(key, value)?,
            "out_dir" => {
                if value.is_empty() {
                    return Err(Error::Config("out_dir: empty path".into()));
                }
                self.out_dir = Some(PathBuf::from(value))
            }
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.sample_rate == 0 {
            return fail("sampling_frequency must be positive".into());
        }
        if !self.frame_length.is_power_of_two() || self.frame_length < 2 || self.frame_length > MAX_FRAME_LENGTH {
            return fail(format!(
                "frame_length must be a power of two between 2 and {MAX_FRAME_LENGTH}, got {}",
                self.frame_length
            ));
        }
        if self.frame_shift * 2 != self.frame_length {
            return fail(format!(
                "frame_shift must be half of frame_length ({}), got {}",
                self.frame_length / 2,
                self.frame_shift
            ));
        }
        if self.iterations > MAX_ITERATIONS {
            return fail(format!("number_of_em_iterations must be at most {MAX_ITERATIONS}"));
        }
        if self.rt60.is_empty() || self.rt60.iter().any(|r| !(*r > 0.0 && *r <= 10.0)) {
            return fail("rt60 values must lie in (0, 10] seconds".into());
        }
        if self.channels < 2 || self.channels > MAX_CHANNELS {
            return fail(format!("channels must be between 2 and {MAX_CHANNELS}"));
        }
        if !(self.duration > 0.0 && self.duration <= MAX_DURATION) {
            return fail(format!("duration must lie in (0, {MAX_DURATION}] seconds"));
        }
        if self.trials == 0 || self.trials > MAX_TRIALS {
            return fail(format!("trials must be between 1 and {MAX_TRIALS}"));
        }
        if self.threads == 0 {
            return fail("threads must be at least 1".into());
        }
        Ok(())
    }

    /// Text form accepted by [`RunConfig::parse`].
    pub fn to_config_string(&self) -> String {
        let rt60: Vec<String> = self.rt60.iter().map(|r| format!("{r}")).collect();
        let mut out = format!(
            "sampling_frequency = {}\nframe_length = {}\nframe_shift = {}\nwindow = sqrt_hann\n\
             number_of_em_iterations = {}\nalgorithm = {}\nseed = {}\ninit = {}\nrt60 = {}\n\
             channels = {}\nduration = {}\ntrials = {}\nthreads = {}\n",
            self.sample_rate,
            self.frame_length,
            self.frame_shift,
            self.iterations,
            self.algorithm,
            self.seed,
            self.init,
            rt60.join(", "),
            self.channels,
            self.duration,
            self.trials,
            self.threads
        );
        if let Some(dir) = &self.out_dir {
            out.push_str(&format!("out_dir = {}\n", dir.display()));
        }
        out
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}
