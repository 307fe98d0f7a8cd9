//! Two-source separation of multichannel audio with the full-rank spatial
//! covariance model.
//!
//! Each source image is modelled per time-frequency point as a zero-mean
//! complex Gaussian with covariance `v_j(n, f) S_j(f)`. Two EM engines fit
//! the model: [`fca`] is the conventional algorithm with frame-wise matrix
//! inversion, and [`fast`] runs the same iterations in the basis that
//! jointly diagonalizes `S_1(f)` and `S_2(f)`, which removes all per-frame
//! matrix inversions and products. Given the same initialization both
//! produce the same iterates up to rounding.
//!
//! ```no_run
//! use fastfca::{fast::fastfca_run, init::init_from_masks, io::read_wav, stft::Stft};
//!
//! let mixture = read_wav("mixture.wav")?;
//! let stft = Stft::new(1024, 512)?;
//! let y = stft.analyze(&mixture);
//! let init = init_from_masks(&y)?;
//! let result = fastfca_run(&y, &init, 10)?;
//! let first = stft.synthesize(&result.images[0], mixture.sample_rate(), Some(mixture.len()))?;
//! # Ok::<(), fastfca::Error>(())
//! ```

// Index loops mirror the per-bin, per-frame notation; `!(x > 0.0)` doubles as a NaN check.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod error;
pub mod experiment;
pub mod fast;
pub mod fca;
pub mod init;
pub mod io;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod pencil;
pub mod simulator;
pub mod stft;
pub mod synthetic;

mod engine;
mod parallel;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
pub use model::{Algorithm, PowerSpectra, RunOptions, SeparationResult, SpatialModel};
pub use stft::{SpectrogramTensor, Stft};
