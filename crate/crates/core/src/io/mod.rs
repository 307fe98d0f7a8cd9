//! File formats: audio, run configuration and reports.

pub mod config;
pub mod report;
pub mod wav;

pub use config::{AlgorithmChoice, InitMethod, RunConfig};
pub use wav::{decode_wav, decode_wav_bytes, encode_wav, encode_wav_bytes, read_wav, write_wav};
