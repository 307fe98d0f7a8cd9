//! RIFF WAV reading (integer PCM and 32-bit float) and 32-bit float writing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Decodes a WAV stream into samples in `[-1, 1)` for integer PCM, or the
/// stored values for float data.
pub fn decode_wav<R: Read>(reader: R) -> Result<AudioBuffer> {
    let reader = WavReader::new(reader)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::InvalidInput("wav declares zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, bits @ 1..=32) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (format, bits) => {
            return Err(Error::InvalidInput(format!(
                "unsupported wav sample format {format:?} with {bits} bits"
            )))
        }
    };
    if interleaved.len() % channels != 0 {
        return Err(Error::InvalidInput("wav data ends inside a sample frame".into()));
    }
    if interleaved.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("wav contains non-finite samples".into()));
    }
    let frames = interleaved.len() / channels;
    let mut out = vec![Vec::with_capacity(frames); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, &x) in out.iter_mut().zip(frame) {
            c.push(x);
        }
    }
    AudioBuffer::new(spec.sample_rate, out)
}

/// Decodes an in-memory WAV file.
pub fn decode_wav_bytes(bytes: &[u8]) -> Result<AudioBuffer> {
    decode_wav(Cursor::new(bytes))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    decode_wav(BufReader::new(file))
}

fn float_spec(audio: &AudioBuffer) -> Result<WavSpec> {
    let channels =
        u16::try_from(audio.num_channels()).map_err(|_| Error::InvalidInput("too many channels for wav".into()))?;
    Ok(WavSpec {
        channels,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    })
}

/// Writes 32-bit float samples, so values beyond `[-1, 1]` survive.
pub fn encode_wav<W: Write + Seek>(audio: &AudioBuffer, writer: W) -> Result<()> {
    let mut w = WavWriter::new(writer, float_spec(audio)?)?;
    for t in 0..audio.len() {
        for c in audio.channels() {
            w.write_sample(c[t] as f32)?;
        }
    }
    w.finalize()?;
    Ok(())
}

pub fn encode_wav_bytes(audio: &AudioBuffer) -> Result<Vec<u8>> {
    let mut cursor = Cursor::new(Vec::new());
    encode_wav(audio, &mut cursor)?;
    Ok(cursor.into_inner())
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let file = File::create(path.as_ref())?;
    encode_wav(audio, BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm16(samples: &[i16], channels: u16, rate: u32) -> Vec<u8> {
        let mut cursor = Cursor::new(Vec::new());
        let spec = WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::new(&mut cursor, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        cursor.into_inner()
    }

    #[test]
    fn pcm16_is_scaled_and_deinterleaved() {
        let bytes = pcm16(&[16384, -32768, 0, 32767], 2, 8000);
        let audio = decode_wav_bytes(&bytes).unwrap();
        assert_eq!(audio.sample_rate(), 8000);
        assert_eq!(audio.channel(0), &[0.5, 0.0]);
        assert_eq!(audio.channel(1), &[-1.0, 32767.0 / 32768.0]);
    }

    #[test]
    fn float_round_trip_is_lossless_for_f32_values() {
        let audio = AudioBuffer::new(16000, vec![vec![0.25, -1.5, 3.0], vec![0.0009765625, 0.0, -0.125]]).unwrap();
        let back = decode_wav_bytes(&encode_wav_bytes(&audio).unwrap()).unwrap();
        assert_eq!(back, audio);
    }

    #[test]
    fn garbage_is_an_error() {
        assert!(decode_wav_bytes(b"RIFF\x00\x00\x00\x00WAVEjunk").is_err());
        assert!(decode_wav_bytes(&[]).is_err());
    }

    #[test]
    fn truncated_file_is_an_error_or_shorter() {
        let bytes = pcm16(&[1, 2, 3, 4, 5, 6], 2, 8000);
        for cut in 0..bytes.len() {
            if let Ok(audio) = decode_wav_bytes(&bytes[..cut]) {
                assert!(audio.len() <= 3);
            }
        }
    }

    #[test]
    fn missing_file_is_invalid_input() {
        assert!(matches!(read_wav("/nonexistent/x.wav"), Err(Error::InvalidInput(_))));
    }
}
