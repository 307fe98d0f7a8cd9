#![no_main]

use fastfca::io::decode_wav_bytes;
use fastfca::stft::stft_analyze;
use libfuzzer_sys::fuzz_target;

// Decoded WAV input through analysis; small frames keep iterations fast.
fuzz_target!(|data: &[u8]| {
    let Ok(audio) = decode_wav_bytes(data) else {
        return;
    };
    if audio.len() > 1 << 16 || audio.num_channels() > 8 {
        return;
    }
    if let Ok(spec) = stft_analyze(&audio, 64, 32) {
        assert_eq!(spec.channels(), audio.num_channels());
        assert!(spec.is_finite());
    }
});
