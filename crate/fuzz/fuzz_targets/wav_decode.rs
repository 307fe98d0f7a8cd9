#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(audio) = fastfca::io::decode_wav_bytes(data) {
        assert!(audio.num_channels() >= 1);
        assert!(audio.channels().iter().flatten().all(|x| x.is_finite()));
    }
});
