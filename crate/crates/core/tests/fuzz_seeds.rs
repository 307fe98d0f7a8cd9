//! Replays the fuzz corpus seeds, and cheap deterministic mutations of them,
//! through the decoder and parser entry points on stable toolchains.

use std::path::PathBuf;

use fastfca::io::{decode_wav_bytes, RunConfig};
use fastfca::stft::stft_analyze;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty());
    files.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

fn mutations(seed: &[u8], rng: &mut ChaCha8Rng) -> Vec<Vec<u8>> {
    let mut out = vec![seed.to_vec()];
    for cut in [0, 1, 4, 12, 36, 43, 44, 45] {
        out.push(seed[..cut.min(seed.len())].to_vec());
    }
    for _ in 0..200 {
        let mut m = seed.to_vec();
        if m.is_empty() {
            break;
        }
        for _ in 0..rng.gen_range(1..4) {
            let i = rng.gen_range(0..m.len());
            m[i] = rng.gen();
        }
        out.push(m);
    }
    out
}

fn wav_decode(data: &[u8]) {
    if let Ok(audio) = decode_wav_bytes(data) {
        assert!(audio.num_channels() >= 1);
        assert!(audio.channels().iter().flatten().all(|x| x.is_finite()));
    }
}

fn config_parse(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = RunConfig::parse(text) {
        let again = RunConfig::parse(&config.to_config_string()).expect("printed config parses");
        assert_eq!(again, config);
    }
}

fn stft(data: &[u8]) {
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
}

#[test]
fn wav_decode_seeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = seeds("wav_decode");
    assert!(s.iter().filter(|b| decode_wav_bytes(b).is_ok()).count() >= 3);
    for seed in &s {
        for m in mutations(seed, &mut rng) {
            wav_decode(&m);
        }
    }
}

#[test]
fn config_parse_seeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = seeds("config_parse");
    assert!(s
        .iter()
        .any(|b| RunConfig::parse(std::str::from_utf8(b).unwrap()).is_ok()));
    for seed in &s {
        for m in mutations(seed, &mut rng) {
            config_parse(&m);
        }
    }
}

#[test]
fn stft_analyze_seeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in &seeds("stft_analyze") {
        for m in mutations(seed, &mut rng) {
            stft(&m);
        }
    }
}
