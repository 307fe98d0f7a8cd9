//! End-to-end pipelines behind the command-line tool.

use std::fs;
use std::path::{Path, PathBuf};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::fast::fastfca_run_with;
use crate::fca::fca_run_with;
use crate::init::{init_from_masks, init_random};
use crate::io::config::{AlgorithmChoice, InitMethod, RunConfig};
use crate::io::report::{
    bar_chart_svg, summarize, write_sdr_csv, write_summary_csv, ConditionSummary, EvaluationReport, RunSummary,
    SeparationReport, TrialRecord, SCHEMA_VERSION,
};
use crate::io::wav::{read_wav, write_wav};
use crate::metrics::{measure_rtf, paired_sdr};
use crate::model::{Algorithm, RunOptions, SeparationResult, SpatialModel};
use crate::simulator::{simulate_trial, GroundTruth};
use crate::stft::{SpectrogramTensor, Stft};

impl AlgorithmChoice {
    pub fn algorithms(self) -> Vec<Algorithm> {
        match self {
            AlgorithmChoice::Fca => vec![Algorithm::Fca],
            AlgorithmChoice::Fastfca => vec![Algorithm::FastFca],
            AlgorithmChoice::Both => vec![Algorithm::Fca, Algorithm::FastFca],
        }
    }
}

pub fn initialize(y: &SpectrogramTensor, config: &RunConfig) -> Result<SpatialModel> {
    match config.init {
        InitMethod::Masks => init_from_masks(y),
        InitMethod::Random => init_random(y, config.seed),
    }
}

pub fn run_engine(
    algorithm: Algorithm,
    y: &SpectrogramTensor,
    init: &SpatialModel,
    iterations: usize,
    threads: usize,
) -> Result<SeparationResult> {
    let opts = RunOptions {
        threads,
        record_iterates: false,
    };
    match algorithm {
        Algorithm::Fca => fca_run_with(y, init, iterations, opts),
        Algorithm::FastFca => fastfca_run_with(y, init, iterations, opts),
    }
}

/// Engine output together with the time-domain source images.
#[derive(Clone, Debug)]
pub struct Separation {
    pub result: SeparationResult,
    pub images: [AudioBuffer; 2],
    /// Wall-clock of the engine call divided by the audio duration.
    pub rtf: f64,
}

/// STFT, initialization, every configured engine (sharing one
/// initialization) and inverse STFT.
pub fn separate_audio(mixture: &AudioBuffer, config: &RunConfig) -> Result<(SpectrogramTensor, Vec<Separation>)> {
    if mixture.num_channels() < 2 {
        return Err(Error::InvalidInput(format!(
            "separation needs at least two channels, input has {}",
            mixture.num_channels()
        )));
    }
    let stft = Stft::new(config.frame_length, config.frame_shift)?;
    let y = stft.analyze(mixture);
    if !y.is_finite() {
        return Err(Error::non_finite("STFT analysis"));
    }
    let init = initialize(&y, config)?;
    let mut out = Vec::new();
    for algorithm in config.algorithm.algorithms() {
        let mut result = None;
        let timing = measure_rtf(
            || {
                result = Some(run_engine(algorithm, &y, &init, config.iterations, config.threads)?);
                Ok(())
            },
            mixture.duration_secs().max(f64::MIN_POSITIVE),
            1,
        )?;
        let result = result.expect("engine ran once");
        let images = [0, 1].map(|j| stft.synthesize(&result.images[j], mixture.sample_rate(), Some(mixture.len())));
        let [a, b] = images;
        let images = [a?, b?];
        if images
            .iter()
            .any(|im| im.channels().iter().flatten().any(|x| !x.is_finite()))
        {
            return Err(Error::non_finite("inverse STFT"));
        }
        out.push(Separation {
            result,
            images,
            rtf: timing.rtf,
        });
    }
    Ok((y, out))
}

fn output_name(algorithm: Algorithm, j: usize) -> String {
    format!("{}_source{}.wav", algorithm.to_string().to_ascii_lowercase(), j + 1)
}

/// Writes every file or none: on failure the files written so far are removed.
fn write_all(files: Vec<(PathBuf, FileBody)>) -> Result<()> {
    let mut written = Vec::new();
    for (path, body) in files {
        let outcome = match &body {
            FileBody::Audio(a) => write_wav(&path, a),
            FileBody::Text(t) => fs::write(&path, t).map_err(Error::from),
        };
        if let Err(e) = outcome {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&path);
            return Err(e);
        }
        written.push(path);
    }
    Ok(())
}

enum FileBody {
    Audio(AudioBuffer),
    Text(String),
}

/// `separate`: reads a mixture, writes `<algorithm>_source<j>.wav` per
/// engine and `report.json` into `out_dir`.
pub fn separate(input: &Path, config: &RunConfig, out_dir: &Path) -> Result<SeparationReport> {
    config.validate()?;
    let mixture = read_wav(input)?;
    let (y, runs) = separate_audio(&mixture, config)?;

    let max_image_deviation = match runs.as_slice() {
        [a, b] => Some(
            a.result.images[0]
                .max_abs_diff(&b.result.images[0])
                .max(a.result.images[1].max_abs_diff(&b.result.images[1])),
        ),
        _ => None,
    };
    let mut files = Vec::new();
    let mut summaries = Vec::new();
    for run in runs {
        let names: Vec<String> = (0..2).map(|j| output_name(run.result.algorithm, j)).collect();
        for (name, image) in names.iter().zip(run.images) {
            files.push((out_dir.join(name), FileBody::Audio(image)));
        }
        summaries.push(RunSummary {
            algorithm: run.result.algorithm,
            em_seconds: run.result.em_seconds(),
            log_likelihood: run.result.log_likelihood,
            iteration_seconds: run.result.iteration_seconds,
            rtf: run.rtf,
            outputs: names,
        });
    }
    let report = SeparationReport {
        schema_version: SCHEMA_VERSION,
        input: input.display().to_string(),
        sample_rate: mixture.sample_rate(),
        channels: mixture.num_channels(),
        samples: mixture.len(),
        frames: y.frames(),
        bins: y.bins(),
        iterations: config.iterations,
        init: config.init.to_string(),
        seed: config.seed,
        runs: summaries,
        max_image_deviation,
    };
    files.push((
        out_dir.join("report.json"),
        FileBody::Text(serde_json::to_string_pretty(&report)? + "\n"),
    ));
    fs::create_dir_all(out_dir)?;
    write_all(files)?;
    Ok(report)
}

pub const SIMULATION_FILES: [&str; 3] = ["mixture.wav", "image1.wav", "image2.wav"];

/// `simulate`: writes the mixture and both source images for the first
/// configured reverberation time. Existing files are only replaced with `force`.
pub fn simulate(config: &RunConfig, out_dir: &Path, force: bool) -> Result<GroundTruth> {
    config.validate()?;
    let paths: Vec<PathBuf> = SIMULATION_FILES.iter().map(|f| out_dir.join(f)).collect();
    if !force {
        if let Some(existing) = paths.iter().find(|p| p.exists()) {
            return Err(Error::Config(format!(
                "{} exists; pass --force to overwrite",
                existing.display()
            )));
        }
    }
    let truth = simulated_mixture(config, config.rt60[0], config.seed)?;
    fs::create_dir_all(out_dir)?;
    let bodies = [&truth.mixture, &truth.images[0], &truth.images[1]];
    write_all(
        paths
            .into_iter()
            .zip(bodies)
            .map(|(p, a)| (p, FileBody::Audio(a.clone())))
            .collect(),
    )?;
    Ok(truth)
}

/// Simulated trial at the configured channel count, duration and rate.
pub fn simulated_mixture(config: &RunConfig, rt60: f64, seed: u64) -> Result<GroundTruth> {
    let truth = simulate_trial(rt60, config.channels, config.duration, seed)?;
    if truth.mixture.sample_rate() != config.sample_rate {
        return Err(Error::Config(format!(
            "the simulator runs at {} Hz; sampling_frequency must match",
            truth.mixture.sample_rate()
        )));
    }
    Ok(truth)
}

/// Seed of benchmark trial `trial`; the same across reverberation times so
/// that every condition sees the same source signals.
pub fn trial_seed(config: &RunConfig, trial: usize) -> u64 {
    config.seed.wrapping_mul(1_000_003).wrapping_add(trial as u64)
}

/// Separates one simulated trial with every configured engine.
pub fn benchmark_trial(config: &RunConfig, rt60: f64, trial: usize, repeats: usize) -> Result<Vec<TrialRecord>> {
    let seed = trial_seed(config, trial);
    let truth = simulated_mixture(config, rt60, seed)?;
    let stft = Stft::new(config.frame_length, config.frame_shift)?;
    let y = stft.analyze(&truth.mixture);
    let init = initialize(&y, config)?;
    let duration = truth.mixture.duration_secs();
    let mut records = Vec::new();
    for algorithm in config.algorithm.algorithms() {
        let mut first: Option<SeparationResult> = None;
        let timing = measure_rtf(
            || {
                let r = run_engine(algorithm, &y, &init, config.iterations, config.threads)?;
                first.get_or_insert(r);
                Ok(())
            },
            duration,
            repeats,
        )?;
        let result = first.expect("engine ran at least once");
        let [a, b] = [0, 1].map(|j| {
            stft.synthesize(
                &result.images[j],
                truth.mixture.sample_rate(),
                Some(truth.mixture.len()),
            )
        });
        let paired = paired_sdr(&[a?, b?], &truth.images)?;
        records.push(TrialRecord {
            rt60,
            trial,
            seed,
            algorithm,
            sdr_db: paired.sdr,
            em_seconds: result.em_seconds(),
            rtf: timing.rtf,
        });
    }
    Ok(records)
}

#[derive(Clone, Debug)]
pub struct BenchmarkOutcome {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<ConditionSummary>,
}

pub const BENCHMARK_FILES: [&str; 5] = ["sdr.csv", "summary.csv", "summary.json", "rtf.svg", "sdr.svg"];

/// `benchmark`: every configured reverberation time times `trials`, with
/// the engines sharing one initialization per trial. `sdr.csv` depends
/// only on the configuration; timings go to `summary.csv`.
pub fn benchmark(
    config: &RunConfig,
    out_dir: &Path,
    repeats: usize,
    mut progress: impl FnMut(&TrialRecord),
) -> Result<BenchmarkOutcome> {
    config.validate()?;
    let mut records = Vec::new();
    for &rt60 in &config.rt60 {
        for trial in 0..config.trials {
            for r in benchmark_trial(config, rt60, trial, repeats)? {
                progress(&r);
                records.push(r);
            }
        }
    }
    let summary = summarize(&records);

    let mut sdr_csv = Vec::new();
    write_sdr_csv(&records, &mut sdr_csv)?;
    let mut summary_csv = Vec::new();
    write_summary_csv(&summary, &mut summary_csv)?;
    let json = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "conditions": summary,
        "trials": records,
    });
    let categories: Vec<String> = summary.iter().map(|s| format!("{:.0} ms", s.rt60 * 1000.0)).collect();
    let column = |f: fn(&ConditionSummary) -> f64| -> Vec<f64> { summary.iter().map(f).collect() };
    let rtf_svg = bar_chart_svg(
        "Real time factor of the EM iterations",
        "RTF",
        &categories,
        &[("FCA", column(|s| s.rtf_fca)), ("FastFCA", column(|s| s.rtf_fastfca))],
    );
    let sdr_svg = bar_chart_svg(
        "Signal-to-distortion ratio",
        "SDR (dB)",
        &categories,
        &[
            ("FCA", column(|s| s.sdr_fca_db)),
            ("FastFCA", column(|s| s.sdr_fastfca_db)),
        ],
    );
    fs::create_dir_all(out_dir)?;
    let texts = [
        String::from_utf8(sdr_csv).expect("csv output is utf-8"),
        String::from_utf8(summary_csv).expect("csv output is utf-8"),
        serde_json::to_string_pretty(&json)? + "\n",
        rtf_svg,
        sdr_svg,
    ];
    write_all(
        BENCHMARK_FILES
            .iter()
            .zip(texts)
            .map(|(name, text)| (out_dir.join(name), FileBody::Text(text)))
            .collect(),
    )?;
    Ok(BenchmarkOutcome { records, summary })
}

/// `evaluate`: pairing-optimal SDR of two estimates against two references.
pub fn evaluate(estimates: [&Path; 2], references: [&Path; 2]) -> Result<EvaluationReport> {
    let load = |p: &Path| read_wav(p);
    let est = [load(estimates[0])?, load(estimates[1])?];
    let refs = [load(references[0])?, load(references[1])?];
    let paired = paired_sdr(&est, &refs)?;
    Ok(EvaluationReport {
        schema_version: SCHEMA_VERSION,
        estimates: estimates.iter().map(|p| p.display().to_string()).collect(),
        references: references.iter().map(|p| p.display().to_string()).collect(),
        sdr_db: paired.sdr.to_vec(),
        pairing: paired.pairing.to_vec(),
        sdr_mean_db: paired.mean(),
    })
}

/// Writes `evaluation.json` and `evaluation.csv`.
pub fn write_evaluation(report: &EvaluationReport, out_dir: &Path) -> Result<()> {
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    fs::create_dir_all(out_dir)?;
    write_all(vec![
        (
            out_dir.join("evaluation.json"),
            FileBody::Text(serde_json::to_string_pretty(report)? + "\n"),
        ),
        (
            out_dir.join("evaluation.csv"),
            FileBody::Text(String::from_utf8(csv).expect("csv output is utf-8")),
        ),
    ])
}
