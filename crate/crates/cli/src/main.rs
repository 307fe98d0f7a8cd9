use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fastfca::experiment;
use fastfca::io::{AlgorithmChoice, InitMethod, RunConfig};
use fastfca::metrics::DEFAULT_RTF_REPEATS;
use fastfca::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "fastfca",
    version,
    about = "Two-source separation of multichannel recordings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Separate a multichannel WAV mixture into two source images.
    Separate {
        /// Multichannel WAV file (at least two channels).
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write a simulated reverberant mixture and its two source images.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Reverberation time in seconds (default: first configured value).
        #[arg(long)]
        rt60: Option<f64>,
        /// Replace existing output files.
        #[arg(long)]
        force: bool,
    },
    /// Compare both engines on simulated mixtures across reverberation times.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Trials per reverberation time.
        #[arg(long)]
        trials: Option<usize>,
        /// Timed repetitions per run; the median is reported.
        #[arg(long, default_value_t = DEFAULT_RTF_REPEATS)]
        repeats: usize,
    },
    /// Signal-to-distortion ratio of two estimates against two references.
    Evaluate {
        #[arg(long, num_args = 2, required = true, value_names = ["EST1", "EST2"])]
        estimates: Vec<PathBuf>,
        #[arg(long, num_args = 2, required = true, value_names = ["REF1", "REF2"])]
        references: Vec<PathBuf>,
        /// Also write evaluation.json and evaluation.csv here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// fca, fastfca or both.
    #[arg(long)]
    algorithm: Option<AlgorithmChoice>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the per-bin loops.
    #[arg(long)]
    threads: Option<usize>,
    /// masks or random.
    #[arg(long)]
    init: Option<InitMethod>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> fastfca::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(a) = self.algorithm {
            config.algorithm = a;
        }
        if let Some(i) = self.iterations {
            config.iterations = i;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(t) = self.threads {
            config.threads = t;
        }
        if let Some(i) = self.init {
            config.init = i;
        }
        if let Some(d) = &self.out_dir {
            config.out_dir = Some(d.clone());
        }
        config.validate()?;
        Ok(config)
    }
}

fn out_dir(config: &RunConfig) -> PathBuf {
    config.out_dir.clone().unwrap_or_else(|| PathBuf::from("fastfca-out"))
}

fn run(cli: Cli) -> fastfca::Result<()> {
    match cli.command {
        Command::Separate { input, common } => {
            let config = common.load()?;
            let dir = out_dir(&config);
            let report = experiment::separate(&input, &config, &dir)?;
            for run in &report.runs {
                println!(
                    "{}: {} iterations, EM {:.3} s, RTF {:.4}, log-likelihood {:.6e}",
                    run.algorithm,
                    report.iterations,
                    run.em_seconds,
                    run.rtf,
                    run.log_likelihood.last().copied().unwrap_or(f64::NAN)
                );
            }
            if let Some(d) = report.max_image_deviation {
                println!("max image deviation between engines: {d:.3e}");
            }
            println!("wrote {}", dir.display());
        }
        Command::Simulate { common, rt60, force } => {
            let mut config = common.load()?;
            if let Some(r) = rt60 {
                config.rt60 = vec![r];
                config.validate()?;
            }
            let dir = out_dir(&config);
            let truth = experiment::simulate(&config, &dir, force)?;
            println!(
                "simulated {} channels, {:.2} s at rt60 {:.0} ms into {}",
                truth.mixture.num_channels(),
                truth.mixture.duration_secs(),
                config.rt60[0] * 1000.0,
                dir.display()
            );
        }
        Command::Benchmark {
            common,
            trials,
            repeats,
        } => {
            let mut config = common.load()?;
            if let Some(t) = trials {
                config.trials = t;
                config.validate()?;
            }
            let dir = out_dir(&config);
            let outcome = experiment::benchmark(&config, &dir, repeats, |r| {
                eprintln!(
                    "rt60 {:.0} ms trial {} {}: SDR {:.2} dB, RTF {:.4}",
                    r.rt60 * 1000.0,
                    r.trial,
                    r.algorithm,
                    r.sdr_mean(),
                    r.rtf
                );
            })?;
            println!("rt60_ms  sdr_fca  sdr_fastfca  rtf_fca  rtf_fastfca  speedup");
            for s in &outcome.summary {
                println!(
                    "{:>7.0}  {:>7.2}  {:>11.2}  {:>7.4}  {:>11.4}  {:>7.2}",
                    s.rt60 * 1000.0,
                    s.sdr_fca_db,
                    s.sdr_fastfca_db,
                    s.rtf_fca,
                    s.rtf_fastfca,
                    s.speedup
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::Evaluate {
            estimates,
            references,
            out_dir,
        } => {
            let est: [&Path; 2] = [&estimates[0], &estimates[1]];
            let refs: [&Path; 2] = [&references[0], &references[1]];
            let report = experiment::evaluate(est, refs)?;
            for (j, sdr) in report.sdr_db.iter().enumerate() {
                println!(
                    "{} <- {}: SDR {sdr:.2} dB",
                    report.references[j], report.estimates[report.pairing[j]]
                );
            }
            println!("mean SDR {:.2} dB", report.sdr_mean_db);
            if let Some(dir) = out_dir {
                experiment::write_evaluation(&report, &dir)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fastfca: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE })
        }
    }
}
