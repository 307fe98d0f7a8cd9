use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fastfca(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastfca"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.conf");
    fs::write(
        &path,
        "# short two-channel runs\n\
         number_of_em_iterations = 2\n\
         rt60 = 0.13\n\
         channels = 2\n\
         duration = 1\n\
         trials = 1\n",
    )
    .unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fastfca(&[], dir.path()).status.code(), Some(2));
    assert_eq!(fastfca(&["separate"], dir.path()).status.code(), Some(2));
    assert_eq!(
        fastfca(&["separate", "x.wav", "--algorithm", "bogus"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert!(fastfca(&["--help"], dir.path()).status.success());
}

#[test]
fn missing_input_file_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = fastfca(&["separate", "absent.wav", "--out-dir", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.wav"));
    assert!(!dir.path().join("o/report.json").exists());
}

#[test]
fn bad_config_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "frame_length = 1024\nframe_shift = banana\n").unwrap();
    let out = fastfca(&["simulate", "--config", conf.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn simulate_separate_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let conf = small_config(cwd);

    let sim = fastfca(&["simulate", "--config", &conf, "--out-dir", "sim"], cwd);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    let again = fastfca(&["simulate", "--config", &conf, "--out-dir", "sim"], cwd);
    assert_eq!(again.status.code(), Some(2));
    let forced = fastfca(&["simulate", "--config", &conf, "--out-dir", "sim", "--force"], cwd);
    assert!(forced.status.success());

    let sep = fastfca(
        &["separate", "sim/mixture.wav", "--config", &conf, "--out-dir", "sep"],
        cwd,
    );
    assert!(sep.status.success(), "{}", String::from_utf8_lossy(&sep.stderr));
    let stdout = String::from_utf8_lossy(&sep.stdout);
    assert!(stdout.contains("FCA") && stdout.contains("FastFCA"), "{stdout}");
    let report = fs::read_to_string(cwd.join("sep/report.json")).unwrap();
    assert!(report.contains("\"schema_version\": 1"));

    let eval = fastfca(
        &[
            "evaluate",
            "--estimates",
            "sep/fastfca_source1.wav",
            "sep/fastfca_source2.wav",
            "--references",
            "sim/image1.wav",
            "sim/image2.wav",
            "--out-dir",
            "eval",
        ],
        cwd,
    );
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(String::from_utf8_lossy(&eval.stdout).contains("mean SDR"));
    assert!(cwd.join("eval/evaluation.csv").exists());
    assert!(cwd.join("eval/evaluation.json").exists());
}

#[test]
fn benchmark_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let conf = small_config(cwd);
    for out in ["b1", "b2"] {
        let run = fastfca(
            &[
                "benchmark",
                "--config",
                &conf,
                "--repeats",
                "1",
                "--threads",
                "1",
                "--out-dir",
                out,
            ],
            cwd,
        );
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        for f in ["sdr.csv", "summary.csv", "summary.json", "rtf.svg", "sdr.svg"] {
            assert!(cwd.join(out).join(f).exists(), "{out}/{f}");
        }
    }
    let a = fs::read(cwd.join("b1/sdr.csv")).unwrap();
    let b = fs::read(cwd.join("b2/sdr.csv")).unwrap();
    assert_eq!(a, b);
}
