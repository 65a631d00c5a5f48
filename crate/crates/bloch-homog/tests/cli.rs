//! End-to-end checks of the command-line interface: exit codes, artifact
//! layout, determinism of reruns, and thread-count independence.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_bloch-homog")
}

/// Per-test scratch directory, recreated empty on every run.
fn fresh_dir(name: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("bloch-homog-cli-{}-{name}", std::process::id()));
    if p.exists() {
        std::fs::remove_dir_all(&p).unwrap();
    }
    std::fs::create_dir_all(&p).unwrap();
    p
}

fn write_tensors_config(dir: &Path) -> PathBuf {
    let cfg = r#"{
  "dim": 1,
  "resolution": 64,
  "a": { "kind": "laminate", "phases": [1.0, 4.0], "fraction": 0.5 },
  "b": { "kind": "laminate", "phases": [2.0, 1.0], "fraction": 0.5 },
  "solver": { "tol": 1e-11, "scheme": "fd-harmonic" }
}
"#;
    let path = dir.join("run.json");
    std::fs::write(&path, cfg).unwrap();
    path
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary failed to launch")
}

#[test]
fn tensors_run_is_deterministic_and_emits_artifacts() {
    let dir = fresh_dir("tensors");
    let cfg = write_tensors_config(&dir);
    let out = dir.join("out");
    let args = [
        "tensors",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];

    let first = run(&args, &[]);
    assert_eq!(first.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&first.stderr));
    let report = out.join("report.json");
    let csv = out.join("tensors.csv");
    assert!(report.is_file(), "report.json missing");
    assert!(csv.is_file(), "tensors.csv missing");
    let report_bytes = std::fs::read(&report).unwrap();
    let csv_bytes = std::fs::read(&csv).unwrap();
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert!(stdout.contains("RESULT PASS"), "stdout: {stdout}");

    // Identical invocation must reproduce identical bytes.
    let second = run(&args, &[]);
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(std::fs::read(&report).unwrap(), report_bytes);
    assert_eq!(std::fs::read(&csv).unwrap(), csv_bytes);

    let header = std::str::from_utf8(&csv_bytes).unwrap().lines().next().unwrap().to_string();
    assert!(header.starts_with("tensor,"), "unexpected csv header: {header}");
}

#[test]
fn thread_cap_keeps_numbers_identical() {
    let dir = fresh_dir("threads");
    let cfg = write_tensors_config(&dir);
    let out_serial = dir.join("serial");
    let out_parallel = dir.join("parallel");

    let serial = run(
        &[
            "tensors",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_serial.to_str().unwrap(),
        ],
        &[("BLOCH_HOMOG_THREADS", "1")],
    );
    let parallel = run(
        &[
            "tensors",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_parallel.to_str().unwrap(),
        ],
        &[("BLOCH_HOMOG_THREADS", "4")],
    );
    assert_eq!(serial.status.code(), Some(0));
    assert_eq!(parallel.status.code(), Some(0));
    assert_eq!(
        std::fs::read(out_serial.join("tensors.csv")).unwrap(),
        std::fs::read(out_parallel.join("tensors.csv")).unwrap(),
        "thread count changed the numeric output"
    );
}

#[test]
fn config_errors_exit_three_and_write_nothing() {
    let dir = fresh_dir("config-errors");
    let out = dir.join("out");
    let out_arg = out.to_str().unwrap().to_string();

    // Malformed JSON.
    let broken = dir.join("broken.json");
    std::fs::write(&broken, "{ not json").unwrap();
    let r = run(
        &["tensors", "--config", broken.to_str().unwrap(), "--out", &out_arg],
        &[],
    );
    assert_eq!(r.status.code(), Some(3));
    assert!(!out.exists(), "artifacts written despite a config error");

    // Missing file.
    let missing = dir.join("missing.json");
    let r = run(
        &["tensors", "--config", missing.to_str().unwrap(), "--out", &out_arg],
        &[],
    );
    assert_eq!(r.status.code(), Some(3));
    assert!(!out.exists());

    // Unknown mode.
    let cfg = write_tensors_config(&dir);
    let r = run(
        &["frobnicate", "--config", cfg.to_str().unwrap(), "--out", &out_arg],
        &[],
    );
    assert_eq!(r.status.code(), Some(3));
    assert!(!out.exists());
}

#[test]
fn converge_mode_emits_convergence_csv() {
    let dir = fresh_dir("converge");
    let cfg_text = r#"{
  "dim": 1,
  "resolution": 64,
  "a": { "kind": "laminate", "phases": [1.0, 4.0], "fraction": 0.5 },
  "b": { "kind": "laminate", "phases": [2.0, 1.0], "fraction": 0.5 },
  "epsilon": {
    "periods": [8, 16, 32, 64],
    "per_cell": 32,
    "profile_a": { "breakpoints": ["1/2", "1"], "values": [1.0, 4.0] },
    "profile_b": { "breakpoints": ["1/2", "1"], "values": [2.0, 1.0] },
    "source": { "kind": "sine", "amplitude": 1.0, "frequency": 1, "offset": 0.5 }
  }
}
"#;
    let cfg = dir.join("run.json");
    std::fs::write(&cfg, cfg_text).unwrap();
    let out = dir.join("out");

    let r = run(
        &[
            "converge-1d",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(r.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 4, "one header and one row per epsilon: {csv}");
    assert_eq!(lines[0], "eps,errU,errSigma,errZ", "unexpected header: {}", lines[0]);
}

#[test]
fn version_flag_exits_zero() {
    let r = run(&["--version"], &[]);
    assert_eq!(r.status.code(), Some(0));
    let text = String::from_utf8_lossy(&r.stdout);
    assert!(text.contains("bloch-homog"), "version output: {text}");
}
