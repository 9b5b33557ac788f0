//! End-to-end checks of the command-line surface: exit codes, the
//! selftest battery, determinism of metric files, checkpoint errors, and a
//! miniature train -> distill -> sample chain.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowdistill"))
}

fn write_cfg(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn usage_and_validation_errors_exit_1() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("usage:"), "{err}");

    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "[run]\nseeed = 3\n");
    let out = bin().arg("train-teacher").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));

    let out = bin().arg("no-such-experiment").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("selftest")
        .arg("--set")
        .arg("run.out_dir=st")
        .env("E1_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.matches("PASS").count() >= 6, "{stdout}");
    assert!(!stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn corrupted_checkpoint_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("g");
    std::fs::create_dir_all(&run).unwrap();
    std::fs::write(run.join("teacher.e1ck"), b"BAD!rest of the file").unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "[run]\nout_dir = g\n[task]\nkind = gauss2d\n",
    );
    let out = bin()
        .arg("distill")
        .arg("--config")
        .arg(&cfg)
        .env("E1_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn mini_pipeline_runs_and_metrics_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_body = "\
[run]
seed = 5
out_dir = mini

[task]
kind = gauss2d

[teacher]
steps = 60
batch = 32
width = 16
depth = 2

[distill]
gen_steps = 5
fake_batch = 8
gen_batch = 8

[sample]
count = 64
steps = 8
";
    let cfg = write_cfg(tmp.path(), cfg_body);
    let run_dir = tmp.path().join("mini");

    for pass in 0..2 {
        let out = bin()
            .arg("train-teacher")
            .arg("--config")
            .arg(&cfg)
            .env("E1_OUT_DIR", tmp.path())
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        if pass == 0 {
            let first = std::fs::read(run_dir.join("metrics.csv")).unwrap();
            std::fs::write(run_dir.join("metrics.first.csv"), &first).unwrap();
        } else {
            let first = std::fs::read(run_dir.join("metrics.first.csv")).unwrap();
            let second = std::fs::read(run_dir.join("metrics.csv")).unwrap();
            assert_eq!(first, second, "metrics CSV not byte-identical across runs");
        }
    }
    for file in ["teacher.e1ck", "loss.svg", "resolved.cfg", "metrics.csv"] {
        assert!(run_dir.join(file).exists(), "missing {file}");
    }
    let resolved = std::fs::read_to_string(run_dir.join("resolved.cfg")).unwrap();
    assert!(resolved.contains("experiment = train-teacher"));
    assert!(resolved.contains("seed = 5"));

    let out = bin()
        .arg("distill")
        .arg("--config")
        .arg(&cfg)
        .arg("--set")
        .arg("sample.checkpoint=teacher.e1ck")
        .env("E1_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("student.e1ck").exists());
    assert!(run_dir.join("timing.csv").exists());

    let out = bin()
        .arg("sample")
        .arg("--config")
        .arg(&cfg)
        .arg("--set")
        .arg("sample.checkpoint=student.e1ck")
        .arg("--set")
        .arg("sample.steps=1")
        .env("E1_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let samples = std::fs::read_to_string(run_dir.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 65); // header + 64 rows
    let svg = std::fs::read_to_string(run_dir.join("samples.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.trim_end().ends_with("</svg>"));
}

#[test]
fn teacher_checkpoint_reloads_to_identical_samples() {
    // Cross-run determinism: a teacher saved by train-teacher and reloaded
    // by sample twice gives byte-identical sample CSVs.
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "[run]\nseed = 9\nout_dir = x\n[task]\nkind = gauss2d\n[teacher]\nsteps = 30\nbatch = 16\nwidth = 16\ndepth = 2\n[sample]\ncount = 32\nsteps = 4\n",
    );
    let run_dir = tmp.path().join("x");
    let out = bin()
        .arg("train-teacher")
        .arg("--config")
        .arg(&cfg)
        .env("E1_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let mut csvs = Vec::new();
    for _ in 0..2 {
        let out = bin()
            .arg("sample")
            .arg("--config")
            .arg(&cfg)
            .env("E1_OUT_DIR", tmp.path())
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        csvs.push(std::fs::read(run_dir.join("samples.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}
