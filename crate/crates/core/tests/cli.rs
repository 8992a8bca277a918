use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbsdej")).args(args).output().unwrap()
}

fn run_with(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn edited(dir: &Path, from: &str, to: &str) -> PathBuf {
    let text = fs::read_to_string(config("reflected.toml")).unwrap();
    assert!(text.contains(from));
    let path = dir.join("edited.toml");
    fs::write(&path, text.replace(from, to)).unwrap();
    path
}

#[test]
fn solve_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run_with("solve", &config("reflected.toml"), out, &["--mode", "mbsde"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["solution.csv", "summary.json", "report.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let stdout = String::from_utf8(run_with("solve", &config("reflected.toml"), &a, &["--mode", "mbsde"]).stdout).unwrap();
    assert!(stdout.contains("Y0"), "{stdout}");
}

#[test]
fn ensemble_solve_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("jumps.toml");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run_with("solve", &cfg, out, &["--mode", "mbsde", "--paths", "2000"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(a.join("solution.csv")).unwrap(), fs::read(b.join("solution.csv")).unwrap());
}

#[test]
fn mode_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("solve", &config("reflected.toml"), dir.path(), &["--mode", "unbounded"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run_with("solve", &config("reflected.toml"), dir.path(), &["--mode", "bsde"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_exit_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited(dir.path(), "name = \"reflect_at\"", "name = \"reflect_somewhere\"");
    let o = run_with("solve", &cfg, dir.path(), &["--mode", "mbsde"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("line 10") && err.contains("reflect_somewhere"), "{err}");
}

#[test]
fn core_suite_passes_on_reflected_tree() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("verify", &config("reflected.toml"), dir.path(), &["--suite", "core"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    let entries = report.as_array().unwrap();
    for check in ["constraint", "residual", "skorokhod", "uniqueness", "oracle"] {
        assert!(entries.iter().any(|e| e["check"] == check && e["pass"] == true), "{check}");
    }
}

#[test]
fn unordered_comparison_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited(dir.path(), "shift = 0.5", "shift = -0.5");
    let o = run_with("verify", &cfg, dir.path(), &["--suite", "comparison"]);
    assert_eq!(o.status.code(), Some(4));
    let report = fs::read_to_string(dir.path().join("verify.json")).unwrap();
    assert!(report.contains("terminal_order"), "{report}");
}

#[test]
fn ordered_comparison_and_controls_pass() {
    let dir = tempfile::tempdir().unwrap();
    for suite in ["comparison", "negative-controls"] {
        let o = run_with("verify", &config("reflected.toml"), dir.path(), &["--suite", suite]);
        assert_eq!(o.status.code(), Some(0), "{suite}: {}", String::from_utf8_lossy(&o.stdout));
    }
}

#[test]
fn sweep_and_validate_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("sweep", &config("reflected.toml"), dir.path(), &["--levels", "1,4,16"]);
    assert_eq!(o.status.code(), Some(0));
    let sweep = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 4);
    let o = run_with("validate", &config("reflected.toml"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("validation.json").exists());
}
