use std::process::Command;

fn skinaug(args: &[&str], dir: &std::path::Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_skinaug")).args(args).current_dir(dir).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(skinaug(&["frobnicate"], dir.path()).0, 1);
    std::fs::write(dir.path().join("c.toml"), "seed_count = 0\n").unwrap();
    let (code, err) = skinaug(&["--config", "c.toml", "ingest"], dir.path());
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("seed_count"));
}

#[test]
fn missing_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = skinaug(&["--manifest", "nope.csv", "--output-dir", "out", "ingest"], dir.path());
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("nope.csv"));
    let (code, err) = skinaug(&["--output-dir", "out", "--backend", "stub", "compose"], dir.path());
    assert_eq!(code, 2, "{err}");
}

#[test]
fn help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(skinaug(&["--help"], dir.path()).0, 0);
}

#[test]
fn all_halts_at_curation_without_auto_curate() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(skinaug(&["fixture", "smoke", "--out", "fx"], dir.path()).0, 0);
    let (code, err) = skinaug(&["--config", "fx/config.toml", "all"], dir.path());
    assert_eq!(code, 0, "{err}");
    assert!(err.contains("halted at curation"), "{err}");
    assert!(!dir.path().join("fx/out/plans").exists());
}
