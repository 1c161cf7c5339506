//! Acceptance suite: the twelve checks at their stated tolerances, plus the
//! end-to-end forms of the SI-formula and determinism checks through the binary.

use std::fs;
use std::path::Path;
use std::process::Command;

use collapsar_cli::selftest::{run_criterion, CRITERIA};

fn workers() -> usize {
    std::env::var("COLLAPSAR_WORKERS")
        .ok()
        .and_then(|w| w.parse().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[test]
fn all_criteria() {
    let w = workers();
    let mut failed = Vec::new();
    for (id, _, _) in CRITERIA {
        let r = run_criterion(id, w);
        println!("{}", r.line());
        if !r.passed {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}

fn collapsar(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_collapsar"))
        .args(args)
        .env_remove("COLLAPSAR_WORKERS")
        .output()
        .expect("binary runs")
}

#[test]
fn predict_reports_gram_spread() {
    let out = collapsar(&["predict", "--mass-kg", "1e-3", "--format", "json"]);
    assert!(out.status.success());
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let spread = rows[0]["stationary_spread_m"].as_f64().unwrap();
    let ok = (spread / 4.6e-14 - 1.0).abs() <= 0.02;
    println!(
        "predict --mass-kg 1e-3: {spread:e} m {}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok);
    let text = collapsar(&["predict", "--mass-kg", "1e-3"]);
    assert!(String::from_utf8(text.stdout).unwrap().contains("4.6011e-14 m"));
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn configs_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Runs a config with one worker, replays the manifest with four, and compares bytes.
fn replay_is_identical(config: &Path, extra: &[&str]) -> bool {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let mut args = vec![
        "ensemble",
        "--config",
        config.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
        "--workers",
        "1",
    ];
    args.extend_from_slice(extra);
    let first = collapsar(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let manifest = a.join("manifest.json");
    let second = collapsar(&[
        "ensemble",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--workers",
        "4",
    ]);
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));
    dir_contents(&a) == dir_contents(&b)
}

/// Shrinks an example config so the end-to-end replay stays quick.
fn shrunk(name: &str, trajectories: usize, horizon: Option<f64>, dir: &Path) -> std::path::PathBuf {
    let mut c: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(configs_dir().join(name)).unwrap()).unwrap();
    c["ensemble"]["trajectories"] = trajectories.into();
    if let Some(h) = horizon {
        c["simulation"]["horizon"] = h.into();
    }
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string(&c).unwrap()).unwrap();
    path
}

#[test]
fn manifest_replay_is_byte_identical_across_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (shrunk("grw.json", 24, Some(2.0), tmp.path()), vec![]),
        (
            shrunk("qmupl.json", 12, Some(0.5), tmp.path()),
            vec!["--format", "json"],
        ),
        (
            shrunk("csl.json", 24, Some(0.25), tmp.path()),
            vec!["--format", "ndjson", "--gzip"],
        ),
        (shrunk("born.json", 24, None, tmp.path()), vec!["--seed", "7"]),
    ];
    let mut all = true;
    for (path, extra) in &cases {
        let same = replay_is_identical(path, extra);
        println!(
            "replay {} with workers 1 and 4: {}",
            path.file_name().unwrap().to_string_lossy(),
            if same { "PASS" } else { "FAIL" }
        );
        all &= same;
    }
    assert!(all);
}
