use std::path::Path;
use std::process::{Command, Output};

fn dodt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dodt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dodt(args);
    assert!(
        out.status.success(),
        "dodt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_run_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    let out = dir.path().join("out");
    let script = dir.path().join("walker.toml");
    ok(&["gen", "--scene", "walker", "--width", "320", "--height", "240", "--out", path(&seq), "--write-script", path(&script)]);
    assert!(seq.join("meta").is_file() && seq.join("truth.jsonl").is_file());
    assert!(std::fs::read_to_string(&script).unwrap().contains("frame_rate"));

    let stdout = ok(&["run", "--seq", path(&seq), "--out", path(&out)]);
    assert!(stdout.contains("frames processed"), "{stdout}");
    for f in ["tracks.csv", "timing.json", "report.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    let report = dir.path().join("eval.json");
    ok(&["eval", "--tracks", path(&out.join("tracks.csv")), "--seq", path(&seq), "--report", path(&report)]);
    let from_run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let from_eval: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["matched", "id_switches", "misdetections", "dynamic_detections"] {
        assert_eq!(from_run[key], from_eval[key], "{key}");
    }
    assert!(from_eval["matched"].as_u64().unwrap() > 0);
}

#[test]
fn run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    ok(&["gen", "--scene", "noisy", "--width", "160", "--height", "120", "--out", path(&seq)]);
    let tracks: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            ok(&["run", "--seq", path(&seq), "--out", path(&out), "--parallel-detectors", "true"]);
            std::fs::read(out.join("tracks.csv")).unwrap()
        })
        .collect();
    assert_eq!(tracks[0], tracks[1]);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    ok(&["gen", "--scene", "walker", "--width", "160", "--height", "120", "--out", path(&seq)]);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "enable_udepth = false\nenable_dbscan = false\nenable_madlift = false\n").unwrap();
    let out = dir.path().join("out");
    let bad = dodt(&["run", "--seq", path(&seq), "--out", path(&out), "--config", path(&cfg)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("detector"));
    ok(&[
        "run", "--seq", path(&seq), "--out", path(&out), "--config", path(&cfg),
        "--enable-udepth", "true", "--enable-ensemble", "false",
    ]);
}

#[test]
fn ablate_reports_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("ablation.json");
    let stdout = ok(&["ablate", "--scene", "person_wall", "--report", path(&report)]);
    for name in ["full", "udepth_only", "center_distance_cv"] {
        assert!(stdout.contains(name), "{stdout}");
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["variants"].as_array().unwrap().len(), 3);
}

#[test]
fn bench_prints_stage_table() {
    let stdout = ok(&["bench", "--width", "320", "--height", "240"]);
    assert!(stdout.contains("median_ms"), "{stdout}");
}

#[test]
fn rejects_bad_input() {
    assert!(!dodt(&["gen", "--scene", "no_such_scene", "--out", "/tmp/never"]).status.success());
    assert!(!dodt(&["run", "--seq", "/nonexistent/sequence"]).status.success());
    assert!(!dodt(&["bench", "--set", "tracker.bogus=1"]).status.success());
}
