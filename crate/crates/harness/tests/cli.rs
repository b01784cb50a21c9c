use std::path::Path;
use std::process::{Command, Output};

fn asyncrl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asyncrl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn error_line(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

#[test]
fn missing_config_is_a_machine_readable_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = asyncrl(&["train", "--config", "nope.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "io");
}

#[test]
fn unknown_key_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "schema_version = 1\nseed = 1\nbogus = 3\n").unwrap();
    let out = asyncrl(&["simulate", "--config", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "parse");
}

#[test]
fn fuse_without_section_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = asyncrl(&["fuse", "--seed", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "config");
}

#[test]
fn simulate_then_trace_diff() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "schema_version = 1\nseed = 3\n[simulate]\ntarget_batches = 10\n",
    )
    .unwrap();
    for out in ["a", "b"] {
        let r = asyncrl(&["simulate", "--config", "c.toml", "--out", out], dir.path());
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        let summary: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
        assert_eq!(summary["command"], "simulate");
    }
    let same = asyncrl(&["trace-diff", "a/trace-dora.jsonl", "b/trace-dora.jsonl"], dir.path());
    assert_eq!(same.status.code(), Some(0));

    let r = asyncrl(&["simulate", "--config", "c.toml", "--seed", "4", "--mode", "dora", "--out", "c"], dir.path());
    assert!(r.status.success());
    assert!(!dir.path().join("c/trace-sync.jsonl").exists());
    let differ = asyncrl(&["trace-diff", "a/trace-dora.jsonl", "c/trace-dora.jsonl"], dir.path());
    assert_eq!(differ.status.code(), Some(1));
    let diff: serde_json::Value = serde_json::from_slice(&differ.stdout).unwrap();
    assert_eq!(diff["identical"], false);
}

#[test]
fn train_eval_round_trip_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "schema_version = 1\nseed = 2\n[train]\nsteps = 10\n",
    )
    .unwrap();
    let r = asyncrl(&["train", "--config", "c.toml", "--out", "run", "--mode", "sync"], dir.path());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let r = asyncrl(
        &["eval", "--config", "c.toml", "--checkpoint", "run/final.ckpt", "--out", "ev"],
        dir.path(),
    );
    assert!(r.status.success());
    let record: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run/run_record.json")).unwrap()).unwrap();
    let eval: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("ev/eval.json")).unwrap()).unwrap();
    assert_eq!(record["config"]["train"]["mode"], "sync");
    assert_eq!(eval["table"], record["final_eval"]);
}
