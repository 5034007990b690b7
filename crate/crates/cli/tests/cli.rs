//! Exit codes and stream discipline of the `refnet` binary.

use std::process::{Command, Output};

fn refnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn selfcheck_passes_and_catches_an_injected_fault() {
    let ok = refnet(&["selfcheck", "--sweep-steps", "300"]);
    let text = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(ok.status.code(), Some(0), "{text}{}", stderr(&ok));
    for name in ["grad_check", "distribution", "checkpoint"] {
        assert!(text.contains(&format!("ok {name}:")), "{text}");
    }

    let bad = refnet(&["selfcheck", "--sweep-steps", "300", "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL grad_check"));
    assert!(stderr(&bad).contains("selfcheck failed: grad_check"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();

    let o = refnet(&["train", "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage: refnet train"), "{}", stderr(&o));

    let o = refnet(&["train", "--toy", "copy-span", "--set", "no_such_key=1", "--out", out]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = refnet(&["train", "--toy", "copy-span", "--set", "lr=fast", "--out", out]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = refnet(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));

    let o = refnet(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\": \"x\", \"passage\": \n").unwrap();
    let out = dir.path().join("run");
    let o = refnet(&["train", "--data", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let missing = dir.path().join("missing.jsonl");
    let o = refnet(&["evaluate", "--pairs", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn toy_pipeline_keeps_data_on_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let o = refnet(&[
        "train", "--toy", "copy-span", "--seed", "3", "--epochs", "1", "--set", "toy_train=12", "--set",
        "toy_validation=4", "--set", "toy_test=4", "--out", run_s,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["best_epoch"], 1);
    assert!(run.join("config.resolved").exists() && run.join("vocab.txt").exists());

    let ck = run.join("checkpoints/best.json");
    let test = run.join("data/test.jsonl");
    let o = refnet(&[
        "generate", "--checkpoint", ck.to_str().unwrap(), "--input", test.to_str().unwrap(), "--beam", "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l["question"].is_string() && l["logprob"].is_number()));

    let o = refnet(&["finetune", "--checkpoint", ck.to_str().unwrap(), "--reward", "bogus"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
