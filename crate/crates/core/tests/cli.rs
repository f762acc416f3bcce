use std::path::Path;
use std::process::{Command, Output};

use lac_core::analysis::read_trace;

fn lac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lac")).args(args).env_remove("LAC_BACKEND_URL").env_remove("LAC_MODEL").output().expect("lac runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn demo_prints_the_flipped_choice() {
    let o = lac(&["demo"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("chosen:       take saltshaker 1 from cabinet 2"), "{text}");
    assert!(text.contains("prior choice: go to drawer 1"), "{text}");
}

#[test]
fn run_writes_a_readable_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.jsonl");
    let o = lac(&["run", "--task", "pick_up", "--seed", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("success=true"));
    let trace = read_trace(&out).unwrap();
    assert_eq!(trace.episodes.len(), 1);
    let e = &trace.episodes[0];
    assert_eq!(e.records.len(), e.steps_used);
    assert!(e.success);
}

#[test]
fn failed_episode_exits_one() {
    let o = lac(&["run", "--adversarial", "--alpha", "0", "--horizon", "5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("success=false"));
}

#[test]
fn configuration_errors_exit_two() {
    for args in [&["run", "--alpha", "-1"][..], &["run", "--task", "juggle"], &["analyze", "/nonexistent/trace.jsonl"], &["eval", "--epsilon", "2"]] {
        let o = lac(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn eval_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let o = lac(&["eval", "--tasks", "go_to,pick_up", "--seeds", "3", "--epsilon", "0.5", "--out", runs.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("episodes=6"), "{}", stdout(&o));
    for f in ["episodes.jsonl", "summary.csv", "summary.json"] {
        assert!(runs.join(f).is_file(), "{f}");
    }
    let report = dir.path().join("report");
    let o = lac(&["analyze", runs.join("episodes.jsonl").to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "success_rate.svg", "correlation.csv"] {
        assert!(Path::new(&report.join(f)).is_file(), "{f}");
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["episodes"], 6);
}

#[test]
fn external_environment_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("walk.json");
    std::fs::write(&script, r#"{"default_text": "go forward", "next_tokens": [{"when": {"suffix": "This step is "}, "probs": [["GOOD", 0.5], ["BAD", 0.5]]}]}"#).unwrap();
    let server = format!("{} env-server", env!("CARGO_BIN_EXE_lac"));
    let out = dir.path().join("ext.jsonl");
    let o = lac(&["run", "--env", "external", "--env-cmd", &server, "--backend", "scripted", "--script", script.to_str().unwrap(), "--horizon", "4", "--out", out.to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&o.stderr));
    let e = &read_trace(&out).unwrap().episodes[0];
    assert!(e.failure.is_none(), "{:?}", e.failure);
    assert!(e.history.steps.iter().all(|s| s.action == "go forward"));

    let inproc = lac(&["run", "--backend", "scripted", "--script", script.to_str().unwrap(), "--horizon", "4"]);
    assert_eq!(stdout(&inproc).lines().last(), stdout(&o).lines().last());
}

#[test]
fn oracle_needs_the_builtin_environment() {
    let server = format!("{} env-server", env!("CARGO_BIN_EXE_lac"));
    let o = lac(&["run", "--env", "external", "--env-cmd", &server]);
    assert_eq!(o.status.code(), Some(2));
}
