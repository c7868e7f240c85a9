use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fedsarsa(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsarsa"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn error_doc(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).expect("stderr is one JSON document")
}

#[test]
fn missing_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"n_seeds": 2}"#).unwrap();
    let o = fedsarsa(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    let e = error_doc(&o);
    assert_eq!(e["error"]["kind"], "config");
    assert!(e["error"]["message"].as_str().unwrap().contains("schema_version"));
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"schema_version": 1, "n_agent": 2}"#).unwrap();
    let o = fedsarsa(&["report", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(error_doc(&o)["error"]["message"].as_str().unwrap().contains("n_agent"));
}

#[test]
fn mismatched_kind_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"schema_version": 1, "kind": "table1"}"#).unwrap();
    let o = fedsarsa(&["speedup", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert_eq!(error_doc(&o)["error"]["kind"], "config");
}

#[test]
fn report_on_single_state_toy() {
    let dir = tempfile::tempdir().unwrap();
    let env = dir.path().join("toy.json");
    let toy = fedsarsa::env::Mdp::new(1, 1, 0.9, vec![1.0], vec![0.5]).unwrap();
    std::fs::write(&env, toy.to_json().unwrap()).unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, format!(r#"{{"schema_version": 1, "env_files": [{:?}]}}"#, env.to_str().unwrap())).unwrap();
    let o = fedsarsa(&["report", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["constants"]["c_a"].as_f64(), Some(1.9));
    let written: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(written, doc);
}

#[test]
fn run_replays_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"schema_version": 1, "n_agents": 4, "local_steps": 5, "rounds": 20}"#).unwrap();
    let first = dir.path().join("first");
    assert!(fedsarsa(&["run", "--config", cfg.to_str().unwrap()], &first).status.success());
    let replay_cfg = first.join("single_run.config.json");
    let second = dir.path().join("second");
    assert!(fedsarsa(&["run", "--config", replay_cfg.to_str().unwrap()], &second).status.success());
    assert_eq!(std::fs::read(first.join("run.csv")).unwrap(), std::fs::read(second.join("run.csv")).unwrap());
}

#[test]
fn generate_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(fedsarsa(&["generate"], &a).status.success());
    assert!(fedsarsa(&["generate", "--threads", "2"], &b).status.success());
    for f in ["env_0.json", "env_1.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn seeds_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"schema_version": 1, "n_agents": 2, "local_steps_grid": [2, 4], "samples_per_agent": 40}"#,
    )
    .unwrap();
    let o = fedsarsa(&["local-steps", "--config", cfg.to_str().unwrap(), "--seeds", "2"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["series"][0]["plateaus"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("local_steps/N2_H4_aggregate.csv").exists());
}

#[test]
fn table1_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = fedsarsa(&["table1"], dir.path());
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("table1/table1.csv")).unwrap();
    assert!(csv.contains("\n0,0,0.0000000000000000e0,"));
}
