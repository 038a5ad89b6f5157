use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn demo_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.json")
}

fn demo() -> Value {
    serde_json::from_str(&std::fs::read_to_string(demo_path()).unwrap()).unwrap()
}

fn dfpctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfpctl"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, v: &Value) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_exits_2() {
    let o = dfpctl(&["run", "--config", "/nonexistent/demo.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config not found"), "{}", stderr(&o));
}

#[test]
fn dangling_group_reference_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = demo();
    v["fsms"][0]["transitions"][0]["actions"][0] = json!({"StartGroup": "lidar_stack"});
    let o = dfpctl(&["run", "--config", &write_config(dir.path(), &v)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lidar_stack"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn clean_run_writes_report_and_side_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = dfpctl(&[
        "run",
        "--config",
        demo_path().to_str().unwrap(),
        "--duration",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["rounds"], 101);
    assert_eq!(report["seed"], 42);
    assert!(report["fault"].is_null());
    let lines = |ext: &str| {
        std::fs::read_to_string(dir.path().join(format!("report.{ext}")))
            .unwrap()
            .lines()
            .count()
    };
    assert_eq!(lines("firing.jsonl"), 101);
    assert_eq!(lines("trajectory.jsonl"), 101);
    assert_eq!(lines("fsm.jsonl"), 2);
    let summary = String::from_utf8_lossy(&o.stdout);
    assert!(summary.contains("acc_control"), "{summary}");
}

#[test]
fn report_to_stdout_without_out() {
    let o = dfpctl(&[
        "run",
        "--config",
        demo_path().to_str().unwrap(),
        "--duration",
        "1",
        "--seed",
        "7",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["seed"], 7);
}

#[test]
fn collision_exits_1_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = demo();
    v["acc"]["scenario"]["lead_profile"] = json!([{"t_start": 1.0, "speed": 0.0}]);
    let out = dir.path().join("crash.json");
    let o = dfpctl(&[
        "run",
        "--config",
        &write_config(dir.path(), &v),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("collision"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(report["fault"].as_str().unwrap().contains("collision"));
    let t = report["acc"]["collision_at_s"].as_f64().unwrap();
    assert!(t > 1.0 && t < 120.0, "{t}");
    assert!(report["rounds"].as_u64().unwrap() < 2401);
}

#[test]
fn cascade_overflow_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = demo();
    let volley = |id: &str, other: &str| {
        json!({
            "fsm_id": id, "states": ["A", "B"], "initial": "A",
            "transitions": [
                {"from": "A", "event": "ball", "to": "B", "actions": [{"EmitEvent": {"target": other, "event": "ball"}}]},
                {"from": "B", "event": "ball", "to": "A", "actions": [{"EmitEvent": {"target": other, "event": "ball"}}]}
            ]
        })
    };
    let fsms = v["fsms"].as_array_mut().unwrap();
    fsms.push(volley("ping", "pong"));
    fsms.push(volley("pong", "ping"));
    v["schedule"]
        .as_array_mut()
        .unwrap()
        .push(json!({"at_s": 0.5, "fsm": "ping", "event": "ball"}));
    let o = dfpctl(&["run", "--config", &write_config(dir.path(), &v)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("1000"), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["fault"].as_str().unwrap().contains("cascade"));
}

#[test]
fn bench_small_sizes_and_limits() {
    let o = dfpctl(&["bench", "--sizes", "0,1K", "--samples", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    let rows = table.lines().filter(|l| {
        !l.contains("ratio") && (l.starts_with("zero-copy") || l.starts_with("copying"))
    });
    assert_eq!(rows.count(), 4);
    assert!(table.contains("zero-copy ratio"));

    let o = dfpctl(&["bench", "--sizes", "16M", "--samples", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("exceeds limit"), "{}", stderr(&o));

    let o = dfpctl(&["bench", "--sizes", "lots"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn query_env_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/env_corpus.jsonl");
    let corpus = corpus.to_str().unwrap();

    let o = dfpctl(&["query-env", "--store", corpus, "--tokens", "on", "in"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("stopwords"));

    let o = dfpctl(&[
        "query-env",
        "--store",
        "/nonexistent/env.jsonl",
        "--tokens",
        "rain",
    ]);
    assert_eq!(o.status.code(), Some(2));

    let garbage = dir.path().join("bad.jsonl");
    std::fs::write(&garbage, "{not json}\n").unwrap();
    let o = dfpctl(&[
        "query-env",
        "--store",
        garbage.to_str().unwrap(),
        "--tokens",
        "rain",
    ]);
    assert_eq!(o.status.code(), Some(2));

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = dfpctl(&[
        "query-env",
        "--store",
        empty.to_str().unwrap(),
        "--tokens",
        "rain",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());

    // Tokens may come as one string or several arguments.
    let a = dfpctl(&[
        "query-env",
        "--store",
        corpus,
        "--tokens",
        "tunnel on highway in rain",
    ]);
    let b = dfpctl(&[
        "query-env",
        "--store",
        corpus,
        "--tokens",
        "tunnel",
        "highway",
        "rain",
    ]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8_lossy(&a.stdout).lines().count(), 3);
}

#[test]
fn debug_logging_goes_to_stderr() {
    let o = Command::new(env!("CARGO_BIN_EXE_dfpctl"))
        .args([
            "run",
            "--config",
            demo_path().to_str().unwrap(),
            "--duration",
            "0.1",
        ])
        .env("DFP_LOG", "info")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("valid"), "{}", stderr(&o));
    serde_json::from_slice::<Value>(&o.stdout).unwrap();
}
