use std::path::PathBuf;

use dfp_core::app_acc::{self, AccApp};
use dfp_core::platform::{ConfigError, Runtime, SystemConfig};
use serde_json::{json, Value};

fn demo_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.json")
}

fn demo_json() -> Value {
    serde_json::from_str(&std::fs::read_to_string(demo_path()).unwrap()).unwrap()
}

fn build(v: &Value) -> Result<Runtime, ConfigError> {
    let cfg = SystemConfig::from_json(&v.to_string())?;
    Runtime::new(cfg, None, &[&AccApp])
}

fn run_demo(seed: u64, secs: f64) -> String {
    let cfg = SystemConfig::load(demo_path()).unwrap();
    let mut rt = Runtime::new(cfg, Some(seed), &[&AccApp]).unwrap();
    let tr = app_acc::run(&mut rt, Some(secs)).unwrap();
    let summary = tr.summary(&app_acc::AccConfig::default(), None);
    rt.report(Some(serde_json::to_value(summary).unwrap()), None)
        .to_json()
}

#[test]
fn demo_config_runs_deterministically() {
    let a = run_demo(42, 20.0);
    let b = run_demo(42, 20.0);
    assert_eq!(a, b);
    let c = run_demo(43, 20.0);
    assert_ne!(a, c, "the seed should reach the device streams");

    let r: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(r["seed"], 42);
    assert_eq!(r["rounds"], 401);
    assert_eq!(r["nodes"]["acc_control"]["fired"], 401);
    assert_eq!(r["nodes"]["acc_control"]["state"], "Running");
    assert_eq!(r["fsm"]["final_mode"]["ads"], "Active");
    assert_eq!(r["topics"]["acc/command"]["samples"], 401);
    // 21 map frames (1 Hz over 0..=20 s), 41 V2X and 201 GNSS frames, plus the lead track.
    let records = r["env"]["records"].as_u64().unwrap();
    assert_eq!(records, 21 + 41 + 201 + 1);
    assert_eq!(r["env"]["odds"]["localized"], 201);
    assert!(r["acc"]["min_gap_m"].as_f64().unwrap() > 0.0);
}

#[test]
fn generic_run_without_app_section() {
    let mut v = demo_json();
    v.as_object_mut().unwrap().remove("acc");
    let mut rt = build(&v).unwrap();
    rt.run_for(1.0).unwrap();
    assert_eq!(rt.rounds(), 20);
    // No speed samples arrive, so the planner never fires.
    let rep = rt.report(None, None);
    assert_eq!(rep.nodes["acc_planner"].fired, 0);
    assert_eq!(rep.nodes["radar_acq"].fired, 20);
    assert_eq!(rt.firing_log().len(), 20);
}

#[test]
fn missing_config_file() {
    let err = SystemConfig::load("/nonexistent/demo.json").unwrap_err();
    assert!(err.to_string().starts_with("config not found"), "{err}");
}

/// Applies `edit` to the demo config and returns the diagnostic.
fn diagnose(edit: impl FnOnce(&mut Value)) -> String {
    let mut v = demo_json();
    edit(&mut v);
    match build(&v) {
        Ok(_) => panic!("config unexpectedly valid"),
        Err(e) => e.to_string(),
    }
}

fn node_mut<'a>(v: &'a mut Value, id: &str) -> &'a mut Value {
    v["pipeline"]["nodes"]
        .as_array_mut()
        .unwrap()
        .iter_mut()
        .find(|n| n["node_id"] == id)
        .unwrap()
}

#[test]
fn each_dangling_reference_has_a_diagnostic() {
    type Edit = Box<dyn FnOnce(&mut Value)>;
    let cases: Vec<(&str, Edit, &str)> = vec![
        (
            "unknown key",
            Box::new(|v| v["colour"] = json!(1)),
            "colour",
        ),
        (
            "duplicate device",
            Box::new(|v| {
                let d = v["devices"][1].clone();
                v["devices"].as_array_mut().unwrap().push(d);
            }),
            "hd_map",
        ),
        (
            "bad device rate",
            Box::new(|v| v["devices"][1]["rate_hz"] = json!(0.0)),
            "hd_map",
        ),
        (
            "duplicate topic",
            Box::new(|v| {
                let t = v["topics"][0].clone();
                v["topics"].as_array_mut().unwrap().push(t);
            }),
            "perception/radar",
        ),
        (
            "bad topic name",
            Box::new(|v| v["topics"][0]["name"] = json!("Bad Topic")),
            "Bad Topic",
        ),
        (
            "undeclared external topic",
            Box::new(|v| {
                v["pipeline"]["external_topics"]
                    .as_array_mut()
                    .unwrap()
                    .push(json!("hal/lidar"))
            }),
            "hal/lidar",
        ),
        (
            "algorithm not provided",
            Box::new(|v| {
                v["algorithms"]
                    .as_array_mut()
                    .unwrap()
                    .push(json!({"name": "slam", "version": "2.0.0"}))
            }),
            "slam",
        ),
        (
            "algorithm not listed",
            Box::new(|v| node_mut(v, "map_ingest")["algorithm"]["version"] = json!("1.0.1")),
            "map_ingest",
        ),
        (
            "unresolved node input",
            Box::new(|v| node_mut(v, "acc_planner")["inputs"][0] = json!("env/leader")),
            "env/leader",
        ),
        (
            "unknown node group",
            Box::new(|v| node_mut(v, "acc_control")["group_id"] = json!("brakes")),
            "brakes",
        ),
        (
            "fsm action names undefined group",
            Box::new(|v| {
                v["fsms"][0]["transitions"][0]["actions"][0] = json!({"StartGroup": "lidar_stack"})
            }),
            "lidar_stack",
        ),
        (
            "fsm guard names unknown fsm",
            Box::new(|v| v["fsms"][0]["transitions"][0]["guard"][0]["fsm"] = json!("battery")),
            "battery",
        ),
        (
            "fsm unknown state",
            Box::new(|v| v["fsms"][0]["transitions"][0]["to"] = json!("Cruise")),
            "Cruise",
        ),
        (
            "schedule unknown fsm",
            Box::new(|v| v["schedule"][0]["fsm"] = json!("wipers")),
            "wipers",
        ),
        (
            "odd with only stopwords",
            Box::new(|v| v["odds"][0]["query"]["tokens"] = json!(["on", "the"])),
            "wet_weather",
        ),
        (
            "duplicate odd",
            Box::new(|v| {
                let o = v["odds"][0].clone();
                v["odds"].as_array_mut().unwrap().push(o);
            }),
            "wet_weather",
        ),
        (
            "non-positive period",
            Box::new(|v| v["period_ms"] = json!(0.0)),
            "period_ms",
        ),
        (
            "acc radar missing",
            Box::new(|v| v["acc"]["radar_device"] = json!("rear_radar")),
            "rear_radar",
        ),
        (
            "acc radar wrong kind",
            Box::new(|v| v["acc"]["radar_device"] = json!("gnss")),
            "gnss",
        ),
        (
            "acc radar rate",
            Box::new(|v| v["devices"][0]["rate_hz"] = json!(10.0)),
            "front_radar",
        ),
        (
            "acc command topic",
            Box::new(|v| v["acc"]["command_topic"] = json!("acc/cmd")),
            "acc/cmd",
        ),
        (
            "binding conflict",
            Box::new(|v| {
                v["pipeline"]["groups"]
                    .as_array_mut()
                    .unwrap()
                    .iter_mut()
                    .find(|g| g["group_id"] == "control")
                    .unwrap()["binding_label"] = json!("ai-unit")
            }),
            "acc_control",
        ),
    ];
    for (name, edit, needle) in cases {
        let msg = diagnose(edit);
        assert!(
            msg.contains(needle),
            "{name}: diagnostic {msg:?} does not name {needle:?}"
        );
    }
}

#[test]
fn config_hash_tracks_content() {
    let a = SystemConfig::load(demo_path()).unwrap();
    let mut b = a.clone();
    assert_eq!(a.content_hash(), b.content_hash());
    b.period_ms = 25.0;
    assert_ne!(a.content_hash(), b.content_hash());
}
