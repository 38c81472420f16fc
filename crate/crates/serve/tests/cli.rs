use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use millwatch_core::alertstore::TruthEvent;
use millwatch_core::harness::DEFAULT_START_TS;
use millwatch_core::scenarios;
use millwatch_core::simsource::{gen_stream, write_replay, Scenario, StreamOptions};
use millwatch_core::types::{Alert, AnomalyEvent, AnomalyKind, NANOS_PER_SEC};
use serde_json::Value;

fn millwatch(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_millwatch"))
        .args(args)
        .current_dir(dir)
        .env_remove("MILLWATCH_CONFIG")
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn write_scenario(dir: &Path, name: &str, s: &Scenario) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string(s).unwrap()).unwrap();
    path
}

fn two_second_config(dir: &Path) -> PathBuf {
    write_scenario(dir, "line.scenario.json", &scenarios::production(1, 45.0, 2.0, 12));
    let cfg = dir.join("ok.json");
    std::fs::write(
        &cfg,
        r#"{"cameras": [{"camera_id": "cam1", "source": "synth:line.scenario.json", "profile_mm": 12}],
            "sinks": {"alerts": "out/alerts.ndjson", "metrics": "out/metrics.lp"}}"#,
    )
    .unwrap();
    cfg
}

#[test]
fn run_with_config_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    two_second_config(dir.path());
    let out = millwatch(dir.path(), &["run", "--config", "ok.json", "--clock", "simulated"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    assert_eq!(report["failed"], false);
    assert_eq!(report["cameras"][0]["frames_processed"], 90);
    assert!(dir.path().join("out/alerts.ndjson").is_file());
    assert!(dir.path().join("out/metrics.lp").is_file());
}

#[test]
fn config_path_falls_back_to_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_second_config(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_millwatch"))
        .args(["run", "--clock", "simulated", "--report", "report.json"])
        .current_dir(dir.path())
        .env("MILLWATCH_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["cameras"][0]["frames_processed"], 90);
}

#[test]
fn missing_config_exits_1_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = millwatch(dir.path(), &["run", "--config", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}

#[test]
fn invalid_config_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    write_scenario(dir.path(), "line.scenario.json", &scenarios::production(1, 45.0, 2.0, 12));
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"cameras": [{"camera_id": "north", "source": "synth:line.scenario.json", "profile_mm": 12},
                        {"camera_id": "north", "source": "synth:line.scenario.json", "profile_mm": 12,
                         "thresholds": {"vibration_std_px": -1}}],
            "debounce_sec": 10}"#,
    )
    .unwrap();
    let out = millwatch(dir.path(), &["run", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("\"north\""), "{err}");
    assert!(err.contains("vibration_std_px"), "{err}");
    assert!(err.contains("debounce_sec"), "{err}");
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["run", "--bogus"], &["bench"], &["run", "--source", "ftp:x"]] {
        let out = millwatch(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(millwatch(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn evaluate_ten_bursts() {
    let dir = tempfile::tempdir().unwrap();
    let s = NANOS_PER_SEC;
    let truth: Vec<TruthEvent> = (0..10)
        .map(|i| TruthEvent {
            kind: AnomalyKind::Vibration,
            camera_id: None,
            t_start: DEFAULT_START_TS + i * 60 * s,
            t_end: DEFAULT_START_TS + i * 60 * s + 2 * s,
        })
        .collect();
    // the last burst goes unseen, the rest alert one second in
    let alerts: String = truth[..9]
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let a = Alert {
                event: AnomalyEvent {
                    kind: AnomalyKind::Vibration,
                    camera_id: "cam1".into(),
                    frame_seq: i as u64,
                    ts: t.t_start + s,
                    magnitude: 30.0,
                    detail: String::new(),
                },
                alert_id: i as u64 + 1,
                raised_ts: t.t_start + s,
                suppressed: false,
                coalesced_count: 1,
            };
            serde_json::to_string(&a).unwrap() + "\n"
        })
        .collect();
    std::fs::write(dir.path().join("alerts.ndjson"), alerts).unwrap();
    std::fs::write(dir.path().join("truth.json"), serde_json::to_string(&truth).unwrap()).unwrap();
    let out = millwatch(dir.path(), &["evaluate", "--alerts", "alerts.ndjson", "--truth", "truth.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_json(&out);
    let vib = report["per_kind"]
        .as_array()
        .unwrap()
        .iter()
        .find(|k| k["kind"] == "Vibration")
        .unwrap();
    assert_eq!((vib["tp"].as_u64(), vib["fn"].as_u64(), vib["fp"].as_u64()), (Some(9), Some(1), Some(0)));
    assert_eq!(vib["recall"].as_f64(), Some(9.0 / 10.0));
    assert_eq!(report["false_alarm_rate"].as_f64(), Some(0.0));
}

#[test]
fn truth_then_replay_rescoring() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenarios::mixed(5, 6);
    write_scenario(dir.path(), "mixed.scenario.json", &scenario);
    let frames: Vec<_> = gen_stream(&scenario, StreamOptions::new("cam7", DEFAULT_START_TS))
        .unwrap()
        .collect();
    write_replay(&dir.path().join("rec.ndjson"), &frames).unwrap();

    let out = millwatch(dir.path(), &["truth", "--scenario", "mixed.scenario.json"]);
    assert_eq!(out.status.code(), Some(0));
    std::fs::write(dir.path().join("truth.json"), &out.stdout).unwrap();

    let out = millwatch(
        dir.path(),
        &["replay", "--input", "rec.ndjson", "--truth", "truth.json", "--alerts", "replayed.ndjson"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["report"]["cameras"][0]["camera_id"], "cam7");
    assert_eq!(v["report"]["cameras"][0]["frames_processed"], frames.len());
    // every scripted anomaly of this run happens on a running line
    assert_eq!(v["eval"]["misalignment_recall"].as_f64(), Some(1.0));
    assert_eq!(v["eval"]["per_kind"][0]["recall"].as_f64(), Some(1.0));

    let out = millwatch(dir.path(), &["evaluate", "--alerts", "replayed.ndjson", "--truth", "truth.json"]);
    assert_eq!(stdout_json(&out)["tp"], v["eval"]["tp"]);
}

#[test]
fn corrupt_replay_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenarios::production(1, 45.0, 2.0, 12);
    let frames: Vec<_> = gen_stream(&scenario, StreamOptions::new("cam1", DEFAULT_START_TS))
        .unwrap()
        .collect();
    let path = dir.path().join("rec.ndjson");
    write_replay(&path, &frames).unwrap();
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{not json\n");
    std::fs::write(&path, text).unwrap();

    let out = millwatch(dir.path(), &["replay", "--input", "rec.ndjson"]);
    assert_eq!(out.status.code(), Some(2));
    let v = stdout_json(&out);
    assert_eq!(v["report"]["failed"], true);
    assert_eq!(v["report"]["cameras"][0]["frames_processed"], 90);
    assert!(v["report"]["cameras"][0]["failure"].as_str().unwrap().contains("line 91"));
}

#[test]
fn bench_emits_latency_report() {
    let dir = tempfile::tempdir().unwrap();
    // a fast source keeps the thousand frames short
    write_scenario(dir.path(), "fast.scenario.json", &scenarios::production(1, 500.0, 3.0, 12));
    let out = millwatch(dir.path(), &["bench", "--scenario", "fast.scenario.json", "--frames", "1000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = stdout_json(&out);
    assert_eq!(r["frames"], 900);
    assert_eq!(r["warmup_excluded"], 100);
    assert_eq!(r["frames_processed"], 1000);
    assert!(r["p50_ms"].as_f64() <= r["p99_ms"].as_f64());

    let out = millwatch(dir.path(), &["bench", "--scenario", "fast.scenario.json", "--frames", "999"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1000"));
}

#[test]
fn scenario_presets_are_valid() {
    let dir = tempfile::tempdir().unwrap();
    for preset in ["production", "mixed", "gate-stress", "short-cut"] {
        let out = millwatch(dir.path(), &["scenario", "--preset", preset, "--seed", "4"]);
        assert_eq!(out.status.code(), Some(0), "{preset}");
        let s: Scenario = serde_json::from_slice(&out.stdout).unwrap();
        s.validate().unwrap();
    }
}

#[test]
fn shipped_demo_config_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.json");
    let cfg = millwatch::config::load_config(&path).unwrap();
    assert_eq!(cfg.cameras.len(), 1);
    assert!(cfg.cameras[0].render);
}
