use std::path::Path;

use millwatch::config::parse_config;
use millwatch_core::scenarios;
use proptest::prelude::*;
use serde_json::{json, Value};

/// vibration std, flapper threshold, window, center noise, miss rate,
/// render, flapper baseline
type CameraFields = (f64, f64, u32, f64, f64, bool, Option<(f64, f64)>);

fn camera(i: usize, fields: CameraFields) -> Value {
    let (std_px, flapper_px, window, noise_px, miss, render, baseline) = fields;
    json!({
        "camera_id": format!("cam-{i}"),
        "source": if i.is_multiple_of(2) { "synth:line.scenario.json" } else { "replay:rec.ndjson" },
        "profile_mm": 12,
        "thresholds": {"vibration_std_px": std_px, "flapper_threshold_px": flapper_px, "window": window},
        "noise": {"center_noise_px": noise_px, "miss_rate": miss, "seed": i},
        "calibration": {"flapper_baseline": baseline},
        "render": render,
    })
}

fn camera_fields() -> impl Strategy<Value = CameraFields> {
    (
        0.1..100.0f64,
        0.1..100.0f64,
        2u32..120,
        0.0..10.0f64,
        0.0..1.0f64,
        any::<bool>(),
        proptest::option::of((0.0..640.0f64, 0.0..480.0f64)),
    )
}

fn signals() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(json!({"kind": "scripted"})),
        Just(json!({"kind": "none"})),
        (1024u16..65000).prop_map(|p| json!({"kind": "tcp", "bind": format!("127.0.0.1:{p}")})),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loaded_config_survives_a_round_trip(
        seed in any::<u64>(),
        cams in proptest::collection::vec(camera_fields(), 1..4),
        acq_cap in 1usize..500,
        drop_oldest in any::<bool>(),
        simulated in any::<bool>(),
        debounce_s in 0.01..60.0f64,
        match_window_s in 0.0..10.0f64,
        grace_s in 0.0..5.0f64,
        signals in signals(),
        http in proptest::option::of(1.0..60.0f64),
        clip_len_s in proptest::option::of(1.0..600.0f64),
        warmup in 0usize..200,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let s = scenarios::production(1, 45.0, 2.0, 12);
        std::fs::write(dir.path().join("line.scenario.json"), serde_json::to_string(&s).unwrap()).unwrap();
        std::fs::write(dir.path().join("rec.ndjson"), "").unwrap();

        let mut doc = json!({
            "seed": seed,
            "cameras": cams.into_iter().enumerate().map(|(i, f)| camera(i, f)).collect::<Vec<_>>(),
            "clock": if simulated { "simulated" } else { "wall" },
            "queues": {"acquisition": {"capacity": acq_cap, "policy": if drop_oldest { "DropOldest" } else { "Block" }}},
            "debounce_s": debounce_s,
            "match_window_s": match_window_s,
            "fusion": {"grace_s": grace_s},
            "signals": signals,
            "warmup_frames": warmup,
            "sinks": {"alerts": "out/alerts.ndjson"},
        });
        if let Some(fps) = http {
            doc["http"] = json!({"bind": "127.0.0.1:0", "stream_fps": fps});
        }
        if let Some(len) = clip_len_s {
            doc["clips"] = json!({"root": "clips", "clip_len_s": len});
        }
        let cfg = parse_config(&doc.to_string(), dir.path()).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let again = parse_config(&text, Path::new("/somewhere/else")).unwrap();
        prop_assert_eq!(again, cfg);
    }
}
