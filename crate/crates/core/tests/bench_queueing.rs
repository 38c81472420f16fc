//! A slow detector behind a one-slot drop-oldest queue, checked against a
//! discrete-event simulation of the same two-stage system.

use millwatch_core::alertstore::DebounceRule;
use millwatch_core::harness::ScenarioSetup;
use millwatch_core::pipeline::{run_pipeline, ClockMode, PipelineConfig, QueuePolicy, QueueSpec, Sinks};
use millwatch_core::scenarios;

struct Simulated {
    processed: u64,
    dropped: u64,
    mean_latency_s: f64,
}

/// Frames arrive every `1/fps` s into a single slot that newer frames
/// overwrite; one server takes whatever is in the slot and holds it for
/// `service_s`.
fn simulate(n: u64, fps: f64, service_s: f64) -> Simulated {
    let arrival = |k: u64| k as f64 / fps;
    let mut free_at = 0.0;
    let mut next = 0u64;
    let mut latencies = Vec::new();
    while next < n {
        // newest frame already waiting when the server frees up, else the next arrival
        let waiting = ((free_at * fps).floor() as u64).min(n - 1);
        let k = if arrival(waiting) <= free_at && waiting >= next { waiting } else { next };
        let start = free_at.max(arrival(k));
        free_at = start + service_s;
        latencies.push(free_at - arrival(k));
        next = k + 1;
    }
    let processed = latencies.len() as u64;
    Simulated {
        processed,
        dropped: n - processed,
        mean_latency_s: latencies.iter().sum::<f64>() / processed as f64,
    }
}

#[test]
fn simulation_sanity() {
    // a server faster than arrivals takes every frame straight away
    let fast = simulate(100, 10.0, 0.05);
    assert_eq!((fast.processed, fast.dropped), (100, 0));
    assert!((fast.mean_latency_s - 0.05).abs() < 1e-12);
    // every frame waits less than one arrival gap beyond service
    let slow = simulate(1000, 45.0, 0.25);
    assert!(slow.dropped > 0);
    assert!(slow.mean_latency_s >= 0.25 && slow.mean_latency_s < 0.25 + 1.0 / 45.0);
}

#[test]
fn slow_detector_keeps_latency_bounded_by_dropping() {
    let n = 1000;
    let mut setup = ScenarioSetup::new(scenarios::production(2, 45.0, 30.0, 12));
    setup.scenario = millwatch_core::bench::resize_scenario(&setup.scenario, n);
    setup.detector.latency_model_ms = 250.0;
    let mut config = PipelineConfig::new("cam1", 12, ClockMode::Wall);
    config.acquisition_queue = QueueSpec {
        capacity: 1,
        policy: QueuePolicy::DropOldest,
    };
    // fewer frames get through than the usual warm-up, so keep them all
    config.warmup_frames = 0;
    let sinks = Sinks::scratch(DebounceRule::default());
    let report = run_pipeline(setup.pipeline(config, &sinks).unwrap(), &sinks);
    let cam = report.camera("cam1").unwrap();
    let expected = simulate(n as u64, 45.0, 0.25);

    assert!(!report.failed);
    assert!(cam.dropped > 0);
    assert!(cam.latency.mean_ms <= 280.0, "mean {} ms", cam.latency.mean_ms);
    assert!(
        cam.frames_processed.abs_diff(expected.processed) <= 2,
        "processed {} vs simulated {}",
        cam.frames_processed,
        expected.processed
    );
    assert!(cam.dropped.abs_diff(expected.dropped) <= 2);
    assert!(
        (cam.latency.mean_ms - expected.mean_latency_s * 1e3).abs() < 10.0,
        "mean {} ms vs simulated {} ms",
        cam.latency.mean_ms,
        expected.mean_latency_s * 1e3
    );
}
