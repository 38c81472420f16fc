use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use millwatch_core::alertstore::evaluate_many;
use millwatch_core::detect::{detect_batch, OracleNoise};
use millwatch_core::harness::{sweep, ScenarioSetup};
use millwatch_core::par::Execution;
use millwatch_core::simsource::{gen_stream, Scenario, SceneGeometry, ScriptEvent, ScriptKind, StreamOptions};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn scenario(seed: u64) -> Scenario {
    let mut s = Scenario::new(seed, 45.0, 30.0, 12);
    s.push(ScriptEvent::new(ScriptKind::BilletPass, 2.0, 10.0));
    s.push(ScriptEvent::new(ScriptKind::VibrationBurst, 4.0, 7.0).with_param("amplitude_px", 30.0));
    s.push(ScriptEvent::new(ScriptKind::BilletPass, 14.0, 20.0));
    s.push(ScriptEvent::new(ScriptKind::IdleWindow, 22.0, 25.0));
    s
}

fn scenario_sweep(c: &mut Criterion) {
    let setups: Vec<ScenarioSetup> = (0..16)
        .map(|seed| {
            let mut s = ScenarioSetup::new(scenario(seed));
            s.noise.center_noise_px = 2.0;
            s.noise.miss_rate = 0.05;
            s
        })
        .collect();
    let mut g = c.benchmark_group("scenario_sweep_16x30s");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| sweep(&setups, exec))
        });
    }
    g.finish();
}

fn batch_detection(c: &mut Criterion) {
    let truths: Vec<_> = gen_stream(&scenario(1), StreamOptions::new("cam1", 0))
        .unwrap()
        .map(|f| f.truth)
        .collect();
    let noise = OracleNoise {
        center_noise_px: 2.0,
        miss_rate: 0.05,
        fp_rate: 0.01,
        seed: 7,
    };
    let geometry = SceneGeometry::default();
    let mut g = c.benchmark_group("detect_batch_1350");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| detect_batch(&truths, &noise, &geometry, exec).unwrap())
        });
    }
    g.finish();
}

fn batch_evaluation(c: &mut Criterion) {
    let runs: Vec<_> = sweep(
        &(0..8).map(|s| ScenarioSetup::new(scenario(s))).collect::<Vec<_>>(),
        Execution::Parallel,
    )
    .into_iter()
    .map(|o| {
        let o = o.unwrap();
        (o.alerts, o.truth)
    })
    .collect();
    let cases: Vec<_> = runs.iter().cycle().take(512).cloned().collect();
    let mut g = c.benchmark_group("evaluate_512_runs");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate_many(&cases, 3.0, exec))
        });
    }
    g.finish();
}

criterion_group!(benches, scenario_sweep, batch_detection, batch_evaluation);
criterion_main!(benches);
