//! Stream clients must not slow the pipeline down: slow readers skip frames
//! and latency stays where it is without them.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use millwatch::app::{run, RunOptions};
use millwatch::config::parse_config;
use millwatch_core::pipeline::CameraReport;
use millwatch_core::scenarios;

/// Allowed shift of the mean end-to-end latency, a tenth of a frame period
/// at 45 fps and several times the run-to-run spread of an idle machine.
const MEAN_TOLERANCE_MS: f64 = 2.0;

/// Reads the stream in small bites with pauses in between, far below the
/// frame rate, and returns the frame seq of every part seen.
fn slow_client(addr: SocketAddr, stop: Instant) -> Vec<u64> {
    let mut conn = TcpStream::connect(addr).unwrap();
    conn.set_read_timeout(Some(Duration::from_millis(500))).unwrap();
    write!(conn, "GET /video_feed?camera=cam1 HTTP/1.1\r\nHost: test\r\n\r\n").unwrap();
    let mut seen = Vec::new();
    let mut buf = [0u8; 4096];
    let mut text = Vec::new();
    while Instant::now() < stop {
        match conn.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => text.extend_from_slice(&buf[..n]),
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        thread::sleep(Duration::from_millis(40));
    }
    let text = String::from_utf8_lossy(&text);
    for line in text.split("\r\n") {
        if let Some(seq) = line.strip_prefix("X-Frame-Seq: ") {
            seen.push(seq.parse().unwrap());
        }
    }
    seen
}

fn run_with_clients(dir: &Path, clients: usize) -> (CameraReport, Vec<Vec<u64>>) {
    let text = r#"{"cameras": [{"camera_id": "cam1", "source": "synth:line.scenario.json", "profile_mm": 12, "render": true}],
                   "http": {"bind": "127.0.0.1:0"}, "warmup_frames": 45}"#;
    let cfg = parse_config(text, dir).unwrap();
    let (tx, rx) = mpsc::channel();
    let opts = RunOptions {
        linger: Duration::ZERO,
        http_ready: Some(tx),
    };
    let runner = thread::spawn(move || run(&cfg, &opts).map_err(|f| f.message().to_string()));
    let addr = rx.recv().unwrap();
    let stop = Instant::now() + Duration::from_secs(30);
    let readers: Vec<_> = (0..clients).map(|_| thread::spawn(move || slow_client(addr, stop))).collect();
    let outcome = runner.join().unwrap().unwrap();
    let seen = readers.into_iter().map(|r| r.join().unwrap()).collect();
    assert!(!outcome.report.failed);
    (outcome.report.cameras[0].clone(), seen)
}

#[test]
fn stream_clients_do_not_disturb_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenarios::production(1, 45.0, 8.0, 12);
    std::fs::write(dir.path().join("line.scenario.json"), serde_json::to_string(&scenario).unwrap()).unwrap();
    let n = scenario.frame_count();

    let mut idle = Vec::new();
    let mut loaded = Vec::new();
    for _ in 0..2 {
        let (cam, _) = run_with_clients(dir.path(), 0);
        idle.push(cam);
        let (cam, seen) = run_with_clients(dir.path(), 4);
        for s in &seen {
            assert!(s.len() >= 5, "client saw only {} frames", s.len());
            assert!(s.windows(2).all(|w| w[0] < w[1]), "frames out of order: {s:?}");
            assert!(s.windows(2).any(|w| w[1] - w[0] > 1), "a slow client must skip frames: {s:?}");
            assert!((s.len() as u64) < n);
        }
        loaded.push(cam);
    }
    for cam in idle.iter().chain(&loaded) {
        assert_eq!((cam.frames_processed, cam.dropped), (n, 0));
    }
    let mean = |cams: &[CameraReport]| cams.iter().map(|c| c.latency.mean_ms).sum::<f64>() / cams.len() as f64;
    let (m0, m4) = (mean(&idle), mean(&loaded));
    eprintln!("mean latency: {m0:.3} ms without clients, {m4:.3} ms with 4");
    assert!(m4 <= m0 + MEAN_TOLERANCE_MS, "{m4:.3} ms with clients vs {m0:.3} ms without");
    for cam in &loaded {
        assert!((cam.latency.sustained_fps - 45.0).abs() < 0.5, "{}", cam.latency.sustained_fps);
    }
}
