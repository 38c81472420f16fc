//! Operator endpoints: the annotated live stream, recent alerts, counters
//! and stage health.
//!
//! Handlers only read the live state the pipeline publishes. A stream client
//! always gets the newest frame; frames it was too slow for are skipped.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use millwatch_core::alertstore::{AlertHub, MetricSink};
use millwatch_core::annotate::{annotate, RgbImage};
use millwatch_core::live::{LiveSnapshot, LiveState};
use parking_lot::Mutex;
use serde::Deserialize;
use serde_json::json;
use tokio::time::Instant;

pub const BOUNDARY: &str = "frame";
pub const DEFAULT_ALERT_LIMIT: usize = 50;
const JPEG_QUALITY: u8 = 80;
const POLL: Duration = Duration::from_millis(5);

#[derive(Clone)]
struct Encoded {
    version: u64,
    seq: u64,
    jpeg: Bytes,
}

/// Encoded frames, one per camera, shared by every stream client so a frame
/// is encoded once however many clients watch it.
#[derive(Default)]
pub struct JpegCache {
    latest: Mutex<HashMap<String, Encoded>>,
    encodes: AtomicU64,
}

impl JpegCache {
    pub fn encodes(&self) -> u64 {
        self.encodes.load(Ordering::Relaxed)
    }

    fn cached(&self, camera_id: &str, version: u64) -> Option<Encoded> {
        self.latest.lock().get(camera_id).filter(|e| e.version == version).cloned()
    }

    fn store(&self, camera_id: &str, encoded: Encoded) {
        self.encodes.fetch_add(1, Ordering::Relaxed);
        let mut latest = self.latest.lock();
        match latest.get(camera_id) {
            Some(e) if e.version > encoded.version => {}
            _ => {
                latest.insert(camera_id.to_string(), encoded);
            }
        }
    }
}

pub fn encode_jpeg(img: &RgbImage) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, JPEG_QUALITY)
        .encode(&img.data, img.width, img.height, image::ExtendedColorType::Rgb8)
        .map_err(|e| e.to_string())?;
    Ok(out)
}

fn render(snapshot: &LiveSnapshot) -> Result<Vec<u8>, String> {
    let img = annotate(snapshot).map_err(|e| e.to_string())?;
    encode_jpeg(&img)
}

#[derive(Clone)]
pub struct AppState {
    pub live: Arc<LiveState>,
    pub alerts: Arc<AlertHub>,
    pub metrics: Arc<MetricSink>,
    pub frame_interval: Duration,
    pub cache: Arc<JpegCache>,
}

impl AppState {
    pub fn new(live: Arc<LiveState>, alerts: Arc<AlertHub>, metrics: Arc<MetricSink>, stream_fps: f64) -> Self {
        AppState {
            live,
            alerts,
            metrics,
            frame_interval: Duration::from_secs_f64(1.0 / stream_fps),
            cache: Arc::default(),
        }
    }

    /// The newest frame of a camera as JPEG.
    async fn jpeg(&self, camera_id: &str) -> Option<Encoded> {
        let (version, snapshot) = self.live.latest_frame(camera_id)?;
        if let Some(hit) = self.cache.cached(camera_id, version) {
            return Some(hit);
        }
        let seq = snapshot.frame.seq();
        let rendered = tokio::task::spawn_blocking(move || render(&snapshot)).await.ok()?;
        match rendered {
            Ok(jpeg) => {
                let encoded = Encoded {
                    version,
                    seq,
                    jpeg: Bytes::from(jpeg),
                };
                self.cache.store(camera_id, encoded.clone());
                Some(encoded)
            }
            Err(e) => {
                log::warn!("{camera_id}: cannot encode frame {version}: {e}");
                None
            }
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/video_feed", get(video_feed))
        .route("/alerts", get(alerts))
        .route("/metrics", get(metrics))
        .route("/health", get(health))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
pub struct FeedQuery {
    camera: Option<String>,
}

fn multipart_part(seq: u64, jpeg: &[u8]) -> Bytes {
    let head = format!(
        "--{BOUNDARY}\r\nContent-Type: image/jpeg\r\nContent-Length: {}\r\nX-Frame-Seq: {seq}\r\n\r\n",
        jpeg.len()
    );
    let mut part = Vec::with_capacity(head.len() + jpeg.len() + 2);
    part.extend_from_slice(head.as_bytes());
    part.extend_from_slice(jpeg);
    part.extend_from_slice(b"\r\n");
    Bytes::from(part)
}

struct Feed {
    state: AppState,
    camera_id: String,
    last_version: Option<u64>,
    last_sent: Option<Instant>,
}

async fn next_part(mut feed: Feed) -> Option<(Result<Bytes, std::io::Error>, Feed)> {
    if let Some(sent) = feed.last_sent {
        tokio::time::sleep_until(sent + feed.state.frame_interval).await;
    }
    loop {
        let fresh = feed.state.live.frame_version(&feed.camera_id) != feed.last_version;
        if fresh {
            if let Some(e) = feed.state.jpeg(&feed.camera_id).await {
                feed.last_version = Some(e.version);
                feed.last_sent = Some(Instant::now());
                return Some((Ok(multipart_part(e.seq, &e.jpeg)), feed));
            }
        }
        tokio::time::sleep(POLL).await;
    }
}

async fn video_feed(State(state): State<AppState>, Query(q): Query<FeedQuery>) -> Response {
    let ids = state.live.camera_ids();
    let camera_id = match q.camera.or_else(|| ids.first().cloned()) {
        Some(id) if state.live.has_camera(&id) => id,
        Some(id) => {
            let body = format!("unknown camera \"{id}\"; valid ids: {}\n", ids.join(", "));
            return (StatusCode::NOT_FOUND, body).into_response();
        }
        None => return (StatusCode::NOT_FOUND, "no cameras configured\n").into_response(),
    };
    let feed = Feed {
        state,
        camera_id,
        last_version: None,
        last_sent: None,
    };
    let stream = futures::stream::unfold(feed, next_part);
    Response::builder()
        .header(header::CONTENT_TYPE, format!("multipart/x-mixed-replace; boundary={BOUNDARY}"))
        .header(header::CACHE_CONTROL, "no-cache")
        .body(Body::from_stream(stream))
        .expect("static headers")
}

#[derive(Debug, Deserialize)]
pub struct AlertsQuery {
    limit: Option<usize>,
}

async fn alerts(State(state): State<AppState>, Query(q): Query<AlertsQuery>) -> Response {
    let mut body = String::new();
    for alert in state.live.recent_alerts(q.limit.unwrap_or(DEFAULT_ALERT_LIMIT)) {
        body.push_str(&serde_json::to_string(&alert).expect("alerts serialize"));
        body.push('\n');
    }
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

async fn metrics(State(state): State<AppState>) -> Json<serde_json::Value> {
    let alerts = state.alerts.counts();
    Json(json!({
        "cameras": state.live.counters(),
        "alerts": alerts,
        "metrics_written": state.metrics.written(),
        "sink_errors": state.metrics.errors() + alerts.write_errors,
        "stages": state.live.stages(),
    }))
}

async fn health(State(state): State<AppState>) -> Response {
    let halted = state.live.halted_stages();
    let status = if halted.is_empty() { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    let body = json!({
        "status": if halted.is_empty() { "ok" } else { "unhealthy" },
        "halted": halted,
        "stages": state.live.stages(),
    });
    (status, Json(body)).into_response()
}

/// An HTTP server on its own runtime, alive until [`HttpServer::shutdown`].
pub struct HttpServer {
    addr: SocketAddr,
    runtime: tokio::runtime::Runtime,
}

impl HttpServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops serving at once; open streams are cut.
    pub fn shutdown(self) {
        self.runtime.shutdown_background();
    }
}

/// HTTP and encoding threads yield the CPU to the pipeline stages.
fn lower_priority() {
    #[cfg(target_os = "linux")]
    // SAFETY: plain syscalls on the calling thread, no memory involved
    unsafe {
        let tid = libc::syscall(libc::SYS_gettid) as libc::id_t;
        libc::setpriority(libc::PRIO_PROCESS, tid, 10);
    }
}

pub fn spawn(bind: &str, state: AppState) -> std::io::Result<HttpServer> {
    let listener = std::net::TcpListener::bind(bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .thread_name("millwatch-http")
        .on_thread_start(lower_priority)
        .enable_all()
        .build()?;
    let listener = {
        let _guard = runtime.enter();
        tokio::net::TcpListener::from_std(listener)?
    };
    runtime.spawn(async move {
        if let Err(e) = axum::serve(listener, router(state)).await {
            log::error!("http server stopped: {e}");
        }
    });
    Ok(HttpServer { addr, runtime })
}
