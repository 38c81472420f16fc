//! Line-oriented time-series sink.
//!
//! Grammar, one point per line:
//! `<measurement>[,<tag>=<value>...] <field>=<real>[,<field>=<real>...] <ts_ns>`
//! Tags and fields are sorted by key, reals carry at most 9 significant
//! digits, and `,`, ` `, `=` and `\` inside tag values and field keys are
//! backslash-escaped.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::report::percentile;
use crate::types::MetricPoint;

pub const MIN_OVERHEAD_SAMPLES: usize = 100;

/// Rounds to 9 significant digits and prints the shortest exact form.
pub fn format_real(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        return "0".to_string();
    }
    format!("{rounded}")
}

fn escape(s: &str, out: &mut String) {
    for c in s.chars() {
        if matches!(c, ',' | ' ' | '=' | '\\') {
            out.push('\\');
        }
        out.push(c);
    }
}

pub fn render_line(p: &MetricPoint) -> String {
    let mut line = String::with_capacity(96);
    line.push_str(p.measurement());
    for (k, v) in p.tags() {
        line.push(',');
        line.push_str(k);
        line.push('=');
        escape(v, &mut line);
    }
    line.push(' ');
    for (i, (k, v)) in p.fields().iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        escape(k, &mut line);
        line.push('=');
        line.push_str(&format_real(*v));
    }
    line.push(' ');
    line.push_str(&p.ts().to_string());
    line
}

/// Splits on `sep` where not preceded by a backslash escape; keeps escapes.
fn split_unescaped(s: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut start = 0;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == sep {
            parts.push(&s[start..i]);
            start = i + c.len_utf8();
        }
    }
    parts.push(&s[start..]);
    parts
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(n) = chars.next() {
                out.push(n);
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn split_pair(item: &str) -> Result<(String, String)> {
    let parts = split_unescaped(item, '=');
    if parts.len() != 2 {
        return Err(Error::LineFormat(format!("expected key=value, got {item:?}")));
    }
    Ok((unescape(parts[0]), unescape(parts[1])))
}

pub fn parse_line(line: &str) -> Result<MetricPoint> {
    let sections = split_unescaped(line.trim_end_matches(['\n', '\r']), ' ');
    let [head, fields, ts] = sections.as_slice() else {
        return Err(Error::LineFormat(format!(
            "expected 3 space-separated sections, got {}",
            sections.len()
        )));
    };
    let mut head = split_unescaped(head, ',').into_iter();
    let measurement = head.next().unwrap_or_default().to_string();
    let mut tags = BTreeMap::new();
    for item in head {
        let (k, v) = split_pair(item)?;
        tags.insert(k, v);
    }
    let mut field_map = BTreeMap::new();
    for item in split_unescaped(fields, ',') {
        let (k, v) = split_pair(item)?;
        let value: f64 = v
            .parse()
            .map_err(|_| Error::LineFormat(format!("field {k} has non-numeric value {v:?}")))?;
        field_map.insert(k, value);
    }
    let ts: u64 = ts
        .parse()
        .map_err(|_| Error::LineFormat(format!("bad timestamp {ts:?}")))?;
    MetricPoint::new(measurement, tags, field_map, ts)
}

/// Cloneable in-memory byte sink.
#[derive(Debug, Clone, Default)]
pub struct SharedBuffer(Arc<Mutex<Vec<u8>>>);

impl SharedBuffer {
    pub fn contents(&self) -> Vec<u8> {
        self.0.lock().clone()
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.0.lock()).into_owned()
    }
}

impl Write for SharedBuffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkOverhead {
    pub writes: usize,
    pub mean_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

/// Append-only metrics sink. Appends from any number of pipelines are
/// serialized by an internal lock; each call's latency is recorded.
pub struct MetricSink {
    inner: Mutex<SinkInner>,
}

struct SinkInner {
    out: Box<dyn Write + Send>,
    latencies_ns: Vec<u64>,
    written: u64,
    errors: u64,
}

impl MetricSink {
    pub fn new(out: Box<dyn Write + Send>) -> Self {
        MetricSink {
            inner: Mutex::new(SinkInner {
                out,
                latencies_ns: Vec::new(),
                written: 0,
                errors: 0,
            }),
        }
    }

    pub fn file(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        let file = File::create(path)
            .map_err(|e| Error::io(format!("creating metrics sink {}", path.display()), e))?;
        Ok(MetricSink::new(Box::new(BufWriter::new(file))))
    }

    pub fn memory() -> (Self, SharedBuffer) {
        let buf = SharedBuffer::default();
        (MetricSink::new(Box::new(buf.clone())), buf)
    }

    pub fn discard() -> Self {
        MetricSink::new(Box::new(std::io::sink()))
    }

    /// Appends one line. I/O failures are counted, never returned.
    pub fn write_point(&self, point: &MetricPoint) {
        let started = Instant::now();
        let mut line = render_line(point);
        line.push('\n');
        let mut inner = self.inner.lock();
        match inner.out.write_all(line.as_bytes()) {
            Ok(()) => inner.written += 1,
            Err(e) => {
                inner.errors += 1;
                log::warn!("metric sink write failed: {e}");
            }
        }
        inner.latencies_ns.push(started.elapsed().as_nanos() as u64);
    }

    pub fn flush(&self) -> Result<()> {
        self.inner
            .lock()
            .out
            .flush()
            .map_err(|e| Error::io("flushing metrics sink", e))
    }

    pub fn written(&self) -> u64 {
        self.inner.lock().written
    }

    pub fn errors(&self) -> u64 {
        self.inner.lock().errors
    }

    /// Per-write latency statistics; needs at least 100 recorded writes.
    pub fn sink_overhead(&self) -> Result<SinkOverhead> {
        let mut ms: Vec<f64> = self
            .inner
            .lock()
            .latencies_ns
            .iter()
            .map(|&ns| ns as f64 / 1e6)
            .collect();
        if ms.len() < MIN_OVERHEAD_SAMPLES {
            return Err(Error::InsufficientSamples {
                needed: MIN_OVERHEAD_SAMPLES,
                have: ms.len(),
            });
        }
        ms.sort_by(f64::total_cmp);
        Ok(SinkOverhead {
            writes: ms.len(),
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p99_ms: percentile(&ms, 99.0),
            max_ms: *ms.last().expect("non-empty"),
        })
    }
}
