use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{secs_to_ns, TimestampNs, NANOS_PER_SEC};

pub const DEFAULT_CLIP_LEN_S: f64 = 120.0;
const DAY_NS: u64 = 86_400 * NANOS_PER_SEC;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub root: PathBuf,
    pub clip_len_s: f64,
}

/// Start of the clip interval holding `ts`: the largest multiple of
/// `clip_len_ns` since midnight UTC that is `<= ts`.
pub fn clip_boundary(ts: TimestampNs, clip_len_ns: u64) -> TimestampNs {
    let day_start = ts - ts % DAY_NS;
    day_start + (ts - day_start) / clip_len_ns * clip_len_ns
}

fn utc(ts: TimestampNs) -> DateTime<chrono::Utc> {
    DateTime::from_timestamp((ts / NANOS_PER_SEC) as i64, (ts % NANOS_PER_SEC) as u32)
        .expect("u64 nanoseconds are in chrono's range")
}

/// `<root>/<YYYY-MM-DD>/<HH>/<profile>mm/<camera>_clip_<HHMMSS>.ndjson`,
/// named after the clip's boundary.
pub fn clip_path(root: &Path, ts: TimestampNs, profile_mm: u32, camera_id: &str, clip_len_s: f64) -> PathBuf {
    let boundary = utc(clip_boundary(ts, secs_to_ns(clip_len_s).max(1)));
    root.join(boundary.format("%Y-%m-%d").to_string())
        .join(boundary.format("%H").to_string())
        .join(format!("{profile_mm}mm"))
        .join(format!("{camera_id}_clip_{}.ndjson", boundary.format("%H%M%S")))
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipStats {
    pub files: Vec<PathBuf>,
    pub records: u64,
    pub errors: u64,
}

/// Appends NDJSON records to the clip covering each record's timestamp.
///
/// A clip file left by an earlier run is never appended to; the new run
/// starts `<name>-1.ndjson`, `<name>-2.ndjson`, and so on.
pub struct ClipSegmenter {
    config: ClipConfig,
    clip_len_ns: u64,
    camera_id: String,
    profile_mm: u32,
    current: Option<(TimestampNs, BufWriter<File>)>,
    opened: HashSet<PathBuf>,
    stats: ClipStats,
}

impl ClipSegmenter {
    pub fn new(config: ClipConfig, camera_id: &str, profile_mm: u32) -> Result<Self> {
        if !(config.clip_len_s > 0.0 && config.clip_len_s.is_finite()) {
            return Err(Error::Invalid(format!(
                "clip_len_s must be > 0, got {}",
                config.clip_len_s
            )));
        }
        Ok(ClipSegmenter {
            clip_len_ns: secs_to_ns(config.clip_len_s).max(1),
            config,
            camera_id: camera_id.to_string(),
            profile_mm,
            current: None,
            opened: HashSet::new(),
            stats: ClipStats::default(),
        })
    }

    fn open(&mut self, ts: TimestampNs) -> Result<BufWriter<File>> {
        let base = clip_path(&self.config.root, ts, self.profile_mm, &self.camera_id, self.config.clip_len_s);
        let dir = base.parent().expect("clip path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let stem = base.file_stem().expect("clip file has a stem").to_string_lossy().into_owned();
        let mut path = base.clone();
        let mut n = 0;
        loop {
            let fresh = !self.opened.contains(&path);
            let mut opts = OpenOptions::new();
            if fresh {
                opts.write(true).create_new(true);
            } else {
                opts.append(true);
            }
            match opts.open(&path) {
                Ok(file) => {
                    if fresh {
                        self.opened.insert(path.clone());
                        self.stats.files.push(path);
                    }
                    return Ok(BufWriter::new(file));
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    n += 1;
                    path = dir.join(format!("{stem}-{n}.ndjson"));
                }
                Err(e) => return Err(Error::io(format!("opening clip {}", path.display()), e)),
            }
        }
    }

    /// Appends one record. Rollover flushes the previous clip first, so a
    /// line is never split across files.
    pub fn record(&mut self, ts: TimestampNs, line: &str) -> Result<()> {
        let result = self.try_record(ts, line);
        match &result {
            Ok(()) => self.stats.records += 1,
            Err(_) => self.stats.errors += 1,
        }
        result
    }

    fn try_record(&mut self, ts: TimestampNs, line: &str) -> Result<()> {
        let boundary = clip_boundary(ts, self.clip_len_ns);
        if self.current.as_ref().is_none_or(|(b, _)| *b != boundary) {
            if let Some((_, mut old)) = self.current.take() {
                old.flush().map_err(|e| Error::io("flushing clip", e))?;
            }
            let w = self.open(ts)?;
            self.current = Some((boundary, w));
        }
        let (_, w) = self.current.as_mut().expect("clip open");
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        w.write_all(&buf).map_err(|e| Error::io("writing clip", e))
    }

    pub fn finish(&mut self) -> Result<()> {
        if let Some((_, mut w)) = self.current.take() {
            w.flush().map_err(|e| {
                self.stats.errors += 1;
                Error::io("flushing clip", e)
            })?;
        }
        Ok(())
    }

    pub fn stats(&self) -> &ClipStats {
        &self.stats
    }
}

impl Drop for ClipSegmenter {
    fn drop(&mut self) {
        let _ = self.finish();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{NaiveDate, TimeZone, Utc};

    fn ts(h: u32, m: u32, s: u32) -> TimestampNs {
        let dt = Utc.from_utc_datetime(
            &NaiveDate::from_ymd_opt(2024, 3, 15)
                .unwrap()
                .and_hms_opt(h, m, s)
                .unwrap(),
        );
        dt.timestamp() as u64 * NANOS_PER_SEC
    }

    #[test]
    fn path_examples() {
        let root = Path::new("");
        assert_eq!(
            clip_path(root, ts(10, 31, 12), 12, "cam1", 120.0),
            PathBuf::from("2024-03-15/10/12mm/cam1_clip_103000.ndjson")
        );
        assert!(clip_path(root, ts(10, 32, 0), 12, "cam1", 120.0).ends_with("cam1_clip_103200.ndjson"));
        assert!(clip_path(root, ts(0, 0, 59), 16, "c", 120.0).ends_with("00/16mm/c_clip_000000.ndjson"));
    }

    #[test]
    fn boundary_is_closed_left() {
        let len = 120 * NANOS_PER_SEC;
        assert_eq!(clip_boundary(ts(10, 32, 0), len), ts(10, 32, 0));
        assert_eq!(clip_boundary(ts(10, 32, 0) - 1, len), ts(10, 30, 0));
    }

    #[test]
    fn rollover_splits_at_boundary() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ClipConfig {
            root: dir.path().into(),
            clip_len_s: 120.0,
        };
        let mut seg = ClipSegmenter::new(cfg, "cam1", 12).unwrap();
        for (t, l) in [(ts(10, 29, 59), "a"), (ts(10, 30, 0), "b"), (ts(10, 30, 1), "c")] {
            seg.record(t, l).unwrap();
        }
        seg.finish().unwrap();
        let files = seg.stats().files.clone();
        assert_eq!(files.len(), 2);
        assert_eq!(fs::read_to_string(&files[0]).unwrap(), "a\n");
        assert_eq!(fs::read_to_string(&files[1]).unwrap(), "b\nc\n");
    }

    #[test]
    fn restart_opens_new_clip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ClipConfig {
            root: dir.path().into(),
            clip_len_s: 120.0,
        };
        for run in 0..2 {
            let mut seg = ClipSegmenter::new(cfg.clone(), "cam1", 12).unwrap();
            seg.record(ts(10, 31, 0), &format!("run{run}")).unwrap();
            seg.finish().unwrap();
            let name = seg.stats().files[0].file_name().unwrap().to_string_lossy().into_owned();
            let expected = if run == 0 { "cam1_clip_103000.ndjson" } else { "cam1_clip_103000-1.ndjson" };
            assert_eq!(name, expected);
        }
    }

    #[test]
    fn unwritable_root_counts_errors() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let cfg = ClipConfig {
            root: blocker,
            clip_len_s: 120.0,
        };
        let mut seg = ClipSegmenter::new(cfg, "cam1", 12).unwrap();
        assert!(seg.record(ts(1, 0, 0), "a").is_err());
        assert_eq!(seg.stats().errors, 1);
    }
}
