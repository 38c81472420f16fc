use std::path::PathBuf;

use thiserror::Error;

use crate::types::PixelFormat;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate bbox ({x_min}, {y_min}, {x_max}, {y_max})")]
    DegenerateBbox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },

    #[error("empty frame ({width}x{height})")]
    EmptyFrame { width: u32, height: u32 },

    #[error("pixel format {format:?}: expected {expected} bytes for {width}x{height}, got {actual}")]
    FormatMismatch {
        format: PixelFormat,
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },

    #[error("demosaic needs a BayerRG8 frame with even dimensions, got {format:?} {width}x{height}")]
    Demosaic {
        format: PixelFormat,
        width: u32,
        height: u32,
    },

    #[error("unsupported rod profile {0} mm")]
    UnsupportedProfile(u32),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("{path}: line {line}: {message}")]
    Replay {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: line {line}: sequence regression for camera {camera_id}: {seq} after {previous}")]
    SeqRegression {
        path: PathBuf,
        line: usize,
        camera_id: String,
        previous: u64,
        seq: u64,
    },

    #[error("ground truth is for frame {truth} but frame is {frame}")]
    SeqMismatch { frame: u64, truth: u64 },

    #[error("expected a {expected} detection, got {actual}")]
    WrongClass {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("insufficient samples: need at least {needed}, have {have}")]
    InsufficientSamples { needed: usize, have: usize },

    #[error("malformed line protocol record: {0}")]
    LineFormat(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("pipeline stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
