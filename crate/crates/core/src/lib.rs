//! Rolling-mill anomaly detection: a scenario-scripted synthetic mill, an
//! oracle detector, rod/flapper/diverter/billet analytics, process-signal
//! gating, debounced alerting with a line-format metrics sink, and the
//! pipeline that runs them in real time.
//!
//! Batch paths (scenario sweeps, batch detection, evaluation) run on rayon
//! with the default `parallel` feature and sequentially without it.

pub mod alertstore;
pub mod analytics;
pub mod annotate;
pub mod bench;
pub mod clock;
pub mod detect;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod live;
pub mod par;
pub mod pipeline;
pub mod scenarios;
pub mod simsource;
pub mod types;

pub use error::{Error, Result};
