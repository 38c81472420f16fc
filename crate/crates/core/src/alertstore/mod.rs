//! Alerting: debounce engine, time-series sink, evaluation harness.

mod engine;
mod eval;
mod sink;

pub use engine::{AlertCounts, AlertEngine, AlertHub, DebounceRule, RaiseOutcome};
pub use eval::{
    evaluate, evaluate_many, match_alerts, presence_accuracy, EvalReport, KindReport, TruthEvent,
    DEFAULT_MATCH_WINDOW_S,
};
pub use sink::{
    format_real, parse_line, render_line, MetricSink, SharedBuffer, SinkOverhead,
    MIN_OVERHEAD_SAMPLES,
};
