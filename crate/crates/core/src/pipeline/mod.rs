//! Stage orchestration: bounded queues between acquisition, detection,
//! analytics and storage, clip segmentation and per-frame latency accounting.

pub mod clip;
pub mod processor;
pub mod queue;
pub mod report;
mod run;

pub use clip::{clip_boundary, clip_path, ClipConfig, ClipSegmenter, ClipStats, DEFAULT_CLIP_LEN_S};
pub use processor::{build_analytics, CameraCalibration, FrameProcessor, Sinks, Tally};
pub use queue::{
    BoundedQueue, Closed, EnqueueOutcome, QueueCounters, QueuePolicy, Sequenced, DEFAULT_QUEUE_CAPACITY,
};
pub use report::{percentile, summarize, CameraReport, LatencySummary, RunReport, StageBreakdown, StageTiming};
pub use run::{run_cameras, run_pipeline, CameraPipeline, ClockMode, PipelineConfig, QueueSpec};
