//! Ring-by-ring map construction around a fixed landmark.

pub mod config;
pub mod pipeline;
pub mod refine;
pub mod rings;
pub mod train;

pub use config::{DensityConfig, LearningRates, MappingMode, PipelineConfig, RefineConfig, UncertaintyConfig};
pub use pipeline::{build_frontend, run_on_log, run_pipeline, write_metrics_csv, Frontend, GateRecord, PipelineOutput, RingMetrics, LANDMARK_ID};
pub use refine::{refine_pose, RefinementResult};
pub use rings::{gate_decision, horizontal_distance, marginal_traces, ring_partition, should_reoptimize, Ring, RingMember};
pub use train::{backproject_frame, MapTrainer};
