//! Configuration, run manifests and the command implementations behind the
//! `dnq` binary.

mod commands;
mod config;
mod manifest;

pub use commands::{
    cmd_eval, cmd_export, cmd_quantize, cmd_search, cmd_train, dataset, dump_layout, uniform_plan, write_packed,
    EvalReport, PlanEntry, QuantizeSummary, SearchSummary, SequenceFile, TrainSummary,
};
pub use config::{ModelConfig, PathsConfig, PipelineConfig, Stage};
pub use manifest::{file_digest, RunManifest, StageRecord, TOOL_VERSION};
