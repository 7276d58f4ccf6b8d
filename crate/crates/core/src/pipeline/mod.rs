//! Pipeline orchestration: one declarative TOML config drives the staged
//! run from textbook ingestion through training-file export.

mod config;
mod stages;

pub use config::{
    validate_config, ConfigWarning, ExportSection, GenSection, JudgeSection, ModelEndpoint,
    PipelineConfig, PipelinePaths, ValidationError,
};
pub use stages::{run_stage, PipelineError, Stage, StageReport};
