//! End-to-end orchestration, manifests and reports.

mod manifest;
mod report;
mod run;

use thiserror::Error;

use crate::diag::Stage;

pub use manifest::{BindingSpec, ContractSource, ContractSpec, Manifest};
pub use report::{
    check_path_string, render_report, Counters, Finding, FindingSeverity, Format, RenderError, Report, Timing,
};
pub use run::{run_pipeline, Config, ExitPolicy, GraphKind, SemanticsMode};

/// Fatal input problems. All map to exit code 2.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{stage}: {message}")]
    Stage { stage: Stage, message: String },
}
