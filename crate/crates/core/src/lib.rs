//! Automatic construction of model-specific hallucination datasets from
//! fact-checking corpora, and sampling-based self-contradiction detection.

pub mod backend;
pub mod detect;
pub mod evalreport;
pub mod exec;
pub mod grammar;
pub mod ingest;
pub mod pipeline;
pub mod prompts;
pub mod records;
pub mod types;

pub use backend::{BackendConfig, BackendError, ChatBackend, ChatRequest, Purpose};
pub use detect::{DetectConfig, DetectError, Detector, Method};
pub use evalreport::EvalError;
pub use ingest::IngestError;
pub use pipeline::{AutoHallConfig, PipelineError, RefusalFilter};
pub use prompts::{PromptError, PromptRegistry};
pub use records::RecordError;
pub use types::*;

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Records(#[from] RecordError),
}
