//! Orchestration: configuration, frame sources and sampling, the per-frame
//! perception pipeline, alert dispatch, and fixture scenarios.

pub mod config;
pub mod dispatch;
pub mod pipeline;
pub mod scenario;
pub mod source;

use thiserror::Error;

use crate::align::AlignError;
use crate::detect::DetectError;
use crate::gallery::GalleryError;
use crate::tracker::TrackerError;

pub use config::{ConfigError, DetectorKind, EmbedderKind, LandmarkKind, PipelineConfig};
pub use dispatch::{AsyncDispatcher, Delivery, DispatchConfig, DispatchSummary, Dispatcher};
pub use pipeline::{enroll_image, run_pipeline, Perception, RunOutcome, RunSummary};
pub use source::{sample_frames, FramePayload, SourceError, SourceFrame};

/// Startup and run-level failures. Per-frame failures never surface here.
#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Gallery(#[from] GalleryError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error("{context}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("enrollment: {0}")]
    Enroll(String),
}

impl ServiceError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        ServiceError::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 2 for frame source failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ServiceError::Source(_) => 2,
            _ => 1,
        }
    }
}
