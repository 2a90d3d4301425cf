//! Operator-shift monitoring for locomotive cab cameras.
//!
//! Sampled frames flow through face detection, landmark alignment,
//! embedding and gallery matching; the resulting sightings drive per-operator
//! shift sessions, overtime and trespass alerts, and a daily shift report.

pub mod align;
pub mod detect;
pub mod embed;
pub mod gallery;
pub mod imaging;
pub mod report;
#[cfg(feature = "service")]
pub mod service;
pub mod timefmt;
pub mod tracker;

pub use align::{AlignedFace, LandmarkProvider, LandmarkTemplate, SimilarityTransform};
pub use detect::{FaceDetector, HogParams, LinearDetectorModel};
pub use embed::{Embedding, EmbeddingProvider, MockEmbedder, EMBEDDING_DIM};
pub use gallery::{Gallery, MatchPolicy, MatchResult};
pub use imaging::{BoundingBox, GrayImage, LandmarkSet, Point};
pub use report::{DailyReport, ReportFormat};
pub use tracker::{AlertEvent, Observation, ShiftSession, Tracker, TrackerConfig};
