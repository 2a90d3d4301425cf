//! Per-frame perception and the monitoring run loop.
//!
//! Frames are sampled, then processed in batches: decoding, detection,
//! alignment and embedding run in parallel across the frames of a batch, and
//! results are consumed in source order so tracker ingestion stays serial and
//! timestamp-ordered.

use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::align::{align_box, align_face, AlignError, FixtureLandmarks, LandmarkProvider, LandmarkTemplate};
use crate::detect::{
    non_max_suppression, DetectError, FaceDetector, FixtureDetector, HogFaceDetector, LinearDetectorModel,
};
use crate::embed::{EmbedError, Embedding, EmbeddingProvider, MockEmbedder};
use crate::gallery::Gallery;
use crate::imaging::{BoundingBox, GrayImage};
use crate::tracker::{AlertEvent, Observation, ObservationLogWriter, ShiftSession, Tracker};

use super::config::{ConfigError, DetectorKind, EmbedderKind, LandmarkKind, PipelineConfig};
use super::dispatch::{AsyncDispatcher, DispatchSummary, Dispatcher};
use super::source::{directory_source, manifest_source, sample_frames, SourceError, SourceFrame};
use super::ServiceError;

/// Sampled frames processed together before their results are ingested.
const BATCH_FRAMES: usize = 64;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Decode(#[from] SourceError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Reports the whole frame as a single face. Used to enroll from cropped
/// portraits.
#[derive(Debug, Clone, Copy, Default)]
pub struct WholeFrameDetector;

impl FaceDetector for WholeFrameDetector {
    fn detect(&self, image: &GrayImage, _frame_ref: &str) -> Result<Vec<BoundingBox>, DetectError> {
        Ok(vec![BoundingBox::new(
            0.0,
            0.0,
            image.width() as f64,
            image.height() as f64,
            1.0,
        )?])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceEmbedding {
    pub face: BoundingBox,
    pub embedding: Embedding,
    pub identity_tag: Option<String>,
}

/// Detector, landmark source, template and embedder for one run.
pub struct Perception {
    pub detector: Box<dyn FaceDetector>,
    pub landmarks: Option<Box<dyn LandmarkProvider>>,
    pub template: LandmarkTemplate,
    pub embedder: Box<dyn EmbeddingProvider>,
    pub nms_iou: f64,
}

impl Perception {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self, ServiceError> {
        let detector: Box<dyn FaceDetector> = match &cfg.detector {
            DetectorKind::Hog { model, scan } => Box::new(HogFaceDetector {
                model: LinearDetectorModel::load(model)?,
                scan: *scan,
            }),
            DetectorKind::Fixture { faces } => Box::new(FixtureDetector::load(faces)?),
        };
        let landmarks: Option<Box<dyn LandmarkProvider>> = match &cfg.landmarks {
            LandmarkKind::Fixture { landmarks } => Some(Box::new(FixtureLandmarks::load(landmarks)?)),
            LandmarkKind::None => None,
        };
        let template = match &cfg.landmark_template {
            Some(p) => LandmarkTemplate::load(p)?,
            None => LandmarkTemplate::bundled(),
        };
        let embedder: Box<dyn EmbeddingProvider> = match &cfg.embedder {
            EmbedderKind::Mock { seed } => Box::new(MockEmbedder::new(*seed)),
            EmbedderKind::Model { path } => {
                return Err(ConfigError::Invalid(format!(
                    "embedding provider model:{} is not available in this build; use \"mock\" or supply an EmbeddingProvider through the library",
                    path.display()
                ))
                .into())
            }
        };
        Ok(Self {
            detector,
            landmarks,
            template,
            embedder,
            nms_iou: cfg.nms_iou,
        })
    }

    /// Whole-image faces, box alignment and the mock embedder.
    pub fn whole_frame(seed: u64) -> Self {
        Self {
            detector: Box::new(WholeFrameDetector),
            landmarks: None,
            template: LandmarkTemplate::bundled(),
            embedder: Box::new(MockEmbedder::new(seed)),
            nms_iou: crate::detect::DEFAULT_NMS_IOU,
        }
    }

    /// Detects, aligns and embeds every face in the frame, best detection
    /// first. `tag` overrides the detector's identity annotation.
    pub fn analyze(
        &self,
        img: &GrayImage,
        frame_ref: &str,
        tag: Option<&str>,
    ) -> Result<Vec<FaceEmbedding>, FrameError> {
        let faces = non_max_suppression(&self.detector.detect(img, frame_ref)?, self.nms_iou);
        let mut out = Vec::with_capacity(faces.len());
        for face in faces {
            let mut aligned = match &self.landmarks {
                Some(provider) => {
                    let lm = provider.landmarks(img, &face, frame_ref)?;
                    align_face(img, &lm, face, &self.template)?
                }
                None => align_box(img, face, self.template.crop_size(), &self.template)?,
            };
            aligned.identity_tag = match tag {
                Some(t) => Some(t.to_string()),
                None => self.detector.identity_tag(frame_ref, &face),
            };
            let embedding = self.embedder.embed(&aligned)?;
            out.push(FaceEmbedding {
                face,
                embedding,
                identity_tag: aligned.identity_tag,
            });
        }
        Ok(out)
    }

    fn analyze_frame(&self, frame: &SourceFrame) -> Result<Vec<FaceEmbedding>, FrameError> {
        let img = frame.decode()?;
        self.analyze(&img, &frame.frame_ref, None)
    }
}

/// Embeds the best face found in an enrollment image.
pub fn enroll_image(perception: &Perception, image_path: &Path, tag: Option<&str>) -> Result<Embedding, ServiceError> {
    let frame_ref = image_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let frame = SourceFrame {
        timestamp: chrono::DateTime::UNIX_EPOCH,
        frame_ref: frame_ref.clone(),
        payload: super::source::FramePayload::File(image_path.to_path_buf()),
    };
    let img = frame.decode()?;
    let faces = perception
        .analyze(&img, &frame_ref, tag)
        .map_err(|e| ServiceError::Enroll(format!("{}: {e}", image_path.display())))?;
    faces
        .into_iter()
        .next()
        .map(|f| f.embedding)
        .ok_or_else(|| ServiceError::Enroll(format!("no face found in {}", image_path.display())))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub frames_sampled: usize,
    pub frames_failed: usize,
    pub detections: usize,
    pub matches: usize,
    pub unknowns: usize,
    pub overtime_alerts: usize,
    pub trespass_alerts: usize,
    pub dispatch: DispatchSummary,
}

impl RunSummary {
    pub fn alerts(&self) -> usize {
        self.overtime_alerts + self.trespass_alerts
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub observations: Vec<Observation>,
    pub alerts: Vec<AlertEvent>,
    pub sessions: Vec<ShiftSession>,
}

/// Opens the configured source: `source_dir` overrides the config's own
/// directory or manifest.
pub fn open_source(cfg: &PipelineConfig, source_dir: Option<&Path>) -> Result<Vec<SourceFrame>, SourceError> {
    match (source_dir, &cfg.source_dir, &cfg.source_manifest) {
        (Some(dir), _, _) => directory_source(dir),
        (None, Some(dir), _) => directory_source(dir),
        (None, None, Some(manifest)) => manifest_source(manifest),
        (None, None, None) => Err(SourceError::Io {
            path: Default::default(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no frame source configured"),
        }),
    }
}

/// Loads everything the config names and runs over `source`.
pub fn run_pipeline<I>(cfg: &PipelineConfig, source: I) -> Result<RunOutcome, ServiceError>
where
    I: IntoIterator<Item = Result<SourceFrame, SourceError>>,
{
    cfg.check_paths()?;
    let gallery = Gallery::load(&cfg.gallery_path)?;
    let perception = Perception::from_config(cfg)?;
    run_with(cfg, &perception, &gallery, source)
}

fn ensure_parent(path: &Path) -> Result<(), ServiceError> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => {
            std::fs::create_dir_all(parent).map_err(|e| ServiceError::io(format!("creating {}", parent.display()), e))
        }
        None => Ok(()),
    }
}

struct Sinks {
    observations: ObservationLogWriter,
    alerts: BufWriter<std::fs::File>,
    alert_log: String,
}

impl Sinks {
    fn flush(&mut self) -> Result<(), ServiceError> {
        self.observations.flush()?;
        self.alerts
            .flush()
            .map_err(|e| ServiceError::io(self.alert_log.clone(), e))
    }
}

/// Runs with already-loaded components. Observations and alerts are
/// appended to the configured logs; alerts go to the webhook when one is set.
pub fn run_with<I>(
    cfg: &PipelineConfig,
    perception: &Perception,
    gallery: &Gallery,
    source: I,
) -> Result<RunOutcome, ServiceError>
where
    I: IntoIterator<Item = Result<SourceFrame, SourceError>>,
{
    let policy = &cfg.match_policy;
    let mut tracker = Tracker::new(cfg.tracker)?;
    for path in [&cfg.observation_log, &cfg.alert_log, &cfg.dead_letter] {
        ensure_parent(path)?;
    }
    let mut sinks = Sinks {
        observations: ObservationLogWriter::open(&cfg.observation_log)?,
        alerts: BufWriter::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&cfg.alert_log)
                .map_err(|e| ServiceError::io(format!("opening {}", cfg.alert_log.display()), e))?,
        ),
        alert_log: cfg.alert_log.display().to_string(),
    };
    let dispatcher = AsyncDispatcher::spawn(Dispatcher::new(
        cfg.webhook_url.clone(),
        cfg.dispatch,
        cfg.dead_letter.clone(),
    )?);

    let mut summary = RunSummary::default();
    let mut observations = Vec::new();
    let mut alerts = Vec::new();
    let parallel = perception.embedder.supports_concurrent_calls();

    let mut sampled = sample_frames(source, cfg.sample_interval)?;
    let mut source_error = None;
    loop {
        let mut batch = Vec::with_capacity(BATCH_FRAMES);
        while batch.len() < BATCH_FRAMES {
            match sampled.next() {
                Some(Ok(f)) => batch.push(f),
                Some(Err(e)) => {
                    source_error = Some(e);
                    break;
                }
                None => break,
            }
        }
        if batch.is_empty() {
            break;
        }
        let results: Vec<_> = if parallel {
            batch.par_iter().map(|f| perception.analyze_frame(f)).collect()
        } else {
            batch.iter().map(|f| perception.analyze_frame(f)).collect()
        };

        for (frame, result) in batch.iter().zip(results) {
            summary.frames_sampled += 1;
            tracker.close_stale(frame.timestamp);
            let faces = match result {
                Ok(faces) => faces,
                Err(e) => {
                    summary.frames_failed += 1;
                    log::warn!("skipping frame {}: {e}", frame.frame_ref);
                    continue;
                }
            };
            summary.detections += faces.len();
            for face in faces {
                let result = gallery.match_embedding(&face.embedding, policy);
                if result.is_known() {
                    summary.matches += 1;
                } else {
                    summary.unknowns += 1;
                }
                let obs = Observation {
                    timestamp: frame.timestamp,
                    frame_ref: frame.frame_ref.clone(),
                    result,
                };
                sinks.observations.append(&obs)?;
                for event in tracker.ingest(&obs)? {
                    match event {
                        AlertEvent::Overtime { .. } => summary.overtime_alerts += 1,
                        AlertEvent::Trespass { .. } => summary.trespass_alerts += 1,
                    }
                    let payload = event.to_payload();
                    let line = serde_json::to_string(&payload).expect("alert serializes");
                    writeln!(sinks.alerts, "{line}").map_err(|e| ServiceError::io(sinks.alert_log.clone(), e))?;
                    log::info!(
                        "{} alert at {}",
                        event.kind(),
                        crate::timefmt::format(&event.timestamp())
                    );
                    dispatcher.send(payload);
                    alerts.push(event);
                }
                observations.push(obs);
            }
        }
        sinks.flush()?;
        if source_error.is_some() {
            break;
        }
    }
    sinks.flush()?;
    summary.dispatch = dispatcher.finish()?;
    if let Some(e) = source_error {
        return Err(e.into());
    }
    Ok(RunOutcome {
        summary,
        observations,
        alerts,
        sessions: tracker.sessions(),
    })
}
