//! TOML pipeline configuration.
//!
//! Relative paths are resolved against the directory holding the config file.
//!
//! ```toml
//! sample_interval_secs = 20
//! gallery_path = "gallery.json"
//! detector = "fixture"            # or "hog" (needs detector_model)
//! fixture_faces = "faces.txt"
//! landmark_provider = "fixture"   # or "none"
//! fixture_landmarks = "landmarks.txt"
//! embedding_provider = "mock"
//! source_dir = "frames"
//! webhook_url = "http://127.0.0.1:9000/alerts"
//!
//! [tracker]
//! shift_limit_secs = 28800
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::TimeDelta;
use serde::Deserialize;
use thiserror::Error;

use crate::detect::{ScanConfig, DEFAULT_NMS_IOU};
use crate::gallery::{MatchPolicy, DEFAULT_MATCH_THRESHOLD};
use crate::report::DEFAULT_CADENCE_HOURS;
use crate::tracker::TrackerConfig;

use super::dispatch::DispatchConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{what} not found: {path}")]
    MissingPath { what: &'static str, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DetectorKind {
    Hog { model: PathBuf, scan: ScanConfig },
    Fixture { faces: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LandmarkKind {
    Fixture {
        landmarks: PathBuf,
    },
    /// Faces are aligned from their boxes alone.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbedderKind {
    Mock { seed: u64 },
    Model { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub sample_interval: TimeDelta,
    /// Informational only; sampling uses frame timestamps.
    pub source_fps: f64,
    pub gallery_path: PathBuf,
    pub detector: DetectorKind,
    pub landmarks: LandmarkKind,
    /// Custom 68-point template; the bundled one when absent.
    pub landmark_template: Option<PathBuf>,
    pub embedder: EmbedderKind,
    pub match_policy: MatchPolicy,
    pub nms_iou: f64,
    pub tracker: TrackerConfig,
    pub webhook_url: Option<String>,
    pub dispatch: DispatchConfig,
    pub report_cadence_hours: u32,
    pub source_dir: Option<PathBuf>,
    pub source_manifest: Option<PathBuf>,
    pub observation_log: PathBuf,
    pub alert_log: PathBuf,
    pub dead_letter: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "default_interval")]
    sample_interval_secs: f64,
    #[serde(default = "default_fps")]
    source_fps: f64,
    gallery_path: PathBuf,
    #[serde(default = "default_detector")]
    detector: String,
    detector_model: Option<PathBuf>,
    fixture_faces: Option<PathBuf>,
    #[serde(default = "default_pyramid_scale")]
    pyramid_scale: f64,
    #[serde(default = "default_stride")]
    stride: usize,
    #[serde(default = "default_landmarks")]
    landmark_provider: String,
    fixture_landmarks: Option<PathBuf>,
    landmark_template: Option<PathBuf>,
    #[serde(default = "default_embedder")]
    embedding_provider: String,
    #[serde(default)]
    mock_seed: u64,
    #[serde(default = "default_threshold")]
    match_threshold: f64,
    #[serde(default = "default_nms")]
    nms_iou: f64,
    #[serde(default = "default_cadence")]
    report_cadence_hours: u32,
    webhook_url: Option<String>,
    source_dir: Option<PathBuf>,
    source_manifest: Option<PathBuf>,
    #[serde(default = "default_observation_log")]
    observation_log: PathBuf,
    #[serde(default = "default_alert_log")]
    alert_log: PathBuf,
    #[serde(default = "default_dead_letter")]
    dead_letter: PathBuf,
    #[serde(default)]
    tracker: RawTracker,
    #[serde(default)]
    dispatch: RawDispatch,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawTracker {
    shift_limit_secs: i64,
    gap_tolerance_secs: i64,
    trespass_throttle_secs: i64,
}

impl Default for RawTracker {
    fn default() -> Self {
        let d = TrackerConfig::default();
        Self {
            shift_limit_secs: d.shift_limit.num_seconds(),
            gap_tolerance_secs: d.gap_tolerance.num_seconds(),
            trespass_throttle_secs: d.trespass_throttle.num_seconds(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawDispatch {
    max_attempts: u32,
    initial_backoff_ms: u64,
    timeout_ms: u64,
}

impl Default for RawDispatch {
    fn default() -> Self {
        let d = DispatchConfig::default();
        Self {
            max_attempts: d.max_attempts,
            initial_backoff_ms: d.initial_backoff.as_millis() as u64,
            timeout_ms: d.timeout.as_millis() as u64,
        }
    }
}

fn default_interval() -> f64 {
    20.0
}
fn default_fps() -> f64 {
    30.0
}
fn default_detector() -> String {
    "hog".into()
}
fn default_pyramid_scale() -> f64 {
    ScanConfig::default().pyramid_scale
}
fn default_stride() -> usize {
    ScanConfig::default().stride
}
fn default_landmarks() -> String {
    "none".into()
}
fn default_embedder() -> String {
    "mock".into()
}
fn default_threshold() -> f64 {
    DEFAULT_MATCH_THRESHOLD
}
fn default_nms() -> f64 {
    DEFAULT_NMS_IOU
}
fn default_cadence() -> u32 {
    DEFAULT_CADENCE_HOURS
}
fn default_observation_log() -> PathBuf {
    "observations.jsonl".into()
}
fn default_alert_log() -> PathBuf {
    "alerts.jsonl".into()
}
fn default_dead_letter() -> PathBuf {
    "dead_letter.jsonl".into()
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses and validates; relative paths are joined onto `base`. Does not
    /// touch the filesystem.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        if !(raw.sample_interval_secs > 0.0 && raw.sample_interval_secs.is_finite()) {
            return Err(invalid("sample_interval_secs must be positive"));
        }
        if !(raw.source_fps > 0.0 && raw.source_fps.is_finite()) {
            return Err(invalid("source_fps must be positive"));
        }
        let sample_interval = TimeDelta::nanoseconds((raw.sample_interval_secs * 1e9).round() as i64);

        let detector = match raw.detector.as_str() {
            "hog" => DetectorKind::Hog {
                model: resolve(
                    raw.detector_model
                        .ok_or_else(|| invalid("detector = \"hog\" needs detector_model"))?,
                ),
                scan: ScanConfig {
                    pyramid_scale: raw.pyramid_scale,
                    stride: raw.stride,
                },
            },
            "fixture" => DetectorKind::Fixture {
                faces: resolve(
                    raw.fixture_faces
                        .ok_or_else(|| invalid("detector = \"fixture\" needs fixture_faces"))?,
                ),
            },
            other => return Err(invalid(format!("unknown detector {other:?}"))),
        };
        if let DetectorKind::Hog { scan, .. } = &detector {
            if scan.pyramid_scale.is_nan() || scan.pyramid_scale <= 1.0 || scan.stride == 0 {
                return Err(invalid("pyramid_scale must be > 1 and stride positive"));
            }
        }

        let landmarks = match raw.landmark_provider.as_str() {
            "fixture" => LandmarkKind::Fixture {
                landmarks: resolve(
                    raw.fixture_landmarks
                        .ok_or_else(|| invalid("landmark_provider = \"fixture\" needs fixture_landmarks"))?,
                ),
            },
            "none" => LandmarkKind::None,
            other => return Err(invalid(format!("unknown landmark_provider {other:?}"))),
        };

        let embedder = match raw.embedding_provider.as_str() {
            "mock" => EmbedderKind::Mock { seed: raw.mock_seed },
            other => match other.strip_prefix("model:") {
                Some(p) if !p.is_empty() => EmbedderKind::Model {
                    path: resolve(PathBuf::from(p)),
                },
                _ => return Err(invalid(format!("unknown embedding_provider {other:?}"))),
            },
        };

        let match_policy = MatchPolicy::new(raw.match_threshold).map_err(|e| invalid(e.to_string()))?;
        if !(raw.nms_iou > 0.0 && raw.nms_iou <= 1.0) {
            return Err(invalid("nms_iou must be in (0, 1]"));
        }
        if raw.report_cadence_hours == 0 || 24 % raw.report_cadence_hours != 0 {
            return Err(invalid("report_cadence_hours must divide 24"));
        }

        let tracker = TrackerConfig {
            shift_limit: TimeDelta::seconds(raw.tracker.shift_limit_secs),
            gap_tolerance: TimeDelta::seconds(raw.tracker.gap_tolerance_secs),
            trespass_throttle: TimeDelta::seconds(raw.tracker.trespass_throttle_secs),
        };
        tracker.validate().map_err(|e| invalid(e.to_string()))?;

        if raw.dispatch.max_attempts == 0 {
            return Err(invalid("dispatch.max_attempts must be at least 1"));
        }
        let dispatch = DispatchConfig {
            max_attempts: raw.dispatch.max_attempts,
            initial_backoff: Duration::from_millis(raw.dispatch.initial_backoff_ms),
            timeout: Duration::from_millis(raw.dispatch.timeout_ms.max(1)),
        };
        let webhook_url = raw.webhook_url.filter(|u| !u.trim().is_empty());
        if let Some(url) = &webhook_url {
            if !(url.starts_with("http://") || url.starts_with("https://")) {
                return Err(invalid(format!("webhook_url must be http(s): {url:?}")));
            }
        }
        if raw.source_dir.is_some() && raw.source_manifest.is_some() {
            return Err(invalid("set at most one of source_dir and source_manifest"));
        }

        Ok(Self {
            sample_interval,
            source_fps: raw.source_fps,
            gallery_path: resolve(raw.gallery_path),
            detector,
            landmarks,
            landmark_template: raw.landmark_template.map(resolve),
            embedder,
            match_policy,
            nms_iou: raw.nms_iou,
            tracker,
            webhook_url,
            dispatch,
            report_cadence_hours: raw.report_cadence_hours,
            source_dir: raw.source_dir.map(resolve),
            source_manifest: raw.source_manifest.map(resolve),
            observation_log: resolve(raw.observation_log),
            alert_log: resolve(raw.alert_log),
            dead_letter: resolve(raw.dead_letter),
        })
    }

    /// Checks that every input file the config names exists.
    pub fn check_paths(&self) -> Result<(), ConfigError> {
        let need = |what: &'static str, path: &Path| {
            if path.exists() {
                Ok(())
            } else {
                Err(ConfigError::MissingPath {
                    what,
                    path: path.to_path_buf(),
                })
            }
        };
        need("gallery", &self.gallery_path)?;
        match &self.detector {
            DetectorKind::Hog { model, .. } => need("detector model", model)?,
            DetectorKind::Fixture { faces } => need("fixture faces", faces)?,
        }
        if let LandmarkKind::Fixture { landmarks } = &self.landmarks {
            need("fixture landmarks", landmarks)?;
        }
        if let Some(t) = &self.landmark_template {
            need("landmark template", t)?;
        }
        if let EmbedderKind::Model { path } = &self.embedder {
            need("embedding model", path)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "gallery_path = \"g.json\"\ndetector = \"fixture\"\nfixture_faces = \"f.txt\"\n";

    #[test]
    fn defaults_and_resolution() {
        let cfg = PipelineConfig::parse(MINIMAL, Path::new("/srv/cab")).unwrap();
        assert_eq!(cfg.sample_interval, TimeDelta::seconds(20));
        assert_eq!(cfg.source_fps, 30.0);
        assert_eq!(cfg.gallery_path, PathBuf::from("/srv/cab/g.json"));
        assert_eq!(
            cfg.detector,
            DetectorKind::Fixture {
                faces: "/srv/cab/f.txt".into()
            }
        );
        assert_eq!(cfg.landmarks, LandmarkKind::None);
        assert_eq!(cfg.embedder, EmbedderKind::Mock { seed: 0 });
        assert_eq!(cfg.match_policy.threshold(), 0.9);
        assert_eq!(cfg.tracker, TrackerConfig::default());
        assert_eq!(cfg.report_cadence_hours, 4);
        assert_eq!(cfg.webhook_url, None);
        assert_eq!(cfg.dispatch, DispatchConfig::default());
        assert_eq!(cfg.observation_log, PathBuf::from("/srv/cab/observations.jsonl"));
    }

    #[test]
    fn sections_and_model_provider() {
        let text = format!(
            "{MINIMAL}embedding_provider = \"model:/opt/net.onnx\"\nsample_interval_secs = 0.5\n\
             [tracker]\nshift_limit_secs = 3600\ngap_tolerance_secs = 60\ntrespass_throttle_secs = 10\n\
             [dispatch]\nmax_attempts = 5\ninitial_backoff_ms = 1\ntimeout_ms = 50\n"
        );
        let cfg = PipelineConfig::parse(&text, Path::new(".")).unwrap();
        assert_eq!(cfg.sample_interval, TimeDelta::milliseconds(500));
        assert_eq!(cfg.tracker.shift_limit, TimeDelta::hours(1));
        assert_eq!(cfg.dispatch.max_attempts, 5);
        assert_eq!(
            cfg.embedder,
            EmbedderKind::Model {
                path: "/opt/net.onnx".into()
            }
        );
    }

    #[test]
    fn rejects_invalid() {
        let bad = [
            format!("{MINIMAL}sample_interval_secs = 0"),
            format!("{MINIMAL}sample_interval_secs = -3"),
            format!("{MINIMAL}match_threshold = 2.5"),
            format!("{MINIMAL}report_cadence_hours = 5"),
            format!("{MINIMAL}embedding_provider = \"magic\""),
            format!("{MINIMAL}webhook_url = \"ftp://x\""),
            format!("{MINIMAL}unknown_key = 1"),
            format!("{MINIMAL}[tracker]\ngap_tolerance_secs = 999999"),
            "gallery_path = \"g\"\ndetector = \"hog\"".to_string(),
            "detector = \"fixture\"\nfixture_faces = \"f\"".to_string(),
        ];
        for text in bad {
            assert!(PipelineConfig::parse(&text, Path::new(".")).is_err(), "{text}");
        }
    }

    #[test]
    fn missing_paths_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::parse(MINIMAL, dir.path()).unwrap();
        assert!(matches!(
            cfg.check_paths(),
            Err(ConfigError::MissingPath { what: "gallery", .. })
        ));
        std::fs::write(dir.path().join("g.json"), "").unwrap();
        assert!(matches!(
            cfg.check_paths(),
            Err(ConfigError::MissingPath {
                what: "fixture faces",
                ..
            })
        ));
        std::fs::write(dir.path().join("f.txt"), "").unwrap();
        cfg.check_paths().unwrap();
    }
}
