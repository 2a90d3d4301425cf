//! Synthetic cab-camera scenarios: frames, face and landmark annotations, an
//! enrolled gallery and a ready-to-run config, all written under one
//! directory.
//!
//! Each identity owns a vertical slot of the frame. While present, its face
//! is drawn (PNG sources) and annotated at a jittered position inside the
//! slot, with landmarks produced by a random similarity of the bundled
//! template. Everything is a pure function of the scenario and its seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeDelta, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::{FixtureLandmarks, LandmarkTemplate};
use crate::detect::FixtureDetector;
use crate::gallery::{Enrollment, Gallery};
use crate::imaging::{BoundingBox, GrayImage, LandmarkSet, Point};
use crate::tracker::TrackerConfig;

use super::pipeline::{enroll_image, Perception};
use super::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioSource {
    /// `frames/<epoch>_<seq>.png`.
    PngDirectory,
    /// `frames.txt` manifest of blank frames.
    BlankManifest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioIdentity {
    /// Fixture identity tag, also the operator id when enrolled.
    pub tag: String,
    pub display_name: String,
    pub enrolled: bool,
}

/// An identity is on camera for frames with `from <= t <= until`.
#[derive(Debug, Clone, PartialEq)]
pub struct Presence {
    pub tag: String,
    pub from: DateTime<Utc>,
    pub until: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub start: DateTime<Utc>,
    /// Last frame time, inclusive.
    pub end: DateTime<Utc>,
    pub frame_step: TimeDelta,
    pub identities: Vec<ScenarioIdentity>,
    pub presence: Vec<Presence>,
    pub source: ScenarioSource,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub sample_interval_secs: f64,
    pub tracker: TrackerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFiles {
    pub root: PathBuf,
    pub config: PathBuf,
    pub gallery: PathBuf,
    pub faces: PathBuf,
    pub landmarks: PathBuf,
    /// Frame directory or manifest file.
    pub frames: PathBuf,
}

impl Scenario {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>, frame_step: TimeDelta) -> Self {
        Self {
            start,
            end,
            frame_step,
            identities: Vec::new(),
            presence: Vec::new(),
            source: ScenarioSource::PngDirectory,
            width: 320,
            height: 240,
            seed: 0,
            sample_interval_secs: 20.0,
            tracker: TrackerConfig::default(),
        }
    }

    pub fn identity(mut self, tag: &str, display_name: &str, enrolled: bool) -> Self {
        self.identities.push(ScenarioIdentity {
            tag: tag.into(),
            display_name: display_name.into(),
            enrolled,
        });
        self
    }

    pub fn present(mut self, tag: &str, from: DateTime<Utc>, until: DateTime<Utc>) -> Self {
        self.presence.push(Presence {
            tag: tag.into(),
            from,
            until,
        });
        self
    }

    pub fn frame_times(&self) -> Vec<DateTime<Utc>> {
        let mut out = Vec::new();
        let mut t = self.start;
        while t <= self.end {
            out.push(t);
            t += self.frame_step;
        }
        out
    }

    /// Slot indices of the identities on camera at `t`, ascending.
    pub fn present_at(&self, t: DateTime<Utc>) -> Vec<usize> {
        (0..self.identities.len())
            .filter(|&i| {
                let tag = &self.identities[i].tag;
                self.presence
                    .iter()
                    .any(|p| &p.tag == tag && p.from <= t && t <= p.until)
            })
            .collect()
    }

    fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: &str| Err(ServiceError::Enroll(format!("scenario: {m}")));
        if self.frame_step <= TimeDelta::zero() || self.end < self.start {
            return bad("frame_step must be positive and end >= start");
        }
        if self.source == ScenarioSource::PngDirectory && self.frame_step.subsec_nanos() != 0 {
            return bad("PNG directory frames need whole-second steps");
        }
        if self.identities.is_empty() || self.width / self.identities.len() < 40 || self.height < 64 {
            return bad("frame too small for the identity slots");
        }
        for p in &self.presence {
            if !self.identities.iter().any(|i| i.tag == p.tag) {
                return bad(&format!("presence for undeclared identity {:?}", p.tag));
            }
        }
        Ok(())
    }

    fn face_side(&self) -> usize {
        (self.width / self.identities.len() - 8).min(64).min(self.height - 8)
    }
}

/// Writes the scenario under `root`; existing files are overwritten and the
/// `out/` log directory is cleared.
pub fn write_scenario(s: &Scenario, root: &Path) -> Result<ScenarioFiles, ServiceError> {
    s.validate()?;
    let io = |what: &Path, e| ServiceError::io(format!("writing {}", what.display()), e);
    let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| io(p, e));
    mkdir(root)?;
    let out_dir = root.join("out");
    if out_dir.exists() {
        std::fs::remove_dir_all(&out_dir).map_err(|e| io(&out_dir, e))?;
    }
    mkdir(&out_dir)?;

    let template = LandmarkTemplate::bundled();
    let side = s.face_side();
    let slot_w = s.width / s.identities.len();
    let mut faces = FixtureDetector::default();
    let mut landmarks = FixtureLandmarks::default();

    let frames_path = match s.source {
        ScenarioSource::PngDirectory => root.join("frames"),
        ScenarioSource::BlankManifest => root.join("frames.txt"),
    };
    if s.source == ScenarioSource::PngDirectory {
        if frames_path.exists() {
            std::fs::remove_dir_all(&frames_path).map_err(|e| io(&frames_path, e))?;
        }
        mkdir(&frames_path)?;
    }
    let mut manifest = String::new();
    let mut prev_secs = None;
    let mut seq = 0u64;

    for (idx, t) in s.frame_times().into_iter().enumerate() {
        let secs = t.timestamp();
        seq = if prev_secs == Some(secs) { seq + 1 } else { 0 };
        prev_secs = Some(secs);
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));

        let present = s.present_at(t);
        let mut boxes = Vec::with_capacity(present.len());
        for &slot in &present {
            let x = slot * slot_w + rng.random_range(0..=slot_w - side);
            let y = rng.random_range(0..=s.height - side);
            let face =
                BoundingBox::new(x as f64, y as f64, side as f64, side as f64, 1.0).expect("slot geometry is valid");
            boxes.push((slot, face));
        }

        let frame_ref = match s.source {
            ScenarioSource::PngDirectory => format!("{secs}_{seq}.png"),
            ScenarioSource::BlankManifest => format!("{secs}_{seq}"),
        };
        for &(slot, face) in &boxes {
            let tag = s.identities[slot].tag.clone();
            faces.insert(&frame_ref, face, Some(tag));
            landmarks.insert(frame_ref.clone(), random_landmarks(&template, &face, &mut rng));
        }

        match s.source {
            ScenarioSource::PngDirectory => {
                let img = render_frame(s, &boxes, &mut rng);
                let path = frames_path.join(&frame_ref);
                save_png(&img, &path)?;
            }
            ScenarioSource::BlankManifest => {
                let nanos = t.timestamp_subsec_nanos();
                let stamp = if nanos == 0 {
                    secs.to_string()
                } else {
                    format!("{secs}.{nanos:09}")
                };
                let _ = writeln!(manifest, "{stamp} {frame_ref} blank:{}x{}", s.width, s.height);
            }
        }
    }
    if s.source == ScenarioSource::BlankManifest {
        std::fs::write(&frames_path, manifest).map_err(|e| io(&frames_path, e))?;
    }

    let faces_path = root.join("faces.txt");
    std::fs::write(&faces_path, faces.to_text()).map_err(|e| io(&faces_path, e))?;
    let landmarks_path = root.join("landmarks.txt");
    std::fs::write(&landmarks_path, landmarks.to_text()).map_err(|e| io(&landmarks_path, e))?;

    let enroll_dir = root.join("enroll");
    mkdir(&enroll_dir)?;
    let perception = Perception::whole_frame(s.seed);
    let mut gallery = Gallery::new();
    for (slot, ident) in s.identities.iter().enumerate() {
        let portrait_path = enroll_dir.join(format!("{}.png", ident.tag));
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(slot as u64 + 1));
        save_png(&render_portrait(slot, &mut rng), &portrait_path)?;
        if !ident.enrolled {
            continue;
        }
        let embedding = enroll_image(&perception, &portrait_path, Some(&ident.tag))?;
        gallery.enroll(
            Enrollment {
                operator_id: ident.tag.clone(),
                display_name: ident.display_name.clone(),
                source_image_ref: format!("enroll/{}.png", ident.tag),
                enrolled_at: s.start,
            },
            embedding,
            false,
        )?;
    }
    let gallery_path = root.join("gallery.json");
    gallery.save(&gallery_path)?;

    let source_line = match s.source {
        ScenarioSource::PngDirectory => "source_dir = \"frames\"",
        ScenarioSource::BlankManifest => "source_manifest = \"frames.txt\"",
    };
    let config = format!(
        "sample_interval_secs = {:?}\n\
         gallery_path = \"gallery.json\"\n\
         detector = \"fixture\"\n\
         fixture_faces = \"faces.txt\"\n\
         landmark_provider = \"fixture\"\n\
         fixture_landmarks = \"landmarks.txt\"\n\
         embedding_provider = \"mock\"\n\
         mock_seed = {}\n\
         {source_line}\n\
         observation_log = \"out/observations.jsonl\"\n\
         alert_log = \"out/alerts.jsonl\"\n\
         dead_letter = \"out/dead_letter.jsonl\"\n\
         \n\
         [tracker]\n\
         shift_limit_secs = {}\n\
         gap_tolerance_secs = {}\n\
         trespass_throttle_secs = {}\n",
        s.sample_interval_secs,
        s.seed,
        s.tracker.shift_limit.num_seconds(),
        s.tracker.gap_tolerance.num_seconds(),
        s.tracker.trespass_throttle.num_seconds(),
    );
    let config_path = root.join("cabwatch.toml");
    std::fs::write(&config_path, config).map_err(|e| io(&config_path, e))?;

    Ok(ScenarioFiles {
        root: root.to_path_buf(),
        config: config_path,
        gallery: gallery_path,
        faces: faces_path,
        landmarks: landmarks_path,
        frames: frames_path,
    })
}

/// Template landmarks under a random similarity centered on the box.
fn random_landmarks(template: &LandmarkTemplate, face: &BoundingBox, rng: &mut ChaCha8Rng) -> LandmarkSet {
    let half = template.crop_size() as f64 / 2.0;
    let scale = face.width / template.crop_size() as f64 * rng.random_range(0.85..1.0);
    let (sin, cos) = rng.random_range(-0.15f64..0.15).sin_cos();
    let (cx, cy) = face.center();
    let points = template
        .points()
        .iter()
        .map(|p| {
            let (dx, dy) = (p.x - half, p.y - half);
            Point::new(cx + scale * (cos * dx - sin * dy), cy + scale * (sin * dx + cos * dy))
        })
        .collect();
    LandmarkSet::new(points).expect("68 finite points")
}

fn face_value(slot: usize, u: f64, v: f64) -> f64 {
    let freq = 2.0 + slot as f64;
    let r2 = (u - 0.5).powi(2) + (v - 0.5).powi(2) * 0.8;
    if r2 > 0.2 {
        return -1.0;
    }
    140.0 + 60.0 * (freq * std::f64::consts::PI * u).sin() * (freq * 1.3 * v).cos()
}

fn render_frame(s: &Scenario, boxes: &[(usize, BoundingBox)], rng: &mut ChaCha8Rng) -> GrayImage {
    let mut img = GrayImage::from_fn(s.width, s.height, |_, _| rng.random_range(30..70)).expect("non-empty frame");
    for &(slot, face) in boxes {
        let (x0, y0, side) = (face.x as usize, face.y as usize, face.width as usize);
        for y in 0..side {
            for x in 0..side {
                let v = face_value(slot, x as f64 / side as f64, y as f64 / side as f64);
                if v >= 0.0 {
                    let noisy = v + rng.random_range(-6.0..6.0);
                    img.set(x0 + x, y0 + y, noisy.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    img
}

fn render_portrait(slot: usize, rng: &mut ChaCha8Rng) -> GrayImage {
    let side = 96;
    GrayImage::from_fn(side, side, |x, y| {
        let v = face_value(slot, x as f64 / side as f64, y as f64 / side as f64);
        let v = if v < 0.0 { 50.0 } else { v };
        (v + rng.random_range(-6.0..6.0)).round().clamp(0.0, 255.0) as u8
    })
    .expect("non-empty portrait")
}

fn save_png(img: &GrayImage, path: &Path) -> Result<(), ServiceError> {
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .expect("buffer matches dimensions");
    buf.save(path)
        .map_err(|e| ServiceError::io(format!("writing {}", path.display()), std::io::Error::other(e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::service::config::PipelineConfig;
    use crate::service::pipeline::{open_source, run_pipeline};

    fn ts(h: i64, m: i64) -> DateTime<Utc> {
        DateTime::from_timestamp(1_495_000_000 + h * 3600 + m * 60, 0).unwrap()
    }

    #[test]
    fn small_scenario_runs_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let s = Scenario::new(ts(0, 0), ts(0, 10), TimeDelta::seconds(20))
            .identity("a", "Operator A", true)
            .identity("b", "Operator B", true)
            .identity("x", "Stranger", false)
            .present("a", ts(0, 0), ts(0, 10))
            .present("b", ts(0, 2), ts(0, 4))
            .present("x", ts(0, 5), ts(0, 6));
        let files = write_scenario(&s, dir.path()).unwrap();
        let cfg = PipelineConfig::load(&files.config).unwrap();
        let frames = open_source(&cfg, None).unwrap();
        assert_eq!(frames.len(), 31);
        let out = run_pipeline(&cfg, frames.into_iter().map(Ok)).unwrap();
        assert_eq!(out.summary.frames_failed, 0);
        let sightings = |tag: &str| {
            out.observations
                .iter()
                .filter(|o| o.result.operator_id() == Some(tag))
                .count()
        };
        assert_eq!(sightings("a"), 31);
        assert_eq!(sightings("b"), 7);
        assert_eq!(out.summary.unknowns, 4);
        assert_eq!(out.summary.trespass_alerts, 1);
    }

    #[test]
    fn rejects_fractional_png_steps() {
        let dir = tempfile::tempdir().unwrap();
        let s = Scenario::new(ts(0, 0), ts(0, 1), TimeDelta::milliseconds(1500)).identity("a", "A", true);
        assert!(write_scenario(&s, dir.path()).is_err());
    }
}
