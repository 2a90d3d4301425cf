//! Annotation-backed face detector for fixtures and replays.
//!
//! One face per line, whitespace separated:
//!
//! ```text
//! <frame_ref> <x> <y> <width> <height> <score> <identity_tag | ->
//! ```
//!
//! `-` marks a face without a known identity. Lines starting with `#` are
//! comments.

use std::collections::HashMap;
use std::path::Path;

use crate::imaging::{BoundingBox, GrayImage};

use super::{DetectError, FaceDetector};

#[derive(Debug, Clone, PartialEq)]
struct Annotation {
    face: BoundingBox,
    tag: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct FixtureDetector {
    by_frame: HashMap<String, Vec<Annotation>>,
}

impl FixtureDetector {
    pub fn parse(text: &str) -> Result<Self, DetectError> {
        let mut out = Self::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |why: &str| DetectError::Fixture(format!("line {}: {why}", no + 1));
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let [frame, x, y, w, h, score, tag] = tokens[..] else {
                return Err(bad("expected 7 fields"));
            };
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(&format!("bad number {v:?}")));
            let face =
                BoundingBox::new(num(x)?, num(y)?, num(w)?, num(h)?, num(score)?).map_err(|e| bad(&e.to_string()))?;
            let tag = (tag != "-").then(|| tag.to_string());
            out.insert(frame, face, tag);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, DetectError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| DetectError::Fixture(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, frame_ref: &str, face: BoundingBox, tag: Option<String>) {
        self.by_frame
            .entry(frame_ref.to_string())
            .or_default()
            .push(Annotation { face, tag });
    }

    /// Serializes in the annotation format, frames sorted.
    pub fn to_text(&self) -> String {
        let mut frames: Vec<_> = self.by_frame.iter().collect();
        frames.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (frame, faces) in frames {
            for a in faces {
                let f = &a.face;
                out.push_str(&format!(
                    "{frame} {:?} {:?} {:?} {:?} {:?} {}\n",
                    f.x,
                    f.y,
                    f.width,
                    f.height,
                    f.score,
                    a.tag.as_deref().unwrap_or("-")
                ));
            }
        }
        out
    }
}

impl FaceDetector for FixtureDetector {
    fn detect(&self, image: &GrayImage, frame_ref: &str) -> Result<Vec<BoundingBox>, DetectError> {
        Ok(self
            .by_frame
            .get(frame_ref)
            .into_iter()
            .flatten()
            .filter_map(|a| a.face.clip_to(image.width(), image.height()))
            .collect())
    }

    fn identity_tag(&self, frame_ref: &str, face: &BoundingBox) -> Option<String> {
        let (cx, cy) = face.center();
        self.by_frame
            .get(frame_ref)?
            .iter()
            .filter(|a| a.face.contains(cx, cy))
            .min_by(|a, b| {
                let da = (a.face.center().0 - cx).hypot(a.face.center().1 - cy);
                let db = (b.face.center().0 - cx).hypot(b.face.center().1 - cy);
                da.total_cmp(&db)
            })
            .and_then(|a| a.tag.clone())
    }
}
