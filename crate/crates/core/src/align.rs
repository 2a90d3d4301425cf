//! Canonical-template face alignment.
//!
//! Detected landmarks are mapped onto a fixed 68-point template with the
//! least-squares similarity transform (scale, rotation, translation, no
//! reflection), and the face is resampled into a square crop so that the
//! landmarks of every face land on the same pixels.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::imaging::{BoundingBox, GrayImage, ImageError, LandmarkSet, Point, LANDMARK_COUNT};

pub const DEFAULT_CROP_SIZE: usize = 96;

const TEMPLATE_MAGIC: &str = "cabwatch-landmark-template v1";
const BUNDLED_TEMPLATE: &str = include_str!("../data/landmark_template_68.txt");

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("degenerate landmark configuration: {0}")]
    Degenerate(String),
    #[error("landmark template: {0}")]
    Template(String),
    #[error("landmark provider: {0}")]
    Provider(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// `p ↦ s·R(θ)·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    scale: f64,
    rotation: f64,
    tx: f64,
    ty: f64,
}

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: f64, tx: f64, ty: f64) -> Result<Self, AlignError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(AlignError::Degenerate(format!(
                "scale must be positive and finite, got {scale}"
            )));
        }
        if !rotation.is_finite() || !tx.is_finite() || !ty.is_finite() {
            return Err(AlignError::Degenerate("non-finite rotation or translation".into()));
        }
        Ok(Self {
            scale,
            rotation,
            tx,
            ty,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Rotation in radians, in `(-π, π]` for estimated transforms.
    pub fn rotation(&self) -> f64 {
        self.rotation
    }

    pub fn translation(&self) -> (f64, f64) {
        (self.tx, self.ty)
    }

    /// `[[s·cosθ, −s·sinθ, tx], [s·sinθ, s·cosθ, ty]]`
    pub fn matrix(&self) -> [[f64; 3]; 2] {
        let (sin, cos) = self.rotation.sin_cos();
        let (a, b) = (self.scale * cos, self.scale * sin);
        [[a, -b, self.tx], [b, a, self.ty]]
    }

    pub fn apply(&self, p: Point) -> Point {
        let [[a, nb, tx], [b, _, ty]] = self.matrix();
        Point::new(a * p.x + nb * p.y + tx, b * p.x + a * p.y + ty)
    }

    pub fn apply_inverse(&self, p: Point) -> Point {
        let (sin, cos) = self.rotation.sin_cos();
        let (dx, dy) = (p.x - self.tx, p.y - self.ty);
        Point::new((cos * dx + sin * dy) / self.scale, (-sin * dx + cos * dy) / self.scale)
    }
}

/// 68 canonical landmark positions inside a square crop.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTemplate {
    points: Vec<Point>,
    crop_size: usize,
}

impl LandmarkTemplate {
    pub fn new(points: Vec<Point>, crop_size: usize) -> Result<Self, AlignError> {
        if points.len() != LANDMARK_COUNT {
            return Err(AlignError::Template(format!(
                "expected {LANDMARK_COUNT} points, got {}",
                points.len()
            )));
        }
        if crop_size == 0 {
            return Err(AlignError::Template("crop size must be positive".into()));
        }
        let side = crop_size as f64;
        if let Some(i) = points
            .iter()
            .position(|p| !(p.x >= 0.0 && p.x < side && p.y >= 0.0 && p.y < side))
        {
            return Err(AlignError::Template(format!(
                "point {i} lies outside the {crop_size}x{crop_size} crop"
            )));
        }
        Ok(Self { points, crop_size })
    }

    /// The bundled mean-face template at [`DEFAULT_CROP_SIZE`].
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_TEMPLATE).expect("bundled template is valid")
    }

    /// Template file format: optional `#` comment lines, the line
    /// `cabwatch-landmark-template v1`, the line `crop_size <n>`, then 68
    /// lines of `<x> <y>` in iBUG landmark order.
    pub fn parse(text: &str) -> Result<Self, AlignError> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        if lines.next() != Some(TEMPLATE_MAGIC) {
            return Err(AlignError::Template("missing template header".into()));
        }
        let crop_size = lines
            .next()
            .and_then(|l| l.strip_prefix("crop_size "))
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| AlignError::Template("missing or bad `crop_size` line".into()))?;
        let points = lines
            .enumerate()
            .map(|(i, line)| {
                let mut it = line.split_whitespace().map(str::parse::<f64>);
                match (it.next(), it.next(), it.next()) {
                    (Some(Ok(x)), Some(Ok(y)), None) => Ok(Point::new(x, y)),
                    _ => Err(AlignError::Template(format!("bad point line {i}: {line:?}"))),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(points, crop_size)
    }

    pub fn load(path: &Path) -> Result<Self, AlignError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| AlignError::Template(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The same template rescaled for a different crop size.
    pub fn rescaled(&self, crop_size: usize) -> Result<Self, AlignError> {
        let k = crop_size as f64 / self.crop_size as f64;
        Self::new(
            self.points.iter().map(|p| Point::new(p.x * k, p.y * k)).collect(),
            crop_size,
        )
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn crop_size(&self) -> usize {
        self.crop_size
    }
}

impl Default for LandmarkTemplate {
    fn default() -> Self {
        Self::bundled()
    }
}

/// A face warped into the template frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFace {
    pub image: GrayImage,
    pub source_box: BoundingBox,
    /// Mean landmark alignment error, pixels.
    pub residual: f64,
    /// Ground-truth identity when the face comes from an annotated fixture.
    pub identity_tag: Option<String>,
}

/// Supplies 68 landmarks for a detected face.
pub trait LandmarkProvider: Send + Sync {
    fn landmarks(&self, image: &GrayImage, face: &BoundingBox, frame_ref: &str) -> Result<LandmarkSet, AlignError>;
}

/// Least-squares similarity between paired point lists (closed form from the
/// centered cross-covariance; reflections are excluded by construction).
pub fn estimate_similarity_points(src: &[Point], dst: &[Point]) -> Result<SimilarityTransform, AlignError> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(AlignError::Degenerate(format!(
            "point counts differ or are empty ({} vs {})",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len() as f64;
    let mean = |pts: &[Point]| {
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point::new(sx / n, sy / n)
    };
    let ms = mean(src);
    let md = mean(dst);

    let (mut a, mut b, mut var) = (0.0, 0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (sx, sy) = (s.x - ms.x, s.y - ms.y);
        let (dx, dy) = (d.x - md.x, d.y - md.y);
        a += sx * dx + sy * dy;
        b += sx * dy - sy * dx;
        var += sx * sx + sy * sy;
    }
    let spread = src.iter().map(|p| p.x.abs().max(p.y.abs())).fold(1.0, f64::max);
    if var <= n * (spread * 1e-9).powi(2) {
        return Err(AlignError::Degenerate("source points are (nearly) coincident".into()));
    }
    let scale = a.hypot(b) / var;
    let rotation = b.atan2(a);
    let (sin, cos) = rotation.sin_cos();
    let tx = md.x - scale * (cos * ms.x - sin * ms.y);
    let ty = md.y - scale * (sin * ms.x + cos * ms.y);
    SimilarityTransform::new(scale, rotation, tx, ty)
}

pub fn estimate_similarity(src: &LandmarkSet, dst: &LandmarkTemplate) -> Result<SimilarityTransform, AlignError> {
    estimate_similarity_points(src.points(), dst.points())
}

/// Mean distance between transformed source points and their targets.
pub fn alignment_residual(t: &SimilarityTransform, src: &[Point], dst: &[Point]) -> f64 {
    if src.is_empty() {
        return 0.0;
    }
    src.iter().zip(dst).map(|(s, d)| t.apply(*s).distance(d)).sum::<f64>() / src.len() as f64
}

/// Resamples `img` into the template crop: output pixel `(u, v)` is the
/// bilinear sample of `img` at `T⁻¹(u, v)`, or 0 outside the source.
pub fn warp_face(
    img: &GrayImage,
    transform: &SimilarityTransform,
    template: &LandmarkTemplate,
    source_box: BoundingBox,
    residual: f64,
) -> Result<AlignedFace, AlignError> {
    let side = template.crop_size();
    let image = GrayImage::from_fn(side, side, |u, v| {
        let p = transform.apply_inverse(Point::new(u as f64, v as f64));
        img.sample_bilinear(p.x, p.y)
            .map_or(0, |s| s.round().clamp(0.0, 255.0) as u8)
    })?;
    Ok(AlignedFace {
        image,
        source_box,
        residual: residual.max(0.0),
        identity_tag: None,
    })
}

/// Estimates the transform from `landmarks` and warps the face.
pub fn align_face(
    img: &GrayImage,
    landmarks: &LandmarkSet,
    face: BoundingBox,
    template: &LandmarkTemplate,
) -> Result<AlignedFace, AlignError> {
    let t = estimate_similarity(landmarks, template)?;
    let residual = alignment_residual(&t, landmarks.points(), template.points());
    warp_face(img, &t, template, face, residual)
}

/// Landmark-free alignment: scales the box's longer side onto the crop and
/// centers it. Used when no landmark provider is configured.
pub fn align_box(
    img: &GrayImage,
    face: BoundingBox,
    crop_size: usize,
    template: &LandmarkTemplate,
) -> Result<AlignedFace, AlignError> {
    let template = if template.crop_size() == crop_size {
        template.clone()
    } else {
        template.rescaled(crop_size)?
    };
    let scale = crop_size as f64 / face.width.max(face.height);
    let (cx, cy) = face.center();
    let half = crop_size as f64 / 2.0;
    let t = SimilarityTransform::new(scale, 0.0, half - scale * cx, half - scale * cy)?;
    warp_face(img, &t, &template, face, 0.0)
}

/// Landmarks read from a sidecar file, keyed by frame reference.
///
/// One record per line: `<frame_ref> x0 y0 x1 y1 … x67 y67`, whitespace
/// separated, `#` comments allowed. A frame may have several records (one per
/// face); the record whose centroid falls inside the queried box, closest to
/// its center, is returned.
#[derive(Debug, Clone, Default)]
pub struct FixtureLandmarks {
    by_frame: HashMap<String, Vec<LandmarkSet>>,
}

impl FixtureLandmarks {
    pub fn parse(text: &str) -> Result<Self, AlignError> {
        let mut by_frame: HashMap<String, Vec<LandmarkSet>> = HashMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let frame = tokens.next().unwrap_or_default().to_string();
            let coords = tokens
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| AlignError::Provider(format!("line {}: {e}", no + 1)))?;
            if coords.len() != 2 * LANDMARK_COUNT {
                return Err(AlignError::Provider(format!(
                    "line {}: expected {} coordinates, got {}",
                    no + 1,
                    2 * LANDMARK_COUNT,
                    coords.len()
                )));
            }
            let set = LandmarkSet::new(coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect())?;
            by_frame.entry(frame).or_default().push(set);
        }
        Ok(Self { by_frame })
    }

    pub fn load(path: &Path) -> Result<Self, AlignError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| AlignError::Provider(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, frame_ref: impl Into<String>, landmarks: LandmarkSet) {
        self.by_frame.entry(frame_ref.into()).or_default().push(landmarks);
    }

    /// Serializes in the sidecar format, frames sorted.
    pub fn to_text(&self) -> String {
        let mut frames: Vec<_> = self.by_frame.iter().collect();
        frames.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (frame, sets) in frames {
            for set in sets {
                out.push_str(frame);
                for p in set.points() {
                    out.push_str(&format!(" {:?} {:?}", p.x, p.y));
                }
                out.push('\n');
            }
        }
        out
    }
}

impl LandmarkProvider for FixtureLandmarks {
    fn landmarks(&self, _image: &GrayImage, face: &BoundingBox, frame_ref: &str) -> Result<LandmarkSet, AlignError> {
        let (cx, cy) = face.center();
        self.by_frame
            .get(frame_ref)
            .into_iter()
            .flatten()
            .filter(|set| {
                let c = set.centroid();
                face.contains(c.x, c.y)
            })
            .min_by(|a, b| {
                let da = a.centroid().distance(&Point::new(cx, cy));
                let db = b.centroid().distance(&Point::new(cx, cy));
                da.total_cmp(&db)
            })
            .cloned()
            .ok_or_else(|| {
                AlignError::Provider(format!(
                    "no fixture landmarks for frame {frame_ref:?} inside the face box"
                ))
            })
    }
}
