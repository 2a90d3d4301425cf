//! Face localization: HOG features, a linear sliding-window scan over an
//! image pyramid, and greedy non-maximum suppression.

pub mod fixture;
pub mod hog;
pub mod model;

use std::cmp::Ordering;

use rayon::prelude::*;
use thiserror::Error;

use crate::imaging::{iou, BoundingBox, GrayImage, ImageError};

pub use fixture::FixtureDetector;
pub use hog::{compute_gradients, hog_descriptor, CellHistograms, GradientField, HogDescriptor, HogParams};
pub use model::LinearDetectorModel;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid HOG parameters: {0}")]
    Params(String),
    #[error("detector model: {0}")]
    Model(String),
    #[error("detector fixture: {0}")]
    Fixture(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

pub const DEFAULT_NMS_IOU: f64 = 0.3;

/// Anything that can localize faces in a grayscale frame.
///
/// Returned boxes lie within the image and carry finite scores. `frame_ref`
/// identifies the frame for detectors backed by per-frame annotations.
pub trait FaceDetector: Send + Sync {
    fn detect(&self, image: &GrayImage, frame_ref: &str) -> Result<Vec<BoundingBox>, DetectError>;

    /// Ground-truth identity of a detected face, for annotated fixtures only.
    fn identity_tag(&self, _frame_ref: &str, _face: &BoundingBox) -> Option<String> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    /// Downscale factor between pyramid levels, > 1.
    pub pyramid_scale: f64,
    /// Window step in pixels at every level.
    pub stride: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            pyramid_scale: 1.2,
            stride: 8,
        }
    }
}

/// Scans every stride-aligned window of every pyramid level and returns the
/// windows scoring above the model threshold, mapped to original image
/// coordinates. The result is not suppressed.
///
/// Gradients are taken over each whole pyramid level, so pixels on a window
/// edge see their true neighbours outside the window. When the stride is a
/// multiple of the cell size, cell histograms and normalized blocks are
/// shared between overlapping windows.
pub fn sliding_window_detect(
    img: &GrayImage,
    model: &LinearDetectorModel,
    scan: &ScanConfig,
) -> Result<Vec<BoundingBox>, DetectError> {
    model.validate()?;
    if !(scan.pyramid_scale > 1.0 && scan.pyramid_scale.is_finite()) || scan.stride == 0 {
        return Err(DetectError::Params(format!(
            "pyramid scale must be > 1 and stride positive, got {} / {}",
            scan.pyramid_scale, scan.stride
        )));
    }
    let (ww, wh) = (model.window_width, model.window_height);
    let (w, h) = (img.width(), img.height());

    let mut levels = Vec::new();
    let mut factor = 1.0f64;
    loop {
        let lw = (w as f64 / factor).round() as usize;
        let lh = (h as f64 / factor).round() as usize;
        if lw < ww || lh < wh {
            break;
        }
        levels.push((lw, lh));
        factor *= scan.pyramid_scale;
    }

    let per_level: Vec<Vec<BoundingBox>> = levels
        .par_iter()
        .map(|&(lw, lh)| -> Result<Vec<BoundingBox>, DetectError> {
            let level = if (lw, lh) == (w, h) {
                img.clone()
            } else {
                img.resize(lw, lh)?
            };
            let fx = w as f64 / lw as f64;
            let fy = h as f64 / lh as f64;
            let hits = scan_level(&level, model, scan.stride)?;
            Ok(hits
                .into_iter()
                .filter_map(|(x, y, score)| {
                    BoundingBox {
                        x: x as f64 * fx,
                        y: y as f64 * fy,
                        width: ww as f64 * fx,
                        height: wh as f64 * fy,
                        score,
                    }
                    .clip_to(w, h)
                })
                .collect())
        })
        .collect::<Result<_, _>>()?;

    Ok(per_level.into_iter().flatten().collect())
}

/// Window origins `(x, y)` and scores above threshold at a single level.
fn scan_level(
    level: &GrayImage,
    model: &LinearDetectorModel,
    stride: usize,
) -> Result<Vec<(usize, usize, f64)>, DetectError> {
    let p = &model.params;
    let (ww, wh) = (model.window_width, model.window_height);
    let (lw, lh) = (level.width(), level.height());
    let origins = (0..=lh - wh)
        .step_by(stride)
        .flat_map(|y| (0..=lw - ww).step_by(stride).map(move |x| (x, y)));

    let mut hits = Vec::new();
    if stride % p.cell_size != 0 {
        for (x, y) in origins {
            let window = level.crop(x, y, ww, wh)?;
            let score = model.score(&hog_descriptor(&window, p)?.values);
            if score > model.score_threshold {
                hits.push((x, y, score));
            }
        }
        return Ok(hits);
    }

    let field = compute_gradients(level)?;
    let cells = CellHistograms::compute(&field, p);
    let block_len = p.block_len();
    let grid_x = cells.cells_x + 1 - p.block_size;
    let grid_y = cells.cells_y + 1 - p.block_size;
    let mut blocks = Vec::with_capacity(grid_x * grid_y * block_len);
    for cy in 0..grid_y {
        for cx in 0..grid_x {
            cells.normalized_block(cx, cy, p, &mut blocks);
        }
    }
    let (blocks_x, blocks_y) = p.block_grid(ww, wh)?;

    for (x, y) in origins {
        let (cx0, cy0) = (x / p.cell_size, y / p.cell_size);
        let mut score = model.bias;
        let mut weights = model.weights.chunks_exact(block_len);
        for by in 0..blocks_y {
            for bx in 0..blocks_x {
                let cx = cx0 + bx * p.block_stride;
                let cy = cy0 + by * p.block_stride;
                let start = (cy * grid_x + cx) * block_len;
                let block = &blocks[start..start + block_len];
                let wb = weights.next().expect("weight length validated");
                score += wb.iter().zip(block).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        if score > model.score_threshold {
            hits.push((x, y, score));
        }
    }
    Ok(hits)
}

/// Deterministic detection order: score descending, then x, then y ascending.
fn detection_order(a: &BoundingBox, b: &BoundingBox) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.x.total_cmp(&b.x))
        .then(a.y.total_cmp(&b.y))
}

/// Greedy NMS: keep the best remaining box, drop every box overlapping it by
/// more than `iou_threshold`, repeat. Output is sorted by descending score.
pub fn non_max_suppression(boxes: &[BoundingBox], iou_threshold: f64) -> Vec<BoundingBox> {
    let mut remaining: Vec<BoundingBox> = boxes.to_vec();
    remaining.sort_by(detection_order);
    let mut kept: Vec<BoundingBox> = Vec::new();
    for candidate in remaining {
        if kept.iter().all(|k| iou(k, &candidate) <= iou_threshold) {
            kept.push(candidate);
        }
    }
    kept
}

/// HOG + linear model face detector.
#[derive(Debug, Clone)]
pub struct HogFaceDetector {
    pub model: LinearDetectorModel,
    pub scan: ScanConfig,
}

impl HogFaceDetector {
    pub fn new(model: LinearDetectorModel) -> Self {
        Self {
            model,
            scan: ScanConfig::default(),
        }
    }
}

impl FaceDetector for HogFaceDetector {
    fn detect(&self, image: &GrayImage, _frame_ref: &str) -> Result<Vec<BoundingBox>, DetectError> {
        sliding_window_detect(image, &self.model, &self.scan)
    }
}
