//! Raster types and geometry shared by every vision stage.
//!
//! Pixel origin is the top-left corner with `y` growing downward. Subpixel
//! coordinates are continuous, with pixel centers at integer coordinates.

use std::fmt;

use thiserror::Error;

/// Number of facial landmarks in a [`LandmarkSet`].
pub const LANDMARK_COUNT: usize = 68;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("malformed image: {width}x{height} raster needs {expected} values, got {actual}")]
    Malformed {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    Empty { width: usize, height: usize },
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("landmark set must have exactly {LANDMARK_COUNT} finite points, got {0}")]
    Landmarks(String),
}

/// Single-channel 8-bit luminance raster, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Empty { width, height });
        }
        let expected = width.checked_mul(height).ok_or(ImageError::Empty { width, height })?;
        if data.len() != expected {
            return Err(ImageError::Malformed {
                width,
                height,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    /// A `width`×`height` image filled with `value`.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width.saturating_mul(height)])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width.saturating_mul(height));
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    /// Copy of the rectangle `[x, x+width) × [y, y+height)`.
    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self, ImageError> {
        if x + width > self.width || y + height > self.height {
            return Err(ImageError::InvalidBox(format!(
                "crop {width}x{height} at ({x},{y}) exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height);
        for row in y..y + height {
            let start = row * self.width + x;
            data.extend_from_slice(&self.data[start..start + width]);
        }
        Self::new(width, height, data)
    }

    /// Bilinear sample at a subpixel location. Locations outside
    /// `[0, width-1] × [0, height-1]` yield `None`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let p00 = self.get(x0, y0) as f64;
        let p10 = self.get(x1, y0) as f64;
        let p01 = self.get(x0, y1) as f64;
        let p11 = self.get(x1, y1) as f64;
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        Some(top + (bottom - top) * fy)
    }

    /// Bilinear resize to `width`×`height` using pixel-center alignment.
    pub fn resize(&self, width: usize, height: usize) -> Result<Self, ImageError> {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        Self::from_fn(width, height, |u, v| {
            let x = ((u as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let y = ((v as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            // clamped into range, so sampling cannot fail
            self.sample_bilinear(x, y).unwrap_or(0.0).round() as u8
        })
    }
}

impl fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

/// Converts an interleaved 8-bit RGB raster to luma with BT.601 weights.
pub fn to_grayscale(width: usize, height: usize, rgb: &[u8]) -> Result<GrayImage, ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::Empty { width, height });
    }
    let expected = width * height * 3;
    if rgb.len() != expected {
        return Err(ImageError::Malformed {
            width,
            height,
            expected,
            actual: rgb.len(),
        });
    }
    let data = rgb
        .chunks_exact(3)
        .map(|px| {
            let luma = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
            luma.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(width, height, data)
}

/// Axis-aligned detection region in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub score: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64, score: f64) -> Result<Self, ImageError> {
        let all_finite = [x, y, width, height, score].iter().all(|v| v.is_finite());
        if !all_finite || width <= 0.0 || height <= 0.0 {
            return Err(ImageError::InvalidBox(format!(
                "({x}, {y}, {width}, {height}, score {score})"
            )));
        }
        Ok(Self {
            x,
            y,
            width,
            height,
            score,
        })
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn right(&self) -> f64 {
        self.x + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.height
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.width / 2.0, self.y + self.height / 2.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x && x <= self.right() && y >= self.y && y <= self.bottom()
    }

    /// Clips the box to a `width`×`height` image. Returns `None` when nothing
    /// of the box remains inside.
    pub fn clip_to(&self, width: usize, height: usize) -> Option<Self> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width as f64);
        let y1 = self.bottom().min(height as f64);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(Self {
            x: x0,
            y: y0,
            width: x1 - x0,
            height: y1 - y0,
            score: self.score,
        })
    }

    pub fn is_within(&self, width: usize, height: usize) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.right() <= width as f64 && self.bottom() <= height as f64
    }
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let iy = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A 2-D point in subpixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Exactly 68 facial landmark points, in the standard iBUG ordering
/// (jaw 0-16, brows 17-26, nose 27-35, eyes 36-47, mouth 48-67).
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>) -> Result<Self, ImageError> {
        if points.len() != LANDMARK_COUNT {
            return Err(ImageError::Landmarks(format!("{} points", points.len())));
        }
        if let Some(i) = points.iter().position(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(ImageError::Landmarks(format!("non-finite point at index {i}")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len() as f64;
        let (sx, sy) = self.points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point::new(sx / n, sy / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h, 1.0).unwrap()
    }

    #[test]
    fn grayscale_examples() {
        let white = to_grayscale(1, 1, &[255, 255, 255]).unwrap();
        assert_eq!(white.data(), &[255]);
        let red = to_grayscale(1, 1, &[255, 0, 0]).unwrap();
        // round(0.299 * 255) = round(76.245)
        assert_eq!(red.data(), &[76]);
        let black = to_grayscale(4, 3, &[0; 36]).unwrap();
        assert!(black.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn grayscale_rejects_bad_length() {
        assert!(matches!(
            to_grayscale(2, 2, &[0; 11]),
            Err(ImageError::Malformed { expected: 12, .. })
        ));
        assert!(matches!(to_grayscale(0, 2, &[]), Err(ImageError::Empty { .. })));
    }

    #[test]
    fn gray_image_invariants() {
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
        assert!(GrayImage::new(0, 1, vec![]).is_err());
        let img = GrayImage::from_fn(3, 2, |x, y| (x + 10 * y) as u8).unwrap();
        assert_eq!(img.get(2, 1), 12);
        let c = img.crop(1, 0, 2, 2).unwrap();
        assert_eq!(c.data(), &[1, 2, 11, 12]);
        assert!(img.crop(2, 0, 2, 1).is_err());
    }

    #[test]
    fn bilinear_sampling() {
        let img = GrayImage::new(2, 1, vec![0, 100]).unwrap();
        assert_eq!(img.sample_bilinear(0.5, 0.0), Some(50.0));
        assert_eq!(img.sample_bilinear(1.0, 0.0), Some(100.0));
        assert_eq!(img.sample_bilinear(1.01, 0.0), None);
        assert_eq!(img.sample_bilinear(-0.01, 0.0), None);
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 5.0, 5.0)), 0.0);
        // touching edges share no area
        assert_eq!(iou(&a, &bx(10.0, 0.0, 10.0, 10.0)), 0.0);
        let half = iou(&a, &bx(5.0, 0.0, 10.0, 10.0));
        assert!((half - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn box_validation_and_clip() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, 1.0, f64::NAN).is_err());
        let clipped = bx(-5.0, 2.0, 20.0, 20.0).clip_to(10, 10).unwrap();
        assert_eq!(
            (clipped.x, clipped.y, clipped.width, clipped.height),
            (0.0, 2.0, 10.0, 8.0)
        );
        assert!(bx(20.0, 20.0, 5.0, 5.0).clip_to(10, 10).is_none());
    }

    #[test]
    fn landmark_set_requires_68_finite_points() {
        assert!(LandmarkSet::new(vec![Point::default(); 67]).is_err());
        let mut pts = vec![Point::default(); 68];
        assert!(LandmarkSet::new(pts.clone()).is_ok());
        pts[3].x = f64::INFINITY;
        assert!(LandmarkSet::new(pts).is_err());
    }

    proptest! {
        #[test]
        fn grayscale_in_range_and_idempotent_on_gray(px in proptest::collection::vec(any::<u8>(), 3..=300)) {
            let n = px.len() / 3;
            let rgb = &px[..n * 3];
            let g = to_grayscale(n, 1, rgb).unwrap();
            prop_assert_eq!(g.data().len(), n);
            let gray_rgb: Vec<u8> = px[..n].iter().flat_map(|&v| [v, v, v]).collect();
            let g2 = to_grayscale(n, 1, &gray_rgb).unwrap();
            prop_assert_eq!(g2.data(), &px[..n]);
        }

        #[test]
        fn iou_symmetric_and_bounded(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64, aw in 0.5..40.0f64, ah in 0.5..40.0f64,
            bx_ in -50.0..50.0f64, by in -50.0..50.0f64, bw in 0.5..40.0f64, bh in 0.5..40.0f64,
        ) {
            let a = bx(ax, ay, aw, ah);
            let b = bx(bx_, by, bw, bh);
            let ab = iou(&a, &b);
            prop_assert!((ab - iou(&b, &a)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn iou_monotone_as_gap_shrinks(gap in 0.0..30.0f64, step in 0.0..10.0f64) {
            let a = bx(0.0, 0.0, 10.0, 10.0);
            let far = iou(&a, &bx(gap, 0.0, 10.0, 10.0));
            let near = iou(&a, &bx((gap - step).max(0.0), 0.0, 10.0, 10.0));
            prop_assert!(near >= far - 1e-12);
        }
    }
}
