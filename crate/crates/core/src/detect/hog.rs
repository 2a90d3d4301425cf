//! Histogram-of-oriented-gradients descriptors.
//!
//! Gradients use centered differences in the interior and one-sided
//! differences on the border. Each pixel votes its gradient magnitude into
//! the two orientation bins whose centers bracket its angle (circular), and
//! 2×2-cell blocks are L2-hys normalized.

use crate::imaging::GrayImage;

use super::DetectError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HogParams {
    /// Pixels per cell side.
    pub cell_size: usize,
    /// Cells per block side.
    pub block_size: usize,
    /// Block step, in cells.
    pub block_stride: usize,
    pub bins: usize,
    /// When false, orientations are folded into `[0°, 180°)`.
    pub signed: bool,
    pub clip: f64,
    pub epsilon: f64,
}

impl Default for HogParams {
    fn default() -> Self {
        Self {
            cell_size: 8,
            block_size: 2,
            block_stride: 1,
            bins: 9,
            signed: false,
            clip: 0.2,
            epsilon: 1e-6,
        }
    }
}

impl HogParams {
    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |msg: &str| Err(DetectError::Params(msg.to_string()));
        if self.cell_size == 0 || self.block_size == 0 || self.block_stride == 0 {
            return bad("cell_size, block_size and block_stride must be positive");
        }
        if self.bins < 2 {
            return bad("bins must be at least 2");
        }
        if !(self.clip > 0.0 && self.clip <= 1.0) {
            return bad("clip must lie in (0, 1]");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }

    /// Angular range covered by the bins, in degrees.
    pub fn orientation_range(&self) -> f64 {
        if self.signed {
            360.0
        } else {
            180.0
        }
    }

    /// Block counts `(blocks_x, blocks_y)` for a window, after checking the
    /// window is cell aligned and holds at least one block.
    pub fn block_grid(&self, width: usize, height: usize) -> Result<(usize, usize), DetectError> {
        self.validate()?;
        if width % self.cell_size != 0 || height % self.cell_size != 0 {
            return Err(DetectError::Dimension(format!(
                "window {width}x{height} is not a multiple of cell size {}",
                self.cell_size
            )));
        }
        let cells_x = width / self.cell_size;
        let cells_y = height / self.cell_size;
        if cells_x < self.block_size || cells_y < self.block_size {
            return Err(DetectError::Dimension(format!(
                "window {width}x{height} holds no {0}x{0}-cell block",
                self.block_size
            )));
        }
        Ok((
            blocks_along(cells_x, self.block_size, self.block_stride),
            blocks_along(cells_y, self.block_size, self.block_stride),
        ))
    }

    /// Values per normalized block.
    pub fn block_len(&self) -> usize {
        self.block_size * self.block_size * self.bins
    }

    /// Descriptor length for a window: `blocks_y · blocks_x · block_size² · bins`.
    pub fn descriptor_len(&self, width: usize, height: usize) -> Result<usize, DetectError> {
        let (bx, by) = self.block_grid(width, height)?;
        Ok(bx * by * self.block_len())
    }
}

fn blocks_along(cells: usize, block: usize, stride: usize) -> usize {
    (cells - block) / stride + 1
}

/// Per-pixel image gradients.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
}

impl GradientField {
    /// Orientation in degrees, `[0, 180)` unsigned or `[0, 360)` signed.
    #[inline]
    pub fn orientation_at(&self, idx: usize, signed: bool) -> f64 {
        fold_angle(self.gy[idx].atan2(self.gx[idx]).to_degrees(), signed)
    }

    /// Unsigned orientation in `[0°, 180°)` for every pixel.
    pub fn orientation(&self) -> Vec<f64> {
        (0..self.gx.len()).map(|i| self.orientation_at(i, false)).collect()
    }
}

#[inline]
fn fold_angle(deg: f64, signed: bool) -> f64 {
    let range = if signed { 360.0 } else { 180.0 };
    let a = deg.rem_euclid(range);
    if a >= range {
        0.0
    } else {
        a
    }
}

/// Computes per-pixel gradients of an image at least 3×3.
pub fn compute_gradients(img: &GrayImage) -> Result<GradientField, DetectError> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(DetectError::Dimension(format!(
            "gradients need an image of at least 3x3, got {w}x{h}"
        )));
    }
    let px = img.data();
    let at = |x: usize, y: usize| px[y * w + x] as f64;
    let n = w * h;
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut magnitude = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let dx = if x == 0 {
                at(1, y) - at(0, y)
            } else if x == w - 1 {
                at(x, y) - at(x - 1, y)
            } else {
                at(x + 1, y) - at(x - 1, y)
            };
            let dy = if y == 0 {
                at(x, 1) - at(x, 0)
            } else if y == h - 1 {
                at(x, y) - at(x, y - 1)
            } else {
                at(x, y + 1) - at(x, y - 1)
            };
            let i = y * w + x;
            gx[i] = dx;
            gy[i] = dy;
            magnitude[i] = dx.hypot(dy);
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        gx,
        gy,
        magnitude,
    })
}

/// Orientation histograms for a grid of cells, row-major over cells, each
/// cell holding `bins` values.
#[derive(Debug, Clone)]
pub struct CellHistograms {
    pub cells_x: usize,
    pub cells_y: usize,
    pub bins: usize,
    pub values: Vec<f64>,
}

impl CellHistograms {
    /// Histograms for every whole cell of `field`, starting at the top-left.
    pub fn compute(field: &GradientField, params: &HogParams) -> Self {
        let cs = params.cell_size;
        let cells_x = field.width / cs;
        let cells_y = field.height / cs;
        let bins = params.bins;
        let bin_width = params.orientation_range() / bins as f64;
        let mut values = vec![0.0; cells_x * cells_y * bins];
        for y in 0..cells_y * cs {
            let row = (y / cs) * cells_x;
            for x in 0..cells_x * cs {
                let i = y * field.width + x;
                let mag = field.magnitude[i];
                if mag == 0.0 {
                    continue;
                }
                let angle = field.orientation_at(i, params.signed);
                let pos = angle / bin_width - 0.5;
                let lo = pos.floor();
                let frac = pos - lo;
                let lo_bin = (lo as isize).rem_euclid(bins as isize) as usize;
                let hi_bin = (lo_bin + 1) % bins;
                let base = (row + x / cs) * bins;
                values[base + lo_bin] += mag * (1.0 - frac);
                values[base + hi_bin] += mag * frac;
            }
        }
        Self {
            cells_x,
            cells_y,
            bins,
            values,
        }
    }

    #[inline]
    fn cell(&self, cx: usize, cy: usize) -> &[f64] {
        let start = (cy * self.cells_x + cx) * self.bins;
        &self.values[start..start + self.bins]
    }

    /// L2-hys normalized block whose top-left cell is `(cx, cy)`, appended to `out`.
    pub fn normalized_block(&self, cx: usize, cy: usize, params: &HogParams, out: &mut Vec<f64>) {
        let start = out.len();
        for dy in 0..params.block_size {
            for dx in 0..params.block_size {
                out.extend_from_slice(self.cell(cx + dx, cy + dy));
            }
        }
        l2_hys(&mut out[start..], params.clip, params.epsilon);
    }
}

/// L2-normalize, clip at `clip`, renormalize.
fn l2_hys(block: &mut [f64], clip: f64, eps: f64) {
    let eps2 = eps * eps;
    let norm = (block.iter().map(|v| v * v).sum::<f64>() + eps2).sqrt();
    for v in block.iter_mut() {
        *v = (*v / norm).min(clip);
    }
    let norm = (block.iter().map(|v| v * v).sum::<f64>() + eps2).sqrt();
    for v in block.iter_mut() {
        *v /= norm;
    }
}

/// A flattened HOG descriptor with layout `(blocks_y, blocks_x, block_size², bins)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    pub values: Vec<f64>,
    pub blocks_y: usize,
    pub blocks_x: usize,
    pub cells_per_block: usize,
    pub bins: usize,
}

impl HogDescriptor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, bx: usize, by: usize) -> &[f64] {
        let len = self.cells_per_block * self.bins;
        let start = (by * self.blocks_x + bx) * len;
        &self.values[start..start + len]
    }
}

/// Descriptor of a whole window. The window dimensions must be multiples of
/// the cell size and hold at least one block.
pub fn hog_descriptor(window: &GrayImage, params: &HogParams) -> Result<HogDescriptor, DetectError> {
    let (blocks_x, blocks_y) = params.block_grid(window.width(), window.height())?;
    let field = compute_gradients(window)?;
    let cells = CellHistograms::compute(&field, params);
    let mut values = Vec::with_capacity(blocks_x * blocks_y * params.block_len());
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            cells.normalized_block(bx * params.block_stride, by * params.block_stride, params, &mut values);
        }
    }
    Ok(HogDescriptor {
        values,
        blocks_y,
        blocks_x,
        cells_per_block: params.block_size * params.block_size,
        bins: params.bins,
    })
}
