//! Reference implementations used as test oracles. They follow the
//! definitions directly, favouring clarity over speed, and share no code with
//! the library.

#![allow(dead_code)]

/// HOG of a `w`×`h` row-major window: 8-pixel cells, 2×2-cell blocks at a
/// one-cell stride, 9 unsigned bins, L2-hys with clip 0.2 and epsilon 1e-6.
///
/// Votes use a triangular kernel on the orientation circle, which splits
/// each magnitude between the two nearest bin centers.
pub fn naive_hog(px: &[u8], w: usize, h: usize) -> Vec<f64> {
    const CELL: usize = 8;
    const BINS: usize = 9;
    const CLIP: f64 = 0.2;
    const EPS: f64 = 1e-6;
    let bin_width = std::f64::consts::PI / BINS as f64;
    let p = |x: usize, y: usize| f64::from(px[y * w + x]);

    let gradient = |x: usize, y: usize| -> (f64, f64) {
        let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
        (p(x1, y) - p(x0, y), p(x, y1) - p(x, y0))
    };

    let cell_hist = |cx: usize, cy: usize| -> [f64; BINS] {
        let mut hist = [0.0; BINS];
        for y in cy * CELL..(cy + 1) * CELL {
            for x in cx * CELL..(cx + 1) * CELL {
                let (gx, gy) = gradient(x, y);
                let mag = (gx * gx + gy * gy).sqrt();
                if mag == 0.0 {
                    continue;
                }
                let theta = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
                for (k, slot) in hist.iter_mut().enumerate() {
                    let center = (k as f64 + 0.5) * bin_width;
                    let d = (theta - center).abs();
                    let d = d.min(std::f64::consts::PI - d);
                    *slot += mag * (1.0 - d / bin_width).max(0.0);
                }
            }
        }
        hist
    };

    let (cells_x, cells_y) = (w / CELL, h / CELL);
    let mut out = Vec::new();
    for by in 0..cells_y - 1 {
        for bx in 0..cells_x - 1 {
            let mut block: Vec<f64> = Vec::with_capacity(4 * BINS);
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                block.extend(cell_hist(bx + dx, by + dy));
            }
            let norm = |b: &[f64]| (b.iter().map(|v| v * v).sum::<f64>() + EPS * EPS).sqrt();
            let n1 = norm(&block);
            let clipped: Vec<f64> = block.iter().map(|v| (v / n1).min(CLIP)).collect();
            let n2 = norm(&clipped);
            out.extend(clipped.iter().map(|v| v / n2));
        }
    }
    out
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Index of the nearest gallery vector, first on ties.
pub fn nearest(gallery: &[Vec<f64>], q: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in gallery.iter().enumerate() {
        let d = euclidean(g, q);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best
}

/// Number of trespass alerts a throttled alerter raises for unknown
/// sightings at `times` (seconds, ascending): one alert, then none until
/// `throttle` seconds have passed since the last alert.
pub fn throttled_alert_count(times: &[i64], throttle: i64) -> usize {
    let mut last: Option<i64> = None;
    let mut n = 0;
    for &t in times {
        if last.map_or(true, |l| t - l >= throttle) {
            n += 1;
            last = Some(t);
        }
    }
    n
}
