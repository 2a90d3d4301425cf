//! Linear window classifier and its text file format.
//!
//! ```text
//! cabwatch-linear-detector v1
//! window <width> <height>
//! cell_size <n>
//! block_size <n>
//! block_stride <n>
//! bins <n>
//! signed <true|false>
//! clip <real>
//! epsilon <real>
//! score_threshold <real>
//! bias <real>
//! weights <count>
//! <one weight per line, count lines>
//! ```
//!
//! Keys appear in exactly this order. Blank lines and lines starting with
//! `#` are ignored. Reals are written in shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use super::hog::HogParams;
use super::DetectError;

const MAGIC: &str = "cabwatch-linear-detector v1";

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDetectorModel {
    pub window_width: usize,
    pub window_height: usize,
    pub params: HogParams,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub score_threshold: f64,
}

impl LinearDetectorModel {
    pub fn new(
        window_width: usize,
        window_height: usize,
        params: HogParams,
        weights: Vec<f64>,
        bias: f64,
    ) -> Result<Self, DetectError> {
        let model = Self {
            window_width,
            window_height,
            params,
            weights,
            bias,
            score_threshold: 0.0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_threshold(mut self, score_threshold: f64) -> Self {
        self.score_threshold = score_threshold;
        self
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        let expected = self.params.descriptor_len(self.window_width, self.window_height)?;
        if self.weights.len() != expected {
            return Err(DetectError::Model(format!(
                "{} weights for a {}x{} window, expected {expected}",
                self.weights.len(),
                self.window_width,
                self.window_height
            )));
        }
        if !self.bias.is_finite() || !self.score_threshold.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(DetectError::Model("non-finite weight, bias or threshold".into()));
        }
        Ok(())
    }

    /// Linear score `dot(weights, descriptor) + bias`.
    pub fn score(&self, descriptor: &[f64]) -> f64 {
        self.weights.iter().zip(descriptor).map(|(w, d)| w * d).sum::<f64>() + self.bias
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "window {} {}", self.window_width, self.window_height);
        let _ = writeln!(out, "cell_size {}", p.cell_size);
        let _ = writeln!(out, "block_size {}", p.block_size);
        let _ = writeln!(out, "block_stride {}", p.block_stride);
        let _ = writeln!(out, "bins {}", p.bins);
        let _ = writeln!(out, "signed {}", p.signed);
        let _ = writeln!(out, "clip {:?}", p.clip);
        let _ = writeln!(out, "epsilon {:?}", p.epsilon);
        let _ = writeln!(out, "score_threshold {:?}", self.score_threshold);
        let _ = writeln!(out, "bias {:?}", self.bias);
        let _ = writeln!(out, "weights {}", self.weights.len());
        for w in &self.weights {
            let _ = writeln!(out, "{w:?}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DetectError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (_, magic) = lines
            .next()
            .ok_or_else(|| DetectError::Model("empty model file".into()))?;
        if magic != MAGIC {
            return Err(DetectError::Model(format!("unrecognized header {magic:?}")));
        }

        let mut field = |key: &str| -> Result<(usize, Vec<String>), DetectError> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| DetectError::Model(format!("missing `{key}`")))?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some(k) if k == key => Ok((no, parts.map(str::to_owned).collect())),
                other => Err(DetectError::Model(format!(
                    "line {no}: expected `{key}`, found {:?}",
                    other.unwrap_or("")
                ))),
            }
        };

        fn one<T: std::str::FromStr>(no: usize, key: &str, vals: &[String]) -> Result<T, DetectError> {
            match vals {
                [v] => v
                    .parse()
                    .map_err(|_| DetectError::Model(format!("line {no}: bad value for `{key}`: {v:?}"))),
                _ => Err(DetectError::Model(format!("line {no}: `{key}` takes one value"))),
            }
        }

        let (no, win) = field("window")?;
        let (window_width, window_height) = match win.as_slice() {
            [w, h] => (
                w.parse()
                    .map_err(|_| DetectError::Model(format!("line {no}: bad window width")))?,
                h.parse()
                    .map_err(|_| DetectError::Model(format!("line {no}: bad window height")))?,
            ),
            _ => return Err(DetectError::Model(format!("line {no}: `window` takes two values"))),
        };
        let mut params = HogParams::default();
        let (no, v) = field("cell_size")?;
        params.cell_size = one(no, "cell_size", &v)?;
        let (no, v) = field("block_size")?;
        params.block_size = one(no, "block_size", &v)?;
        let (no, v) = field("block_stride")?;
        params.block_stride = one(no, "block_stride", &v)?;
        let (no, v) = field("bins")?;
        params.bins = one(no, "bins", &v)?;
        let (no, v) = field("signed")?;
        params.signed = one(no, "signed", &v)?;
        let (no, v) = field("clip")?;
        params.clip = one(no, "clip", &v)?;
        let (no, v) = field("epsilon")?;
        params.epsilon = one(no, "epsilon", &v)?;
        let (no, v) = field("score_threshold")?;
        let score_threshold: f64 = one(no, "score_threshold", &v)?;
        let (no, v) = field("bias")?;
        let bias: f64 = one(no, "bias", &v)?;
        let (no, v) = field("weights")?;
        let count: usize = one(no, "weights", &v)?;

        let mut weights = Vec::with_capacity(count);
        for (no, line) in lines.by_ref().take(count) {
            weights.push(
                line.parse::<f64>()
                    .map_err(|_| DetectError::Model(format!("line {no}: bad weight {line:?}")))?,
            );
        }
        if weights.len() != count {
            return Err(DetectError::Model(format!(
                "declared {count} weights, found {}",
                weights.len()
            )));
        }
        if let Some((no, _)) = lines.next() {
            return Err(DetectError::Model(format!("line {no}: trailing content after weights")));
        }

        let model = Self {
            window_width,
            window_height,
            params,
            weights,
            bias,
            score_threshold,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, DetectError> {
        let text = std::fs::read_to_string(path).map_err(|e| DetectError::Model(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), DetectError> {
        std::fs::write(path, self.to_text()).map_err(|e| DetectError::Model(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> LinearDetectorModel {
        let params = HogParams {
            cell_size: 4,
            bins: 3,
            ..HogParams::default()
        };
        let n = params.descriptor_len(8, 8).unwrap();
        let weights = (0..n).map(|i| i as f64 * 0.1 - 0.3).collect();
        LinearDetectorModel::new(8, 8, params, weights, -1.25)
            .unwrap()
            .with_threshold(0.5)
    }

    #[test]
    fn text_round_trip() {
        let m = small_model();
        let parsed = LinearDetectorModel::parse(&m.to_text()).unwrap();
        assert_eq!(parsed, m);
    }

    #[test]
    fn weight_count_must_match_window() {
        let err = LinearDetectorModel::new(64, 64, HogParams::default(), vec![0.0; 10], 0.0);
        assert!(matches!(err, Err(DetectError::Model(_))));
    }

    #[test]
    fn rejects_out_of_order_fields_and_truncation() {
        let text = small_model().to_text();
        let swapped = text.replacen("cell_size", "bins", 1);
        assert!(LinearDetectorModel::parse(&swapped).is_err());
        let truncated: String = text.lines().take(14).collect::<Vec<_>>().join("\n");
        assert!(LinearDetectorModel::parse(&truncated).is_err());
        assert!(LinearDetectorModel::parse("not a model").is_err());
        let extra = format!("{text}0.5\n");
        assert!(LinearDetectorModel::parse(&extra).is_err());
    }

    #[test]
    fn comments_are_ignored() {
        let text = format!("# trained on nothing\n\n{}", small_model().to_text());
        assert!(LinearDetectorModel::parse(&text).is_ok());
    }
}
