//! Operator enrollment database and nearest-neighbour matching.
//!
//! One reference embedding per operator. A query matches the nearest record
//! when its Euclidean distance is within the policy threshold; otherwise the
//! face is unknown.
//!
//! # File format
//!
//! A single JSON document, pretty-printed with two-space indentation and
//! fields in this order:
//!
//! ```text
//! {
//!   "format": "cabwatch-gallery/1",
//!   "version": <u64>,
//!   "records": [
//!     {
//!       "operator_id": <string>,
//!       "display_name": <string>,
//!       "enrolled_at": <RFC 3339 UTC, "Z" suffix>,
//!       "source_image_ref": <string>,
//!       "embedding": [<128 reals>]
//!     }, ...
//!   ]
//! }
//! ```
//!
//! Reals are written in shortest round-trip decimal form, so loading a saved
//! gallery reproduces every embedding bit for bit.

use std::collections::HashSet;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{distance, EmbedError, Embedding};

pub const GALLERY_FORMAT: &str = "cabwatch-gallery/1";
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error)]
pub enum GalleryError {
    #[error("operator {0:?} is already enrolled (use replace to re-enroll)")]
    AlreadyEnrolled(String),
    #[error("match threshold must lie in (0, 2], got {0}")]
    Threshold(f64),
    #[error("corrupt gallery: record {index} ({operator_id:?}): {reason}")]
    CorruptRecord {
        index: usize,
        operator_id: String,
        reason: String,
    },
    #[error("corrupt gallery: {0}")]
    Corrupt(String),
    #[error("gallery i/o on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorRecord {
    pub operator_id: String,
    pub display_name: String,
    pub embedding: Embedding,
    pub enrolled_at: DateTime<Utc>,
    pub source_image_ref: String,
}

/// Metadata supplied at enrollment.
#[derive(Debug, Clone, PartialEq)]
pub struct Enrollment {
    pub operator_id: String,
    pub display_name: String,
    pub source_image_ref: String,
    pub enrolled_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gallery {
    records: Vec<OperatorRecord>,
    version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPolicy {
    threshold: f64,
}

impl MatchPolicy {
    pub fn new(threshold: f64) -> Result<Self, GalleryError> {
        if !(threshold > 0.0 && threshold <= 2.0) {
            return Err(GalleryError::Threshold(threshold));
        }
        Ok(Self { threshold })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

impl Default for MatchPolicy {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_MATCH_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatchResult {
    Matched {
        operator_id: String,
        distance: f64,
    },
    /// No record within the threshold; `best_distance` is `None` for an empty gallery.
    Unknown {
        best_distance: Option<f64>,
    },
}

impl MatchResult {
    pub fn operator_id(&self) -> Option<&str> {
        match self {
            MatchResult::Matched { operator_id, .. } => Some(operator_id),
            MatchResult::Unknown { .. } => None,
        }
    }

    pub fn distance(&self) -> Option<f64> {
        match self {
            MatchResult::Matched { distance, .. } => Some(*distance),
            MatchResult::Unknown { best_distance } => *best_distance,
        }
    }

    pub fn is_known(&self) -> bool {
        matches!(self, MatchResult::Matched { .. })
    }
}

impl Gallery {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[OperatorRecord] {
        &self.records
    }

    pub fn get(&self, operator_id: &str) -> Option<&OperatorRecord> {
        self.records.iter().find(|r| r.operator_id == operator_id)
    }

    /// Adds an operator. With `replace`, an existing record for the same id is
    /// overwritten in place; without it, a duplicate id is an error.
    pub fn enroll(&mut self, meta: Enrollment, embedding: Embedding, replace: bool) -> Result<(), GalleryError> {
        let record = OperatorRecord {
            operator_id: meta.operator_id,
            display_name: meta.display_name,
            embedding,
            enrolled_at: meta.enrolled_at,
            source_image_ref: meta.source_image_ref,
        };
        match self.records.iter_mut().find(|r| r.operator_id == record.operator_id) {
            Some(_) if !replace => return Err(GalleryError::AlreadyEnrolled(record.operator_id)),
            Some(existing) => *existing = record,
            None => self.records.push(record),
        }
        self.version += 1;
        Ok(())
    }

    /// Removes an operator; returns whether a record was removed.
    pub fn remove(&mut self, operator_id: &str) -> bool {
        let before = self.records.len();
        self.records.retain(|r| r.operator_id != operator_id);
        let removed = self.records.len() != before;
        if removed {
            self.version += 1;
        }
        removed
    }

    /// Nearest record, ties broken by the lexicographically smallest id.
    pub fn nearest(&self, query: &Embedding) -> Option<(&OperatorRecord, f64)> {
        self.records
            .iter()
            .map(|r| (r, distance(query, &r.embedding)))
            .min_by(|(ra, da), (rb, db)| da.total_cmp(db).then_with(|| ra.operator_id.cmp(&rb.operator_id)))
    }

    pub fn match_embedding(&self, query: &Embedding, policy: &MatchPolicy) -> MatchResult {
        match self.nearest(query) {
            None => MatchResult::Unknown { best_distance: None },
            Some((record, d)) if d <= policy.threshold => MatchResult::Matched {
                operator_id: record.operator_id.clone(),
                distance: d,
            },
            Some((_, d)) => MatchResult::Unknown { best_distance: Some(d) },
        }
    }

    pub fn to_json(&self) -> String {
        let doc = GalleryDoc {
            format: GALLERY_FORMAT.to_string(),
            version: self.version,
            records: self
                .records
                .iter()
                .map(|r| RecordDoc {
                    operator_id: r.operator_id.clone(),
                    display_name: r.display_name.clone(),
                    enrolled_at: r.enrolled_at,
                    source_image_ref: r.source_image_ref.clone(),
                    embedding: r.embedding.values().to_vec(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("gallery serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, GalleryError> {
        let doc: GalleryDoc = serde_json::from_str(text).map_err(|e| GalleryError::Corrupt(e.to_string()))?;
        if doc.format != GALLERY_FORMAT {
            return Err(GalleryError::Corrupt(format!("unsupported format {:?}", doc.format)));
        }
        let mut seen = HashSet::new();
        let mut records = Vec::with_capacity(doc.records.len());
        for (index, r) in doc.records.into_iter().enumerate() {
            let corrupt = |reason: String| GalleryError::CorruptRecord {
                index,
                operator_id: r.operator_id.clone(),
                reason,
            };
            if !seen.insert(r.operator_id.clone()) {
                return Err(corrupt("duplicate operator_id".into()));
            }
            let embedding = Embedding::new(r.embedding.clone()).map_err(|e: EmbedError| corrupt(e.to_string()))?;
            records.push(OperatorRecord {
                operator_id: r.operator_id,
                display_name: r.display_name,
                embedding,
                enrolled_at: r.enrolled_at,
                source_image_ref: r.source_image_ref,
            });
        }
        Ok(Self {
            records,
            version: doc.version,
        })
    }

    /// Writes atomically (temp file + rename).
    pub fn save(&self, path: &Path) -> Result<(), GalleryError> {
        let io = |source| GalleryError::Io {
            path: path.display().to_string(),
            source,
        };
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, GalleryError> {
        let text = std::fs::read_to_string(path).map_err(|source| GalleryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct GalleryDoc {
    format: String,
    version: u64,
    records: Vec<RecordDoc>,
}

#[derive(Serialize, Deserialize)]
struct RecordDoc {
    operator_id: String,
    display_name: String,
    #[serde(with = "crate::timefmt")]
    enrolled_at: DateTime<Utc>,
    source_image_ref: String,
    embedding: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::EMBEDDING_DIM;
    use chrono::TimeZone;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Embedding {
        let v: Vec<f64> = (0..EMBEDDING_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        Embedding::from_raw(&v).unwrap()
    }

    fn meta(id: &str) -> Enrollment {
        Enrollment {
            operator_id: id.into(),
            display_name: format!("Operator {id}"),
            source_image_ref: format!("enroll/{id}.png"),
            enrolled_at: Utc.with_ymd_and_hms(2017, 5, 1, 9, 30, 0).unwrap(),
        }
    }

    fn gallery_of(n: usize, rng: &mut ChaCha8Rng) -> Gallery {
        let mut g = Gallery::new();
        for i in 0..n {
            g.enroll(meta(&format!("op{i:02}")), random_unit(rng), false).unwrap();
        }
        g
    }

    #[test]
    fn enroll_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Gallery::new();
        g.enroll(meta("a"), random_unit(&mut rng), false).unwrap();
        assert_eq!((g.len(), g.version()), (1, 1));
        assert!(matches!(
            g.enroll(meta("a"), random_unit(&mut rng), false),
            Err(GalleryError::AlreadyEnrolled(_))
        ));
        assert_eq!(g.version(), 1);
        let replacement = random_unit(&mut rng);
        g.enroll(meta("a"), replacement.clone(), true).unwrap();
        assert_eq!((g.len(), g.version()), (1, 2));
        assert_eq!(g.get("a").unwrap().embedding, replacement);
        assert!(g.remove("a"));
        assert!(!g.remove("a"));
        assert_eq!(g.version(), 3);
    }

    #[test]
    fn sixteen_operators() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = gallery_of(16, &mut rng);
        assert_eq!(g.len(), 16);
        for i in 0..16 {
            assert!(g.get(&format!("op{i:02}")).is_some());
        }
    }

    #[test]
    fn match_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let empty = Gallery::new();
        let q = random_unit(&mut rng);
        assert_eq!(
            empty.match_embedding(&q, &MatchPolicy::default()),
            MatchResult::Unknown { best_distance: None }
        );
        let g = gallery_of(5, &mut rng);
        let enrolled = g.get("op03").unwrap().embedding.clone();
        assert_eq!(
            g.match_embedding(&enrolled, &MatchPolicy::default()),
            MatchResult::Matched {
                operator_id: "op03".into(),
                distance: 0.0
            }
        );
        // random directions sit near √2 from everything
        assert!(matches!(
            g.match_embedding(&random_unit(&mut rng), &MatchPolicy::default()),
            MatchResult::Unknown { best_distance: Some(d) } if d > 0.9
        ));
    }

    #[test]
    fn ties_go_to_smallest_id() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = random_unit(&mut rng);
        let mut g = Gallery::new();
        g.enroll(meta("zed"), e.clone(), false).unwrap();
        g.enroll(meta("amy"), e.clone(), false).unwrap();
        assert_eq!(
            g.match_embedding(&e, &MatchPolicy::default()).operator_id(),
            Some("amy")
        );
    }

    #[test]
    fn policy_bounds() {
        assert!(MatchPolicy::new(0.0).is_err());
        assert!(MatchPolicy::new(2.0).is_ok());
        assert!(MatchPolicy::new(2.01).is_err());
        assert!(MatchPolicy::new(f64::NAN).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = gallery_of(3, &mut rng);
        assert_eq!(Gallery::from_json(&g.to_json()).unwrap(), g);
        let g16 = gallery_of(16, &mut rng);
        let back = Gallery::from_json(&g16.to_json()).unwrap();
        for _ in 0..20 {
            let q = random_unit(&mut rng);
            for (a, b) in g16.records().iter().zip(back.records()) {
                assert!((distance(&q, &a.embedding) - distance(&q, &b.embedding)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn corrupt_files_identify_the_record() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = gallery_of(2, &mut rng);
        let mut doc: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
        doc["records"][1]["embedding"].as_array_mut().unwrap().pop();
        match Gallery::from_json(&doc.to_string()) {
            Err(GalleryError::CorruptRecord {
                index: 1,
                operator_id,
                reason,
            }) => {
                assert_eq!(operator_id, "op01");
                assert!(reason.contains("127"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut dup: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
        dup["records"][1]["operator_id"] = "op00".into();
        assert!(matches!(
            Gallery::from_json(&dup.to_string()),
            Err(GalleryError::CorruptRecord { index: 1, .. })
        ));
        assert!(matches!(Gallery::from_json("{"), Err(GalleryError::Corrupt(_))));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gallery.json");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = gallery_of(4, &mut rng);
        g.save(&path).unwrap();
        assert_eq!(Gallery::load(&path).unwrap(), g);
        assert!(matches!(
            Gallery::load(&dir.path().join("missing.json")),
            Err(GalleryError::Io { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn raising_threshold_never_changes_identity(seed in any::<u64>(), lo in 0.05..1.5f64, bump in 0.0..0.5f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = gallery_of(8, &mut rng);
            // queries near an enrolled record, with varying noise
            let base = g.records()[(seed % 8) as usize].embedding.values().to_vec();
            let noise: Vec<f64> = base.iter().map(|b| b + rng.random_range(-0.15..0.15)).collect();
            let q = Embedding::from_raw(&noise).unwrap();
            let low = g.match_embedding(&q, &MatchPolicy::new(lo).unwrap());
            let high = g.match_embedding(&q, &MatchPolicy::new((lo + bump).min(2.0)).unwrap());
            if let MatchResult::Matched { operator_id, .. } = &low {
                prop_assert_eq!(high.operator_id(), Some(operator_id.as_str()));
            }
            if let (MatchResult::Matched { operator_id, distance }, Some((nearest, nd))) = (&high, g.nearest(&q)) {
                prop_assert_eq!(operator_id, &nearest.operator_id);
                prop_assert_eq!(*distance, nd);
            }
        }
    }
}
