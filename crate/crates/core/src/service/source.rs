//! Frame sources and time-based sampling.
//!
//! A directory source holds image files named `<unix_epoch_seconds>_<seq>.png`
//! (or `.jpg` / `.jpeg`); frames are ordered by `(epoch, seq)` and the file
//! name is the frame reference. Other files in the directory are ignored.
//!
//! A manifest source is a text file with one frame per line:
//!
//! ```text
//! <epoch_seconds[.fraction]> <frame_ref> <image_path | blank:WIDTHxHEIGHT>
//! ```
//!
//! Image paths are relative to the manifest. `blank:` frames are uniform
//! black rasters, useful with annotation-backed detectors.

use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeDelta, Utc};
use thiserror::Error;

use crate::imaging::{to_grayscale, GrayImage};
use crate::timefmt;

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("reading {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("frame file name {0:?} is not <epoch>_<seq>.<png|jpg>")]
    FileName(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("frame {frame_ref} at {got} precedes the previous frame at {last}")]
    OutOfOrder {
        frame_ref: String,
        last: String,
        got: String,
    },
    #[error("sample interval must be positive")]
    Interval,
    #[error("decoding {frame_ref}: {reason}")]
    Decode { frame_ref: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum FramePayload {
    File(PathBuf),
    Blank { width: usize, height: usize },
    Gray(GrayImage),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceFrame {
    pub timestamp: DateTime<Utc>,
    pub frame_ref: String,
    pub payload: FramePayload,
}

impl SourceFrame {
    /// Decodes the payload to grayscale. Color images go through the BT.601
    /// luma conversion.
    pub fn decode(&self) -> Result<GrayImage, SourceError> {
        let fail = |reason: String| SourceError::Decode {
            frame_ref: self.frame_ref.clone(),
            reason,
        };
        match &self.payload {
            FramePayload::Gray(img) => Ok(img.clone()),
            FramePayload::Blank { width, height } => {
                GrayImage::filled(*width, *height, 0).map_err(|e| fail(e.to_string()))
            }
            FramePayload::File(path) => {
                let rgb = image::open(path).map_err(|e| fail(e.to_string()))?.to_rgb8();
                let (w, h) = rgb.dimensions();
                to_grayscale(w as usize, h as usize, rgb.as_raw()).map_err(|e| fail(e.to_string()))
            }
        }
    }
}

/// Parses `<epoch>_<seq>.<ext>` into `(epoch, seq)`.
pub fn parse_frame_file_name(name: &str) -> Option<(i64, u64)> {
    let (stem, ext) = name.rsplit_once('.')?;
    if !matches!(ext.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg") {
        return None;
    }
    let (epoch, seq) = stem.split_once('_')?;
    let all_digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(epoch) || !all_digits(seq) {
        return None;
    }
    Some((epoch.parse().ok()?, seq.parse().ok()?))
}

fn is_image_name(name: &str) -> bool {
    name.rsplit_once('.')
        .is_some_and(|(_, ext)| matches!(ext.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

/// Lists a frame directory in timestamp order. Payloads are decoded lazily.
pub fn directory_source(dir: &Path) -> Result<Vec<SourceFrame>, SourceError> {
    let io = |source| SourceError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut keyed = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !is_image_name(&name) {
            continue;
        }
        let (epoch, seq) = parse_frame_file_name(&name).ok_or_else(|| SourceError::FileName(name.clone()))?;
        let timestamp = DateTime::from_timestamp(epoch, 0).ok_or_else(|| SourceError::FileName(name.clone()))?;
        keyed.push((
            (epoch, seq),
            SourceFrame {
                timestamp,
                frame_ref: name,
                payload: FramePayload::File(entry.path()),
            },
        ));
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.frame_ref.cmp(&b.1.frame_ref)));
    Ok(keyed.into_iter().map(|(_, f)| f).collect())
}

/// Parses `<secs>[.<fraction>]` exactly, to nanosecond resolution.
fn parse_epoch(text: &str) -> Option<DateTime<Utc>> {
    let (whole, frac) = text.split_once('.').unwrap_or((text, ""));
    if whole.is_empty() || frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let secs: i64 = whole.parse().ok()?;
    let nanos: u32 = if frac.is_empty() {
        0
    } else {
        format!("{frac:0<9}").parse().ok()?
    };
    if secs < 0 && nanos > 0 {
        return None;
    }
    DateTime::from_timestamp(secs, nanos)
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<SourceFrame>, SourceError> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| SourceError::Manifest { line: no + 1, reason };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [ts, frame_ref, target] = fields[..] else {
            return Err(bad("expected <epoch> <frame_ref> <path|blank:WxH>".into()));
        };
        let timestamp = parse_epoch(ts).ok_or_else(|| bad(format!("bad timestamp {ts:?}")))?;
        let payload = match target.strip_prefix("blank:") {
            Some(dims) => {
                let parsed = dims
                    .split_once('x')
                    .and_then(|(w, h)| Some((w.parse::<usize>().ok()?, h.parse::<usize>().ok()?)));
                match parsed {
                    Some((width, height)) if width > 0 && height > 0 => FramePayload::Blank { width, height },
                    _ => return Err(bad(format!("bad blank size {dims:?}"))),
                }
            }
            None => FramePayload::File(base.join(target)),
        };
        out.push(SourceFrame {
            timestamp,
            frame_ref: frame_ref.to_string(),
            payload,
        });
    }
    Ok(out)
}

pub fn manifest_source(path: &Path) -> Result<Vec<SourceFrame>, SourceError> {
    let text = std::fs::read_to_string(path).map_err(|source| SourceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text, path.parent().unwrap_or_else(|| Path::new(".")))
}

/// Iterator adapter that keeps the first frame and then the first frame at
/// or after the previously kept timestamp plus the interval. Yields an
/// error, then ends, when timestamps go backwards.
pub struct Sampler<I> {
    inner: I,
    interval: TimeDelta,
    last_seen: Option<(DateTime<Utc>, String)>,
    last_emitted: Option<DateTime<Utc>>,
    done: bool,
}

pub fn sample_frames<I>(source: I, interval: TimeDelta) -> Result<Sampler<I::IntoIter>, SourceError>
where
    I: IntoIterator<Item = Result<SourceFrame, SourceError>>,
{
    if interval <= TimeDelta::zero() {
        return Err(SourceError::Interval);
    }
    Ok(Sampler {
        inner: source.into_iter(),
        interval,
        last_seen: None,
        last_emitted: None,
        done: false,
    })
}

impl<I> Iterator for Sampler<I>
where
    I: Iterator<Item = Result<SourceFrame, SourceError>>,
{
    type Item = Result<SourceFrame, SourceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            let frame = match self.inner.next()? {
                Ok(f) => f,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            };
            if let Some((last, last_ref)) = &self.last_seen {
                if frame.timestamp < *last {
                    self.done = true;
                    return Some(Err(SourceError::OutOfOrder {
                        frame_ref: frame.frame_ref,
                        last: format!("{} ({last_ref})", timefmt::format(last)),
                        got: timefmt::format(&frame.timestamp),
                    }));
                }
            }
            self.last_seen = Some((frame.timestamp, frame.frame_ref.clone()));
            let due = self
                .last_emitted
                .map_or(true, |prev| frame.timestamp >= prev + self.interval);
            if due {
                self.last_emitted = Some(frame.timestamp);
                return Some(Ok(frame));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame_at_nanos(ns: i64) -> Result<SourceFrame, SourceError> {
        Ok(SourceFrame {
            timestamp: DateTime::from_timestamp_nanos(ns),
            frame_ref: format!("f{ns}"),
            payload: FramePayload::Blank { width: 4, height: 4 },
        })
    }

    fn sampled(nanos: &[i64], interval: TimeDelta) -> Vec<i64> {
        sample_frames(nanos.iter().map(|&n| frame_at_nanos(n)), interval)
            .unwrap()
            .map(|f| f.unwrap().timestamp.timestamp_nanos_opt().unwrap())
            .collect()
    }

    #[test]
    fn thirty_fps_keeps_every_600th() {
        let ns: Vec<i64> = (0..=3000i64).map(|i| i * 1_000_000_000 / 30).collect();
        let got = sampled(&ns, TimeDelta::seconds(20));
        let want: Vec<i64> = (0..=3000i64).step_by(600).map(|i| i * 1_000_000_000 / 30).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn sparse_and_empty_sources() {
        let ns: Vec<i64> = (0..5).map(|i| i * 60_000_000_000).collect();
        assert_eq!(sampled(&ns, TimeDelta::seconds(20)), ns);
        assert!(sampled(&[], TimeDelta::seconds(20)).is_empty());
        assert!(sample_frames(Vec::new(), TimeDelta::zero()).is_err());
    }

    #[test]
    fn out_of_order_stops_the_stream() {
        let items = [0i64, 30_000_000_000, 10_000_000_000, 90_000_000_000];
        let out: Vec<_> = sample_frames(items.iter().map(|&n| frame_at_nanos(n)), TimeDelta::seconds(20))
            .unwrap()
            .collect();
        assert_eq!(out.len(), 3);
        assert!(matches!(out[2], Err(SourceError::OutOfOrder { .. })));
    }

    #[test]
    fn file_names() {
        assert_eq!(parse_frame_file_name("1495000000_12.png"), Some((1_495_000_000, 12)));
        assert_eq!(parse_frame_file_name("1495000000_0.JPG"), Some((1_495_000_000, 0)));
        assert_eq!(parse_frame_file_name("1495000000.png"), None);
        assert_eq!(parse_frame_file_name("x_1.png"), None);
        assert_eq!(parse_frame_file_name("1_1.gif"), None);
        assert_eq!(parse_frame_file_name("-1_1.png"), None);
    }

    #[test]
    fn manifest_parsing() {
        let text = "# comment\n10.5 a blank:8x6\n11 b img/b.png\n";
        let frames = parse_manifest(text, Path::new("/data")).unwrap();
        assert_eq!(frames[0].timestamp, DateTime::from_timestamp(10, 500_000_000).unwrap());
        assert_eq!(frames[0].payload, FramePayload::Blank { width: 8, height: 6 });
        assert_eq!(frames[1].payload, FramePayload::File("/data/img/b.png".into()));
        assert_eq!(frames[0].decode().unwrap().width(), 8);
        for bad in ["1 a", "x a blank:2x2", "1 a blank:0x2", "1.0000000001 a blank:2x2"] {
            assert!(parse_manifest(bad, Path::new(".")).is_err(), "{bad}");
        }
    }

    #[test]
    fn directory_order_and_decode() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::RgbImage::from_pixel(5, 4, image::Rgb([255, 0, 0]));
        for name in ["20_1.png", "20_0.png", "3_7.png"] {
            img.save(dir.path().join(name)).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let frames = directory_source(dir.path()).unwrap();
        let refs: Vec<_> = frames.iter().map(|f| f.frame_ref.as_str()).collect();
        assert_eq!(refs, ["3_7.png", "20_0.png", "20_1.png"]);
        let gray = frames[0].decode().unwrap();
        assert_eq!((gray.width(), gray.height()), (5, 4));
        assert!(gray.data().iter().all(|&v| v == 76));

        std::fs::write(dir.path().join("bad.png"), "not an image").unwrap();
        assert!(matches!(directory_source(dir.path()), Err(SourceError::FileName(_))));
    }

    #[test]
    fn undecodable_file_is_a_frame_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("1_0.png");
        std::fs::write(&path, "garbage").unwrap();
        let frame = SourceFrame {
            timestamp: DateTime::from_timestamp(1, 0).unwrap(),
            frame_ref: "1_0.png".into(),
            payload: FramePayload::File(path),
        };
        assert!(matches!(frame.decode(), Err(SourceError::Decode { .. })));
    }

    proptest! {
        #[test]
        fn sampled_count_bounded(mut gaps in proptest::collection::vec(0i64..50_000, 0..300), interval_ms in 1i64..20_000) {
            let mut t = 0i64;
            let ns: Vec<i64> = gaps.iter_mut().map(|g| { t += *g * 1_000_000; t }).collect();
            let interval = TimeDelta::milliseconds(interval_ms);
            let got = sampled(&ns, interval);
            if let (Some(first), Some(last)) = (ns.first(), ns.last()) {
                let span = (last - first) as f64;
                let bound = (span / (interval_ms as f64 * 1e6)).ceil() as usize + 1;
                prop_assert!(got.len() <= bound);
                prop_assert_eq!(got[0], *first);
            }
            for w in got.windows(2) {
                prop_assert!(w[1] - w[0] >= interval_ms * 1_000_000);
            }
        }
    }
}
