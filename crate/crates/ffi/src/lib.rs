//! C ABI for the cabwatch engine.
//!
//! Every fallible function returns a [`CwStatus`]; on failure a message is
//! available from [`cw_last_error_message`] on the same thread. Objects are
//! opaque handles created by `*_new` / `*_load` and released with the
//! matching `*_free`. Strings returned through `char **` out-parameters are
//! owned by the caller and released with [`cw_string_free`].
//!
//! Timestamps cross the boundary as nanoseconds since the Unix epoch (UTC).

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use chrono::{DateTime, NaiveDate, TimeDelta, Utc};

use cabwatch::detect::{hog_descriptor, HogParams};
use cabwatch::embed::{self, Embedding, TripletConfig};
use cabwatch::gallery::{Enrollment, Gallery, GalleryError, MatchPolicy, MatchResult};
use cabwatch::imaging::GrayImage;
use cabwatch::report::{generate_report, render_report, ReportFormat};
use cabwatch::tracker::{read_observation_log, replay, Observation, Tracker, TrackerConfig, TrackerError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CwStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Corrupt = 4,
    AlreadyEnrolled = 5,
    OutOfOrder = 6,
    NotFound = 7,
    BufferTooSmall = 8,
    Panic = 99,
}

/// Opaque operator gallery.
pub struct CwGallery {
    inner: Gallery,
}

/// Opaque shift tracker.
pub struct CwTracker {
    inner: Tracker,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CwStatus, String);

impl Failure {
    fn new(status: CwStatus, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }
}

impl From<GalleryError> for Failure {
    fn from(e: GalleryError) -> Self {
        let status = match &e {
            GalleryError::AlreadyEnrolled(_) => CwStatus::AlreadyEnrolled,
            GalleryError::Threshold(_) => CwStatus::InvalidArgument,
            GalleryError::CorruptRecord { .. } | GalleryError::Corrupt(_) => CwStatus::Corrupt,
            GalleryError::Io { .. } => CwStatus::Io,
        };
        Failure(status, error_chain(&e))
    }
}

impl From<TrackerError> for Failure {
    fn from(e: TrackerError) -> Self {
        let status = match &e {
            TrackerError::OutOfOrder { .. } => CwStatus::OutOfOrder,
            TrackerError::InvalidClock { .. } | TrackerError::Config(_) => CwStatus::InvalidArgument,
            TrackerError::Log { .. } => CwStatus::Corrupt,
            TrackerError::Io(_) => CwStatus::Io,
        };
        Failure(status, error_chain(&e))
    }
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut msg = e.to_string();
    let mut cur = e.source();
    while let Some(s) = cur {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        cur = s.source();
    }
    msg
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, converting failures and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            CwStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            CwStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(CwStatus::NullArgument, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(CwStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::new(CwStatus::NullArgument, format!("{name} is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(CwStatus::NullArgument, format!("{name} is NULL")))
}

unsafe fn embedding_arg(p: *const f64, len: usize, name: &str) -> Result<Embedding, Failure> {
    let values = slice_arg(p, len, name)?;
    Embedding::new(values.to_vec()).map_err(|e| Failure::new(CwStatus::InvalidArgument, format!("{name}: {e}")))
}

fn timestamp(nanos: i64) -> DateTime<Utc> {
    DateTime::from_timestamp_nanos(nanos)
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::new(CwStatus::InvalidArgument, "string contains NUL"))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next cabwatch call on the same thread.
#[no_mangle]
pub extern "C" fn cw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn cw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Length of every embedding accepted by this library.
#[no_mangle]
pub extern "C" fn cw_embedding_dim() -> usize {
    embed::EMBEDDING_DIM
}

#[no_mangle]
pub unsafe extern "C" fn cw_gallery_new(out: *mut *mut CwGallery) -> CwStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(CwGallery { inner: Gallery::new() }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cw_gallery_load(path: *const c_char, out: *mut *mut CwGallery) -> CwStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let inner = Gallery::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(CwGallery { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cw_gallery_save(gallery: *const CwGallery, path: *const c_char) -> CwStatus {
    guard(|| {
        let g = gallery
            .as_ref()
            .ok_or_else(|| Failure::new(CwStatus::NullArgument, "gallery is NULL"))?;
        g.inner.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Number of records; 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn cw_gallery_len(gallery: *const CwGallery) -> usize {
    gallery.as_ref().map_or(0, |g| g.inner.len())
}

/// Enrolls a unit-length embedding of `cw_embedding_dim()` values.
#[no_mangle]
pub unsafe extern "C" fn cw_gallery_enroll(
    gallery: *mut CwGallery,
    operator_id: *const c_char,
    display_name: *const c_char,
    source_image_ref: *const c_char,
    enrolled_at_ns: i64,
    embedding: *const f64,
    len: usize,
    replace: bool,
) -> CwStatus {
    guard(|| {
        let g = out_arg(gallery, "gallery")?;
        let meta = Enrollment {
            operator_id: str_arg(operator_id, "operator_id")?.to_string(),
            display_name: str_arg(display_name, "display_name")?.to_string(),
            source_image_ref: str_arg(source_image_ref, "source_image_ref")?.to_string(),
            enrolled_at: timestamp(enrolled_at_ns),
        };
        let emb = embedding_arg(embedding, len, "embedding")?;
        g.inner.enroll(meta, emb, replace)?;
        Ok(())
    })
}

/// Matches a query embedding. On success `*matched` is set; when matched,
/// `*operator_id` receives a caller-owned string, otherwise NULL.
/// `*distance` is the nearest record's distance, or NaN for an empty gallery.
#[no_mangle]
pub unsafe extern "C" fn cw_gallery_match(
    gallery: *const CwGallery,
    query: *const f64,
    len: usize,
    threshold: f64,
    matched: *mut bool,
    distance: *mut f64,
    operator_id: *mut *mut c_char,
) -> CwStatus {
    guard(|| {
        let g = gallery
            .as_ref()
            .ok_or_else(|| Failure::new(CwStatus::NullArgument, "gallery is NULL"))?;
        let (matched, distance, operator_id) = (
            out_arg(matched, "matched")?,
            out_arg(distance, "distance")?,
            out_arg(operator_id, "operator_id")?,
        );
        let q = embedding_arg(query, len, "query")?;
        let policy = MatchPolicy::new(threshold)?;
        match g.inner.match_embedding(&q, &policy) {
            MatchResult::Matched {
                operator_id: id,
                distance: d,
            } => {
                *operator_id = into_c_string(id)?;
                *matched = true;
                *distance = d;
            }
            MatchResult::Unknown { best_distance } => {
                *operator_id = ptr::null_mut();
                *matched = false;
                *distance = best_distance.unwrap_or(f64::NAN);
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cw_gallery_free(gallery: *mut CwGallery) {
    if !gallery.is_null() {
        drop(Box::from_raw(gallery));
    }
}

/// Euclidean distance between two equal-length vectors.
#[no_mangle]
pub unsafe extern "C" fn cw_distance(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> CwStatus {
    guard(|| {
        let (a, b) = (slice_arg(a, len, "a")?, slice_arg(b, len, "b")?);
        *out_arg(out, "out")? = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        Ok(())
    })
}

/// Scales `v` to unit length in place.
#[no_mangle]
pub unsafe extern "C" fn cw_l2_normalize(v: *mut f64, len: usize) -> CwStatus {
    guard(|| {
        if v.is_null() {
            return Err(Failure::new(CwStatus::NullArgument, "v is NULL"));
        }
        let v = std::slice::from_raw_parts_mut(v, len);
        let unit = embed::l2_normalize(v).map_err(|e| Failure::new(CwStatus::InvalidArgument, e.to_string()))?;
        v.copy_from_slice(&unit);
        Ok(())
    })
}

/// `max(0, |a-p|² - |a-n|² + margin)` over unit embeddings.
#[no_mangle]
pub unsafe extern "C" fn cw_triplet_loss(
    anchor: *const f64,
    positive: *const f64,
    negative: *const f64,
    len: usize,
    margin: f64,
    out: *mut f64,
) -> CwStatus {
    guard(|| {
        let a = embedding_arg(anchor, len, "anchor")?;
        let p = embedding_arg(positive, len, "positive")?;
        let n = embedding_arg(negative, len, "negative")?;
        let cfg = TripletConfig::new(margin).map_err(|e| Failure::new(CwStatus::InvalidArgument, e.to_string()))?;
        *out_arg(out, "out")? = embed::triplet_loss(&a, &p, &n, &cfg);
        Ok(())
    })
}

/// Descriptor length for a `width`×`height` window under default HOG
/// parameters, or 0 when the window is too small.
#[no_mangle]
pub extern "C" fn cw_hog_descriptor_len(width: usize, height: usize) -> usize {
    HogParams::default().descriptor_len(width, height).unwrap_or(0)
}

/// HOG descriptor of a row-major 8-bit grayscale window, default parameters.
/// `*written` receives the descriptor length; `CwStatus::BufferTooSmall` is
/// returned (with `*written` set) when `out_len` is insufficient.
#[no_mangle]
pub unsafe extern "C" fn cw_hog_descriptor(
    pixels: *const u8,
    width: usize,
    height: usize,
    out: *mut f64,
    out_len: usize,
    written: *mut usize,
) -> CwStatus {
    guard(|| {
        let written = out_arg(written, "written")?;
        let px = slice_arg(pixels, width.saturating_mul(height), "pixels")?;
        let img = GrayImage::new(width, height, px.to_vec())
            .map_err(|e| Failure::new(CwStatus::InvalidArgument, e.to_string()))?;
        let d = hog_descriptor(&img, &HogParams::default())
            .map_err(|e| Failure::new(CwStatus::InvalidArgument, e.to_string()))?;
        *written = d.values.len();
        if out_len < d.values.len() {
            return Err(Failure::new(
                CwStatus::BufferTooSmall,
                format!("need {} values, buffer holds {out_len}", d.values.len()),
            ));
        }
        if out.is_null() {
            return Err(Failure::new(CwStatus::NullArgument, "out is NULL"));
        }
        std::slice::from_raw_parts_mut(out, d.values.len()).copy_from_slice(&d.values);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cw_tracker_new(
    shift_limit_secs: i64,
    gap_tolerance_secs: i64,
    trespass_throttle_secs: i64,
    out: *mut *mut CwTracker,
) -> CwStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = Tracker::new(TrackerConfig {
            shift_limit: TimeDelta::seconds(shift_limit_secs),
            gap_tolerance: TimeDelta::seconds(gap_tolerance_secs),
            trespass_throttle: TimeDelta::seconds(trespass_throttle_secs),
        })?;
        *out = Box::into_raw(Box::new(CwTracker { inner }));
        Ok(())
    })
}

/// Ingests one sighting; `operator_id` NULL means an unknown face. The
/// alerts raised are returned in `*alerts_json` as a JSON array of alert
/// payloads (caller-owned).
#[no_mangle]
pub unsafe extern "C" fn cw_tracker_ingest(
    tracker: *mut CwTracker,
    timestamp_ns: i64,
    frame_ref: *const c_char,
    operator_id: *const c_char,
    distance: f64,
    alerts_json: *mut *mut c_char,
) -> CwStatus {
    guard(|| {
        let t = out_arg(tracker, "tracker")?;
        let alerts_json = out_arg(alerts_json, "alerts_json")?;
        let result = if operator_id.is_null() {
            MatchResult::Unknown {
                best_distance: distance.is_finite().then_some(distance),
            }
        } else {
            MatchResult::Matched {
                operator_id: str_arg(operator_id, "operator_id")?.to_string(),
                distance,
            }
        };
        let obs = Observation {
            timestamp: timestamp(timestamp_ns),
            frame_ref: str_arg(frame_ref, "frame_ref")?.to_string(),
            result,
        };
        let alerts = t.inner.ingest(&obs)?;
        let payloads: Vec<_> = alerts.iter().map(|a| a.to_payload()).collect();
        *alerts_json = into_c_string(serde_json::to_string(&payloads).expect("payloads serialize"))?;
        Ok(())
    })
}

/// Closes sessions idle longer than the gap tolerance at `now_ns`.
#[no_mangle]
pub unsafe extern "C" fn cw_tracker_close_stale(tracker: *mut CwTracker, now_ns: i64, closed: *mut usize) -> CwStatus {
    guard(|| {
        let t = out_arg(tracker, "tracker")?;
        let n = t.inner.close_stale(timestamp(now_ns)).len();
        if let Some(c) = closed.as_mut() {
            *c = n;
        }
        Ok(())
    })
}

/// Elapsed seconds of the operator's open session at `now_ns`;
/// `CwStatus::NotFound` when no session is open.
#[no_mangle]
pub unsafe extern "C" fn cw_tracker_shift_seconds(
    tracker: *const CwTracker,
    operator_id: *const c_char,
    now_ns: i64,
    out: *mut i64,
) -> CwStatus {
    guard(|| {
        let t = tracker
            .as_ref()
            .ok_or_else(|| Failure::new(CwStatus::NullArgument, "tracker is NULL"))?;
        let id = str_arg(operator_id, "operator_id")?;
        let s = t
            .inner
            .open_session(id)
            .ok_or_else(|| Failure::new(CwStatus::NotFound, format!("no open session for {id:?}")))?;
        let d = cabwatch::tracker::shift_duration(s, timestamp(now_ns))?;
        *out_arg(out, "out")? = d.num_seconds();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cw_tracker_free(tracker: *mut CwTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Renders the CSV daily report for `year-month-day` from an observation log.
/// `gallery` may be NULL; it only supplies display names. Tracker settings
/// are the defaults.
#[no_mangle]
pub unsafe extern "C" fn cw_report_csv(
    observation_log: *const c_char,
    gallery: *const CwGallery,
    year: i32,
    month: u32,
    day: u32,
    cadence_hours: u32,
    out: *mut *mut c_char,
) -> CwStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(observation_log, "observation_log")?;
        let date = NaiveDate::from_ymd_opt(year, month, day)
            .ok_or_else(|| Failure::new(CwStatus::InvalidArgument, format!("invalid date {year}-{month}-{day}")))?;
        let names: BTreeMap<String, String> = gallery.as_ref().map_or_else(BTreeMap::new, |g| {
            g.inner
                .records()
                .iter()
                .map(|r| (r.operator_id.clone(), r.display_name.clone()))
                .collect()
        });
        let log = read_observation_log(Path::new(path))?;
        let (tracker, _) = replay(&log, TrackerConfig::default())?;
        let report = generate_report(&log, &tracker.sessions(), &names, date, cadence_hours, Utc::now())
            .map_err(|e| Failure::new(CwStatus::InvalidArgument, e.to_string()))?;
        let bytes = render_report(&report, ReportFormat::Csv).map_err(|e| Failure::new(CwStatus::Io, e.to_string()))?;
        *out = into_c_string(String::from_utf8(bytes).expect("csv output is UTF-8"))?;
        Ok(())
    })
}
