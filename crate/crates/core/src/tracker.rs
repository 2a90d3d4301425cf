//! Shift sessions from timestamped match results.
//!
//! A sighting of a known operator extends that operator's open session when
//! it arrives within the gap tolerance of the previous sighting, and starts a
//! new session otherwise. The first sighting at which a session has lasted
//! the shift limit raises one overtime alert. Unknown faces raise trespass
//! alerts, throttled.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gallery::MatchResult;
use crate::timefmt;

pub const ALERT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("observation at {got} is older than the last ingested one at {last}")]
    OutOfOrder { last: DateTime<Utc>, got: DateTime<Utc> },
    #[error("clock {now} is before session start {start}")]
    InvalidClock { start: DateTime<Utc>, now: DateTime<Utc> },
    #[error("invalid tracker config: {0}")]
    Config(String),
    #[error("observation log line {line}: {reason}")]
    Log { line: usize, reason: String },
    #[error("observation log i/o")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackerConfig {
    pub shift_limit: TimeDelta,
    pub gap_tolerance: TimeDelta,
    pub trespass_throttle: TimeDelta,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            shift_limit: TimeDelta::hours(8),
            gap_tolerance: TimeDelta::minutes(30),
            trespass_throttle: TimeDelta::minutes(5),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let zero = TimeDelta::zero();
        if self.shift_limit <= zero || self.gap_tolerance <= zero || self.trespass_throttle <= zero {
            return Err(TrackerError::Config("all durations must be positive".into()));
        }
        if self.gap_tolerance >= self.shift_limit {
            return Err(TrackerError::Config(
                "gap tolerance must be shorter than the shift limit".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub timestamp: DateTime<Utc>,
    pub frame_ref: String,
    pub result: MatchResult,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftSession {
    pub operator_id: String,
    pub start: DateTime<Utc>,
    pub last_seen: DateTime<Utc>,
    pub alerted: bool,
    pub closed: bool,
}

impl ShiftSession {
    /// Presence time so far, `last_seen − start`.
    pub fn duration(&self) -> TimeDelta {
        self.last_seen - self.start
    }

    pub fn covers(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t <= self.last_seen
    }
}

/// Elapsed shift time at `now`: `now − start` for open sessions, clamped to
/// the last sighting for closed ones.
pub fn shift_duration(session: &ShiftSession, now: DateTime<Utc>) -> Result<TimeDelta, TrackerError> {
    if now < session.start {
        return Err(TrackerError::InvalidClock {
            start: session.start,
            now,
        });
    }
    let end = if session.closed {
        now.min(session.last_seen)
    } else {
        now
    };
    Ok(end - session.start)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AlertEvent {
    Overtime {
        timestamp: DateTime<Utc>,
        operator_id: String,
        frame_ref: String,
        shift_duration: TimeDelta,
    },
    Trespass {
        timestamp: DateTime<Utc>,
        frame_ref: String,
    },
}

impl AlertEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            AlertEvent::Overtime { .. } => "overtime",
            AlertEvent::Trespass { .. } => "trespass",
        }
    }

    pub fn timestamp(&self) -> DateTime<Utc> {
        match self {
            AlertEvent::Overtime { timestamp, .. } | AlertEvent::Trespass { timestamp, .. } => *timestamp,
        }
    }

    pub fn operator_id(&self) -> Option<&str> {
        match self {
            AlertEvent::Overtime { operator_id, .. } => Some(operator_id),
            AlertEvent::Trespass { .. } => None,
        }
    }

    /// `<timestamp>:<kind>:<operator_id>` (operator empty for trespass).
    pub fn idempotency_key(&self) -> String {
        format!(
            "{}:{}:{}",
            timefmt::format(&self.timestamp()),
            self.kind(),
            self.operator_id().unwrap_or("")
        )
    }

    pub fn to_payload(&self) -> AlertPayload {
        match self {
            AlertEvent::Overtime {
                timestamp,
                operator_id,
                frame_ref,
                shift_duration,
            } => AlertPayload {
                schema_version: ALERT_SCHEMA_VERSION,
                kind: "overtime".into(),
                timestamp: *timestamp,
                operator_id: Some(operator_id.clone()),
                shift_duration_seconds: Some(shift_duration.num_seconds()),
                frame_ref: frame_ref.clone(),
            },
            AlertEvent::Trespass { timestamp, frame_ref } => AlertPayload {
                schema_version: ALERT_SCHEMA_VERSION,
                kind: "trespass".into(),
                timestamp: *timestamp,
                operator_id: None,
                shift_duration_seconds: None,
                frame_ref: frame_ref.clone(),
            },
        }
    }
}

/// Wire form of an alert, used for the alert log and the dispatch webhook.
/// Optional fields are omitted when absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertPayload {
    pub schema_version: u32,
    pub kind: String,
    #[serde(with = "timefmt")]
    pub timestamp: DateTime<Utc>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub operator_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shift_duration_seconds: Option<i64>,
    pub frame_ref: String,
}

impl AlertPayload {
    pub fn idempotency_key(&self) -> String {
        format!(
            "{}:{}:{}",
            timefmt::format(&self.timestamp),
            self.kind,
            self.operator_id.as_deref().unwrap_or("")
        )
    }
}

/// Session state for one camera feed. Single writer; clone for snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracker {
    cfg: TrackerConfig,
    open: BTreeMap<String, ShiftSession>,
    closed: Vec<ShiftSession>,
    last_timestamp: Option<DateTime<Utc>>,
    last_trespass: Option<DateTime<Utc>>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, TrackerError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            open: BTreeMap::new(),
            closed: Vec::new(),
            last_timestamp: None,
            last_trespass: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn open_sessions(&self) -> impl Iterator<Item = &ShiftSession> {
        self.open.values()
    }

    pub fn open_session(&self, operator_id: &str) -> Option<&ShiftSession> {
        self.open.get(operator_id)
    }

    pub fn closed_sessions(&self) -> &[ShiftSession] {
        &self.closed
    }

    /// Every session, closed and open, ordered by start then operator id.
    pub fn sessions(&self) -> Vec<ShiftSession> {
        let mut all: Vec<ShiftSession> = self.closed.iter().chain(self.open.values()).cloned().collect();
        all.sort_by(|a, b| a.start.cmp(&b.start).then_with(|| a.operator_id.cmp(&b.operator_id)));
        all
    }

    pub fn last_timestamp(&self) -> Option<DateTime<Utc>> {
        self.last_timestamp
    }

    /// Applies one observation. On error the state is left untouched.
    pub fn ingest(&mut self, obs: &Observation) -> Result<Vec<AlertEvent>, TrackerError> {
        let t = obs.timestamp;
        if let Some(last) = self.last_timestamp {
            if t < last {
                return Err(TrackerError::OutOfOrder { last, got: t });
            }
        }
        self.last_timestamp = Some(t);

        let mut alerts = Vec::new();
        match &obs.result {
            MatchResult::Matched { operator_id, .. } => {
                let extend = self
                    .open
                    .get(operator_id)
                    .is_some_and(|s| t - s.last_seen <= self.cfg.gap_tolerance);
                if extend {
                    let s = self.open.get_mut(operator_id).expect("checked above");
                    s.last_seen = t;
                } else {
                    if let Some(mut stale) = self.open.remove(operator_id) {
                        stale.closed = true;
                        self.closed.push(stale);
                    }
                    self.open.insert(
                        operator_id.clone(),
                        ShiftSession {
                            operator_id: operator_id.clone(),
                            start: t,
                            last_seen: t,
                            alerted: false,
                            closed: false,
                        },
                    );
                }
                let s = self.open.get_mut(operator_id).expect("session present");
                if !s.alerted && s.duration() >= self.cfg.shift_limit {
                    s.alerted = true;
                    alerts.push(AlertEvent::Overtime {
                        timestamp: t,
                        operator_id: operator_id.clone(),
                        frame_ref: obs.frame_ref.clone(),
                        shift_duration: s.duration(),
                    });
                }
            }
            MatchResult::Unknown { .. } => {
                let throttled = self
                    .last_trespass
                    .is_some_and(|prev| t - prev < self.cfg.trespass_throttle);
                if !throttled {
                    self.last_trespass = Some(t);
                    alerts.push(AlertEvent::Trespass {
                        timestamp: t,
                        frame_ref: obs.frame_ref.clone(),
                    });
                }
            }
        }
        Ok(alerts)
    }

    /// Closes every open session not seen for longer than the gap tolerance.
    pub fn close_stale(&mut self, now: DateTime<Utc>) -> Vec<ShiftSession> {
        let stale: Vec<String> = self
            .open
            .values()
            .filter(|s| now - s.last_seen > self.cfg.gap_tolerance)
            .map(|s| s.operator_id.clone())
            .collect();
        let mut closed = Vec::with_capacity(stale.len());
        for id in stale {
            if let Some(mut s) = self.open.remove(&id) {
                s.closed = true;
                self.closed.push(s.clone());
                closed.push(s);
            }
        }
        closed
    }
}

/// Feeds a whole log through a fresh tracker.
pub fn replay(log: &[Observation], cfg: TrackerConfig) -> Result<(Tracker, Vec<AlertEvent>), TrackerError> {
    let mut tracker = Tracker::new(cfg)?;
    let mut alerts = Vec::new();
    for obs in log {
        alerts.extend(tracker.ingest(obs)?);
    }
    Ok((tracker, alerts))
}

/// One line of the observation log. Field order is fixed:
///
/// ```text
/// {"timestamp":"<RFC 3339 Z>","frame_ref":"…","outcome":"matched"|"unknown","operator_id":"…"|null,"distance":<real>|null}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ObservationLine {
    #[serde(with = "timefmt")]
    timestamp: DateTime<Utc>,
    frame_ref: String,
    outcome: Outcome,
    operator_id: Option<String>,
    distance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Outcome {
    Matched,
    Unknown,
}

pub fn observation_to_line(obs: &Observation) -> String {
    let line = match &obs.result {
        MatchResult::Matched { operator_id, distance } => ObservationLine {
            timestamp: obs.timestamp,
            frame_ref: obs.frame_ref.clone(),
            outcome: Outcome::Matched,
            operator_id: Some(operator_id.clone()),
            distance: Some(*distance),
        },
        MatchResult::Unknown { best_distance } => ObservationLine {
            timestamp: obs.timestamp,
            frame_ref: obs.frame_ref.clone(),
            outcome: Outcome::Unknown,
            operator_id: None,
            distance: *best_distance,
        },
    };
    serde_json::to_string(&line).expect("observation serializes")
}

pub fn observation_from_line(text: &str) -> Result<Observation, String> {
    let line: ObservationLine = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let result = match (line.outcome, line.operator_id, line.distance) {
        (Outcome::Matched, Some(operator_id), Some(distance)) => MatchResult::Matched { operator_id, distance },
        (Outcome::Matched, _, _) => return Err("matched outcome needs operator_id and distance".into()),
        (Outcome::Unknown, None, best_distance) => MatchResult::Unknown { best_distance },
        (Outcome::Unknown, Some(_), _) => return Err("unknown outcome cannot carry an operator_id".into()),
    };
    Ok(Observation {
        timestamp: line.timestamp,
        frame_ref: line.frame_ref,
        result,
    })
}

/// Append-only line-delimited observation log.
pub struct ObservationLogWriter {
    out: BufWriter<std::fs::File>,
}

impl ObservationLogWriter {
    /// Opens for append, creating the file if needed.
    pub fn open(path: &Path) -> Result<Self, TrackerError> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, obs: &Observation) -> Result<(), TrackerError> {
        writeln!(self.out, "{}", observation_to_line(obs))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), TrackerError> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_observation_log(path: &Path) -> Result<Vec<Observation>, TrackerError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(observation_from_line(&line).map_err(|reason| TrackerError::Log { line: i + 1, reason })?);
    }
    Ok(out)
}
