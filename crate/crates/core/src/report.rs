//! Daily shift report: for each cadence-aligned hour of a day, the sighting
//! nearest that hour, who it was, and how long their shift had run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, TimeDelta, Utc};
use thiserror::Error;

use crate::gallery::MatchResult;
use crate::timefmt;
use crate::tracker::{shift_duration, Observation, ShiftSession};

pub const DEFAULT_CADENCE_HOURS: u32 = 4;
pub const UNKNOWN_OPERATOR: &str = "UNKNOWN";
pub const ABSENT_OPERATOR: &str = "-";
pub const CSV_HEADER: [&str; 4] = ["HOUR", "SNAPSHOT", "OPERATOR", "HOURS_IN_SHIFT"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unsupported report format {0:?} (expected `csv` or `text`)")]
    Format(String),
    #[error("report cadence must divide 24 hours, got {0}")]
    Cadence(u32),
    #[error("writing csv")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowOperator {
    Named(String),
    Unknown,
    Absent,
}

impl RowOperator {
    pub fn label(&self) -> &str {
        match self {
            RowOperator::Named(n) => n,
            RowOperator::Unknown => UNKNOWN_OPERATOR,
            RowOperator::Absent => ABSENT_OPERATOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRow {
    pub hour: DateTime<Utc>,
    /// Frame reference of the chosen sighting; empty for absent rows.
    pub snapshot_ref: String,
    pub operator: RowOperator,
    pub hours_in_shift: i64,
}

impl ReportRow {
    pub fn is_absent(&self) -> bool {
        self.operator == RowOperator::Absent
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DailyReport {
    pub date: NaiveDate,
    pub rows: Vec<ReportRow>,
    pub generated_at: DateTime<Utc>,
}

impl DailyReport {
    /// Rows that have a sighting (known or unknown).
    pub fn observed_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| !r.is_absent())
    }
}

/// Builds the report for `date`. `names` maps operator ids to display names;
/// ids without an entry are shown as-is. `log` must be sorted by time.
///
/// Each row takes the sighting nearest its hour within
/// `[hour - cadence/2, hour + cadence/2)`, earlier on ties, so a sighting
/// belongs to at most one row.
pub fn generate_report(
    log: &[Observation],
    sessions: &[ShiftSession],
    names: &BTreeMap<String, String>,
    date: NaiveDate,
    cadence_hours: u32,
    generated_at: DateTime<Utc>,
) -> Result<DailyReport, ReportError> {
    if cadence_hours == 0 || 24 % cadence_hours != 0 {
        return Err(ReportError::Cadence(cadence_hours));
    }
    let half_window = TimeDelta::seconds(i64::from(cadence_hours) * 3600 / 2);
    let midnight = date.and_hms_opt(0, 0, 0).expect("valid midnight").and_utc();

    let rows = (0..24)
        .step_by(cadence_hours as usize)
        .map(|h| {
            let hour = midnight + TimeDelta::hours(h);
            let lo = log.partition_point(|o| o.timestamp < hour - half_window);
            let nearest = log[lo..]
                .iter()
                .take_while(|o| o.timestamp < hour + half_window)
                .min_by_key(|o| ((o.timestamp - hour).abs(), o.timestamp));
            match nearest {
                None => ReportRow {
                    hour,
                    snapshot_ref: String::new(),
                    operator: RowOperator::Absent,
                    hours_in_shift: 0,
                },
                Some(obs) => row_for(hour, obs, sessions, names),
            }
        })
        .collect();

    Ok(DailyReport {
        date,
        rows,
        generated_at,
    })
}

fn row_for(
    hour: DateTime<Utc>,
    obs: &Observation,
    sessions: &[ShiftSession],
    names: &BTreeMap<String, String>,
) -> ReportRow {
    let (operator, hours_in_shift) = match &obs.result {
        MatchResult::Matched { operator_id, .. } => {
            let hours = sessions
                .iter()
                .find(|s| &s.operator_id == operator_id && s.covers(obs.timestamp))
                .and_then(|s| shift_duration(s, obs.timestamp).ok())
                .map_or(0, |d| d.num_seconds().div_euclid(3600));
            let name = names.get(operator_id).cloned().unwrap_or_else(|| operator_id.clone());
            (RowOperator::Named(name), hours)
        }
        MatchResult::Unknown { .. } => (RowOperator::Unknown, 0),
    };
    ReportRow {
        hour,
        snapshot_ref: obs.frame_ref.clone(),
        operator,
        hours_in_shift,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Text,
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "text" => Ok(ReportFormat::Text),
            other => Err(ReportError::Format(other.to_string())),
        }
    }
}

/// Serializes the report. CSV lists observed rows only, under the header
/// `HOUR,SNAPSHOT,OPERATOR,HOURS_IN_SHIFT`; text lists every row as a
/// `key: value` block.
pub fn render_report(report: &DailyReport, format: ReportFormat) -> Result<Vec<u8>, ReportError> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            w.write_record(CSV_HEADER)?;
            for row in report.observed_rows() {
                w.write_record([
                    timefmt::format(&row.hour),
                    row.snapshot_ref.clone(),
                    row.operator.label().to_string(),
                    row.hours_in_shift.to_string(),
                ])?;
            }
            w.into_inner().map_err(|e| ReportError::Csv(e.into_error().into()))
        }
        ReportFormat::Text => {
            let mut out = String::new();
            let _ = writeln!(out, "Train Operator report for {}", report.date);
            let _ = writeln!(out, "generated_at: {}", timefmt::format(&report.generated_at));
            for row in &report.rows {
                let _ = writeln!(out);
                let _ = writeln!(out, "hour: {}", timefmt::format(&row.hour));
                let _ = writeln!(out, "snapshot: {}", row.snapshot_ref);
                let _ = writeln!(out, "operator: {}", row.operator.label());
                let _ = writeln!(out, "hours_in_shift: {}", row.hours_in_shift);
            }
            Ok(out.into_bytes())
        }
    }
}
