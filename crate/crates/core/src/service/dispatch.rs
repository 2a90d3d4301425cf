//! Webhook delivery of alerts with retry and a dead-letter spool.
//!
//! Each alert is POSTed as JSON with an `Idempotency-Key` header. A 2xx
//! response means delivered. 5xx responses and transport errors are retried
//! with exponential backoff, up to `max_attempts` in total, and then spooled.
//! A 4xx response is not retried: it points at a misconfigured endpoint, is
//! logged as an error and also spooled so the alert is not lost.
//!
//! Dead-letter lines are `{"idempotency_key":…,"reason":…,"payload":{…}}`.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::tracker::AlertPayload;

use super::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DispatchConfig {
    /// Total POST attempts per alert, at least 1.
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Delivery {
    Delivered {
        status: u16,
        attempts: u32,
    },
    /// 4xx from the endpoint; spooled.
    Rejected {
        status: u16,
    },
    /// Retries exhausted; spooled.
    Spooled {
        reason: String,
        attempts: u32,
    },
    /// No webhook configured.
    LocalOnly,
    /// Already handled in this session.
    Duplicate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DispatchSummary {
    pub delivered: usize,
    pub rejected: usize,
    pub undelivered: usize,
    pub local_only: usize,
    pub duplicates: usize,
}

impl DispatchSummary {
    pub fn record(&mut self, d: &Delivery) {
        match d {
            Delivery::Delivered { .. } => self.delivered += 1,
            Delivery::Rejected { .. } => self.rejected += 1,
            Delivery::Spooled { .. } => self.undelivered += 1,
            Delivery::LocalOnly => self.local_only += 1,
            Delivery::Duplicate => self.duplicates += 1,
        }
    }

    pub fn merge(&mut self, other: &DispatchSummary) {
        self.delivered += other.delivered;
        self.rejected += other.rejected;
        self.undelivered += other.undelivered;
        self.local_only += other.local_only;
        self.duplicates += other.duplicates;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub idempotency_key: String,
    pub reason: String,
    pub payload: AlertPayload,
}

pub struct Dispatcher {
    url: Option<String>,
    client: Option<reqwest::blocking::Client>,
    cfg: DispatchConfig,
    dead_letter: PathBuf,
    seen: HashSet<String>,
}

enum Attempt {
    Ok(u16),
    Client(u16),
    Retryable(String),
}

impl Dispatcher {
    pub fn new(url: Option<String>, cfg: DispatchConfig, dead_letter: PathBuf) -> Result<Self, ServiceError> {
        let client = match &url {
            Some(_) => Some(
                reqwest::blocking::Client::builder()
                    .timeout(cfg.timeout)
                    .build()
                    .map_err(|e| ServiceError::io("building HTTP client", std::io::Error::other(e)))?,
            ),
            None => None,
        };
        Ok(Self {
            url,
            client,
            cfg,
            dead_letter,
            seen: HashSet::new(),
        })
    }

    pub fn dispatch(&mut self, payload: &AlertPayload) -> Result<Delivery, ServiceError> {
        let key = payload.idempotency_key();
        if !self.seen.insert(key.clone()) {
            return Ok(Delivery::Duplicate);
        }
        let (Some(url), Some(client)) = (&self.url, &self.client) else {
            log::info!("alert {key} recorded locally (no webhook configured)");
            return Ok(Delivery::LocalOnly);
        };

        let mut backoff = self.cfg.initial_backoff;
        let mut last_error = String::new();
        for attempt in 1..=self.cfg.max_attempts {
            let outcome = match client
                .post(url.as_str())
                .header("Idempotency-Key", &key)
                .json(payload)
                .send()
            {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        Attempt::Ok(status.as_u16())
                    } else if status.is_client_error() {
                        Attempt::Client(status.as_u16())
                    } else {
                        Attempt::Retryable(format!("HTTP {}", status.as_u16()))
                    }
                }
                Err(e) => Attempt::Retryable(e.to_string()),
            };
            match outcome {
                Attempt::Ok(status) => {
                    log::debug!("alert {key} delivered on attempt {attempt}");
                    return Ok(Delivery::Delivered {
                        status,
                        attempts: attempt,
                    });
                }
                Attempt::Client(status) => {
                    log::error!("webhook rejected alert {key} with HTTP {status}; check webhook_url");
                    self.spool(&key, &format!("rejected: HTTP {status}"), payload)?;
                    return Ok(Delivery::Rejected { status });
                }
                Attempt::Retryable(reason) => {
                    log::warn!("alert {key} attempt {attempt} failed: {reason}");
                    last_error = reason;
                    if attempt < self.cfg.max_attempts {
                        thread::sleep(backoff);
                        backoff = backoff.saturating_mul(2);
                    }
                }
            }
        }
        self.spool(&key, &last_error, payload)?;
        Ok(Delivery::Spooled {
            reason: last_error,
            attempts: self.cfg.max_attempts,
        })
    }

    fn spool(&self, key: &str, reason: &str, payload: &AlertPayload) -> Result<(), ServiceError> {
        let record = DeadLetter {
            idempotency_key: key.to_string(),
            reason: reason.to_string(),
            payload: payload.clone(),
        };
        let line = serde_json::to_string(&record).expect("dead letter serializes");
        let ctx = || format!("dead-letter file {}", self.dead_letter.display());
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.dead_letter)
            .map_err(|e| ServiceError::io(ctx(), e))?;
        writeln!(f, "{line}").map_err(|e| ServiceError::io(ctx(), e))?;
        f.sync_data().map_err(|e| ServiceError::io(ctx(), e))?;
        log::warn!("alert {key} spooled to {}", self.dead_letter.display());
        Ok(())
    }
}

/// Runs a [`Dispatcher`] on a background thread fed through a channel.
pub struct AsyncDispatcher {
    tx: Option<mpsc::Sender<AlertPayload>>,
    handle: Option<thread::JoinHandle<Result<DispatchSummary, ServiceError>>>,
}

impl AsyncDispatcher {
    pub fn spawn(mut dispatcher: Dispatcher) -> Self {
        let (tx, rx) = mpsc::channel::<AlertPayload>();
        let handle = thread::spawn(move || {
            let mut summary = DispatchSummary::default();
            for payload in rx {
                let d = dispatcher.dispatch(&payload)?;
                summary.record(&d);
            }
            Ok(summary)
        });
        Self {
            tx: Some(tx),
            handle: Some(handle),
        }
    }

    pub fn send(&self, payload: AlertPayload) {
        if let Some(tx) = &self.tx {
            // a closed channel means the worker already failed; finish() reports it
            let _ = tx.send(payload);
        }
    }

    /// Waits for every queued alert to be handled.
    pub fn finish(mut self) -> Result<DispatchSummary, ServiceError> {
        self.tx.take();
        match self.handle.take().expect("joined once").join() {
            Ok(r) => r,
            Err(_) => Err(ServiceError::io("dispatch worker", std::io::Error::other("panicked"))),
        }
    }
}

impl Drop for AsyncDispatcher {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

pub fn read_dead_letter(path: &Path) -> Result<Vec<DeadLetter>, ServiceError> {
    let ctx = || format!("dead-letter file {}", path.display());
    let f = std::fs::File::open(path).map_err(|e| ServiceError::io(ctx(), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| ServiceError::io(ctx(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DeadLetter = serde_json::from_str(&line).map_err(|e| {
            ServiceError::io(
                ctx(),
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)),
            )
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Re-sends every spooled alert. The spool is moved aside to `<path>.replay`
/// first; alerts that fail again are appended to a fresh spool at `path`.
pub fn replay_dead_letter(path: &Path, mut dispatcher: Dispatcher) -> Result<DispatchSummary, ServiceError> {
    let mut summary = DispatchSummary::default();
    if !path.exists() {
        return Ok(summary);
    }
    let mut staging = path.as_os_str().to_owned();
    staging.push(".replay");
    let staging = PathBuf::from(staging);
    std::fs::rename(path, &staging).map_err(|e| ServiceError::io(format!("moving {}", path.display()), e))?;
    dispatcher.dead_letter = path.to_path_buf();
    for rec in read_dead_letter(&staging)? {
        summary.record(&dispatcher.dispatch(&rec.payload)?);
    }
    std::fs::remove_file(&staging).map_err(|e| ServiceError::io(format!("removing {}", staging.display()), e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::DateTime;

    fn payload(secs: i64) -> AlertPayload {
        AlertPayload {
            schema_version: 1,
            kind: "trespass".into(),
            timestamp: DateTime::from_timestamp(secs, 0).unwrap(),
            operator_id: None,
            shift_duration_seconds: None,
            frame_ref: format!("{secs}_0.png"),
        }
    }

    fn fast() -> DispatchConfig {
        DispatchConfig {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(1),
            timeout: Duration::from_millis(500),
        }
    }

    /// A port with nothing listening on it.
    fn dead_url() -> String {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = l.local_addr().unwrap().port();
        drop(l);
        format!("http://127.0.0.1:{port}/alerts")
    }

    #[test]
    fn local_only_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = Dispatcher::new(None, fast(), dir.path().join("dl.jsonl")).unwrap();
        assert_eq!(d.dispatch(&payload(1)).unwrap(), Delivery::LocalOnly);
        assert_eq!(d.dispatch(&payload(1)).unwrap(), Delivery::Duplicate);
        assert_eq!(d.dispatch(&payload(2)).unwrap(), Delivery::LocalOnly);
        assert!(!dir.path().join("dl.jsonl").exists());
    }

    #[test]
    fn unreachable_endpoint_spools_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let dl = dir.path().join("dl.jsonl");
        let mut d = Dispatcher::new(Some(dead_url()), fast(), dl.clone()).unwrap();
        let out = d.dispatch(&payload(7)).unwrap();
        assert!(matches!(out, Delivery::Spooled { attempts: 3, .. }), "{out:?}");
        let spooled = read_dead_letter(&dl).unwrap();
        assert_eq!(spooled.len(), 1);
        assert_eq!(spooled[0].payload, payload(7));
        assert_eq!(spooled[0].idempotency_key, payload(7).idempotency_key());

        // still down: the alert goes back into the spool
        let again = Dispatcher::new(Some(dead_url()), fast(), dl.clone()).unwrap();
        let s = replay_dead_letter(&dl, again).unwrap();
        assert_eq!(s.undelivered, 1);
        assert_eq!(read_dead_letter(&dl).unwrap().len(), 1);
    }

    #[test]
    fn async_dispatcher_summarizes() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dispatcher::new(None, fast(), dir.path().join("dl.jsonl")).unwrap();
        let a = AsyncDispatcher::spawn(d);
        for s in [1, 2, 2, 3] {
            a.send(payload(s));
        }
        let s = a.finish().unwrap();
        assert_eq!(s.local_only, 3);
        assert_eq!(s.duplicates, 1);
    }
}
