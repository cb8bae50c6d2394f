//! JSON-over-HTTP plumbing shared by the remote classifier backend and the
//! response collector.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use crate::clock::Clock;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum HttpError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("undecodable response body: {0}")]
    Decode(String),
}

impl HttpError {
    /// Transport failures and 5xx statuses are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            HttpError::Transport(_) => true,
            HttpError::Status { status, .. } => *status >= 500,
            HttpError::Decode(_) => false,
        }
    }
}

/// Something that can POST a JSON body and hand back a JSON body.
pub trait HttpTransport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, HttpError>;
}

/// Blocking transport backed by `ureq`.
#[derive(Debug, Clone)]
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { agent }
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, HttpError> {
        let mut request = self.agent.post(url).set("Content-Type", "application/json");
        if let Some(token) = bearer {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        match request.send_json(body) {
            Ok(response) => response
                .into_json::<Value>()
                .map_err(|e| HttpError::Decode(e.to_string())),
            Err(ureq::Error::Status(status, response)) => Err(HttpError::Status {
                status,
                body: response.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => Err(HttpError::Transport(t.to_string())),
        }
    }
}

/// Exponential backoff: attempt `k` (1-based) that fails retryably waits
/// `initial_backoff * 2^(k-1)` before attempt `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    /// Runs `op` until it succeeds, fails non-retryably, or attempts run out.
    /// Returns the final result together with the number of attempts made.
    pub fn run<T>(
        &self,
        clock: &dyn Clock,
        mut op: impl FnMut(u32) -> Result<T, HttpError>,
    ) -> (Result<T, HttpError>, u32) {
        let max = self.max_attempts.max(1);
        let mut backoff = self.initial_backoff;
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(v) => return (Ok(v), attempt),
                Err(e) if e.is_retryable() && attempt < max => {
                    clock.sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
                Err(e) => return (Err(e), attempt),
            }
        }
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct ConcurrencyLimit {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl ConcurrencyLimit {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut count = self.in_flight.lock().unwrap();
        while *count >= self.limit {
            count = self.freed.wait(count).unwrap();
        }
        *count += 1;
        Permit { owner: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap()
    }
}

pub struct Permit<'a> {
    owner: &'a ConcurrencyLimit,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut count = self.owner.in_flight.lock().unwrap();
        *count -= 1;
        self.owner.freed.notify_one();
    }
}
