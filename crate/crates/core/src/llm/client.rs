//! Retrying, concurrency-limited wrapper around a [`Backend`].

use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{prompt_hash, Backend, BackendError, FinishReason, GenerationRequest, GenerationResponse, LlmError, RequestTag};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts; for tests and fixture-backed runs.
    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before retry number `retry` (1-based): `base * 2^(retry-1)`, capped.
    pub fn delay_for(&self, retry: u32, hint: Option<Duration>) -> Duration {
        let exp = self
            .base_delay
            .checked_mul(1u32 << (retry.saturating_sub(1)).min(20))
            .unwrap_or(self.max_delay)
            .min(self.max_delay);
        match hint {
            Some(h) => exp.max(h.min(self.max_delay)),
            None => exp,
        }
    }
}

/// One backend attempt, as seen by the client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub tag: RequestTag,
    pub prompt_hash: String,
    pub attempt: u32,
    pub outcome: String,
}

/// One logical request in the audit log.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AuditEntry {
    pub tag: RequestTag,
    pub prompt_sha256: String,
    pub response_sha256: Option<String>,
    pub attempts: u32,
    pub status: String,
}

struct Gate {
    limit: usize,
    in_flight: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GatePermit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.limit {
            n = self.cv.wait(n).unwrap();
        }
        *n += 1;
        GatePermit(self)
    }
}

struct GatePermit<'a>(&'a Gate);

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.cv.notify_one();
    }
}

/// Shareable generation client. Safe to use from many threads; at most
/// `concurrency` backend calls are in flight at once.
pub struct GenerationClient {
    backend: Arc<dyn Backend>,
    policy: RetryPolicy,
    gate: Gate,
    calls: Mutex<Vec<CallRecord>>,
    audit: Mutex<Vec<AuditEntry>>,
}

impl GenerationClient {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            policy: RetryPolicy::default(),
            gate: Gate {
                limit: 4,
                in_flight: Mutex::new(0),
                cv: Condvar::new(),
            },
            calls: Mutex::new(Vec::new()),
            audit: Mutex::new(Vec::new()),
        }
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_concurrency(mut self, limit: usize) -> Self {
        self.gate.limit = limit.max(1);
        self
    }

    pub fn concurrency(&self) -> usize {
        self.gate.limit
    }

    pub fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, LlmError> {
        request.validate()?;
        let hash = prompt_hash(&request.prompt);
        let max_attempts = 1 + self.policy.max_retries;
        let mut last_err = String::new();
        let mut attempt = 0;
        while attempt < max_attempts {
            attempt += 1;
            let started = Instant::now();
            let result = {
                let _permit = self.gate.acquire();
                self.backend.complete(request)
            };
            let result = result.and_then(|mut resp| {
                resp.latency_ms = started.elapsed().as_millis() as u64;
                check_response(resp)
            });
            match result {
                Ok(resp) => {
                    self.record(request.request_tag, &hash, attempt, "ok".into());
                    self.audit.lock().unwrap().push(AuditEntry {
                        tag: request.request_tag,
                        prompt_sha256: hash,
                        response_sha256: Some(prompt_hash(&resp.text)),
                        attempts: attempt,
                        status: "ok".into(),
                    });
                    return Ok(resp);
                }
                Err(err) => {
                    self.record(request.request_tag, &hash, attempt, err.to_string());
                    last_err = err.to_string();
                    if !err.is_retryable() {
                        break;
                    }
                    if attempt < max_attempts {
                        let hint = match &err {
                            BackendError::RateLimited { retry_after } => *retry_after,
                            _ => None,
                        };
                        let delay = self.policy.delay_for(attempt, hint);
                        if !delay.is_zero() {
                            log::debug!("retrying {} request in {:?}: {err}", request.request_tag.as_str(), delay);
                            thread::sleep(delay);
                        }
                    }
                }
            }
        }
        self.audit.lock().unwrap().push(AuditEntry {
            tag: request.request_tag,
            prompt_sha256: hash,
            response_sha256: None,
            attempts: attempt,
            status: format!("failed: {last_err}"),
        });
        Err(LlmError::GenerationFailed {
            attempts: attempt,
            reason: last_err,
        })
    }

    /// Issues all requests with bounded parallelism; results are in input order.
    pub fn generate_batch(&self, requests: &[GenerationRequest]) -> Vec<Result<GenerationResponse, LlmError>> {
        map_bounded(requests, self.gate.limit, |r| self.generate(r))
    }

    fn record(&self, tag: RequestTag, hash: &str, attempt: u32, outcome: String) {
        self.calls.lock().unwrap().push(CallRecord {
            tag,
            prompt_hash: hash.to_string(),
            attempt,
            outcome,
        });
    }

    /// Per-attempt log, in completion order.
    pub fn call_log(&self) -> Vec<CallRecord> {
        self.calls.lock().unwrap().clone()
    }

    /// Audit entries sorted so the log is independent of scheduling.
    pub fn audit_entries(&self) -> Vec<AuditEntry> {
        let mut entries = self.audit.lock().unwrap().clone();
        entries.sort();
        entries
    }

    /// Appends the sorted audit entries to a JSON Lines file.
    pub fn write_audit(&self, path: &Path) -> io::Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        for entry in self.audit_entries() {
            serde_json::to_writer(&mut file, &entry)?;
            file.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn check_response(resp: GenerationResponse) -> Result<GenerationResponse, BackendError> {
    match resp.finish_reason {
        FinishReason::Error => Err(BackendError::Malformed("backend reported finish_reason=error".into())),
        FinishReason::Stop if resp.text.trim().is_empty() => Err(BackendError::Malformed("empty completion".into())),
        _ => Ok(resp),
    }
}

/// Maps `f` over `items` on at most `limit` worker threads, preserving order.
pub fn map_bounded<T, R, F>(items: &[T], limit: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = limit.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot is filled"))
        .collect()
}
