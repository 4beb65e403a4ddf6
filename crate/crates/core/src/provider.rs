//! HTTP plumbing shared by the embedding and chat providers.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("provider unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("provider rejected the request: {0}")]
    Rejected(String),
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
    #[error("network access is disabled (offline mode)")]
    Offline,
    #[error("no canned response for prompt hash {0}")]
    NoFixture(String),
}

/// Bounded exponential backoff: `attempts` tries, sleeping `base * 2^k`
/// between consecutive tries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base: Duration::from_secs(1) }
    }
}

/// Outcome of one attempt.
pub enum Attempt<T> {
    Done(T),
    /// Transport failure or rate limit; worth retrying.
    Retry(String),
    Fatal(ProviderError),
}

impl RetryPolicy {
    pub fn run<T>(&self, mut attempt: impl FnMut() -> Attempt<T>) -> Result<T, ProviderError> {
        let attempts = self.attempts.max(1);
        let mut last = String::new();
        for k in 0..attempts {
            match attempt() {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => {
                    log::warn!("provider attempt {}/{} failed: {msg}", k + 1, attempts);
                    last = msg;
                    if k + 1 < attempts {
                        thread::sleep(self.base * 2u32.pow(k));
                    }
                }
            }
        }
        Err(ProviderError::Unavailable { attempts, message: last })
    }
}

/// JSON-over-HTTP POST client with bearer auth.
#[derive(Debug, Clone)]
pub struct JsonClient {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl JsonClient {
    pub fn new(base_url: &str, path: &str, api_key: Option<String>, timeout: Duration, retry: RetryPolicy) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Rejected(format!("cannot build HTTP client: {e}")))?;
        let url = format!("{}/{}", base_url.trim_end_matches('/'), path.trim_start_matches('/'));
        Ok(JsonClient { client, url, api_key, retry })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, ProviderError> {
        self.retry.run(|| {
            let mut req = self.client.post(&self.url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => return Attempt::Retry(e.to_string()),
            };
            let status = resp.status();
            if status.as_u16() == 429 || status.is_server_error() {
                return Attempt::Retry(format!("HTTP {status}"));
            }
            if !status.is_success() {
                let text = resp.text().unwrap_or_default();
                return Attempt::Fatal(ProviderError::Rejected(format!("HTTP {status}: {text}")));
            }
            match resp.json::<Resp>() {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fatal(ProviderError::BadResponse(e.to_string())),
            }
        })
    }
}

/// Runs `f` over `items` with at most `limit` calls in flight, returning
/// results in input order.
pub fn bounded_map<I: Sync, O: Send>(items: &[I], limit: usize, f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    let limit = limit.max(1);
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(limit) {
        if chunk.len() == 1 {
            out.push(f(&chunk[0]));
            continue;
        }
        let results: Vec<O> = thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|item| s.spawn(|| f(item))).collect();
            handles.into_iter().map(|h| h.join().expect("provider worker panicked")).collect()
        });
        out.extend(results);
    }
    out
}
