//! Completion backends for data generation: a scripted mock, an
//! OpenAI-compatible HTTP client, and a retrying wrapper.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sotana_core::dataforge::{BackendError, CompletionBackend, CompletionRequest};

use crate::jsonl::{read_strict, LoadError};

/// Hex SHA-256 of a prompt, the key used by mock fixtures.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    /// Prompt hash, or `*` for the round-robin pool.
    #[serde(rename = "match")]
    pub matcher: String,
    pub text: String,
}

/// Answers a prompt with the entry whose hash matches it, otherwise with
/// the next `*` entry in file order.
#[derive(Debug, Clone)]
pub struct MockBackend {
    by_hash: HashMap<String, String>,
    wildcard: Vec<String>,
    next: usize,
}

impl MockBackend {
    pub fn new(entries: Vec<MockEntry>) -> Self {
        let mut by_hash = HashMap::new();
        let mut wildcard = Vec::new();
        for e in entries {
            if e.matcher == "*" {
                wildcard.push(e.text);
            } else {
                by_hash.entry(e.matcher.to_ascii_lowercase()).or_insert(e.text);
            }
        }
        Self { by_hash, wildcard, next: 0 }
    }

    pub fn from_file(path: &Path) -> Result<Self, LoadError> {
        Ok(Self::new(read_strict(path)?))
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, BackendError> {
        if let Some(t) = self.by_hash.get(&prompt_hash(&request.prompt)) {
            return Ok(t.clone());
        }
        if self.wildcard.is_empty() {
            return Err(BackendError::NoFixture);
        }
        let t = self.wildcard[self.next % self.wildcard.len()].clone();
        self.next += 1;
        Ok(t)
    }
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: usize,
    n: u32,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct CompletionReply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
}

/// `POST {endpoint}/v1/completions`. Batches are sent in parallel, one
/// thread per request.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    url: String,
    model: String,
    stop: Vec<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: &str, model: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: format!("{}/v1/completions", endpoint.trim_end_matches('/')),
            model: model.to_string(),
            // Stop before the model numbers a block past the requested ones.
            stop: vec!["\n20".to_string(), "20.".to_string()],
            agent,
        }
    }

    fn post(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = CompletionBody {
            model: &self.model,
            prompt: &request.prompt,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            n: 1,
            stop: &self.stop,
        };
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(BackendError::Transport(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Protocol(format!("HTTP {status}: {}", text.trim())));
        }
        let reply: CompletionReply =
            resp.body_mut().read_json().map_err(|e| BackendError::Protocol(e.to_string()))?;
        reply
            .choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .ok_or_else(|| BackendError::Protocol("response has no choices".into()))
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, BackendError> {
        self.post(request)
    }

    fn complete_batch(&mut self, requests: &[CompletionRequest]) -> Vec<Result<String, BackendError>> {
        if requests.len() <= 1 {
            return requests.iter().map(|r| self.post(r)).collect();
        }
        let this = &*self;
        std::thread::scope(|s| {
            let handles: Vec<_> = requests.iter().map(|r| s.spawn(move || this.post(r))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(BackendError::Transport("request thread panicked".into()))))
                .collect()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retries: 3, initial_backoff: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    /// Wait before retry number `n` (1-based): `initial · 2^(n-1)`.
    pub fn backoff(&self, n: u32) -> Duration {
        self.initial_backoff.saturating_mul(1u32 << (n - 1).min(16))
    }
}

type Sleeper = Box<dyn FnMut(Duration) + Send>;

/// Retries transient failures of the inner backend with exponential
/// backoff; other errors pass through at once.
pub struct Retrying<B> {
    inner: B,
    policy: RetryPolicy,
    sleep: Sleeper,
}

impl<B: CompletionBackend> Retrying<B> {
    pub fn new(inner: B, policy: RetryPolicy) -> Self {
        Self { inner, policy, sleep: Box::new(std::thread::sleep) }
    }

    /// Replaces the real sleep, for tests.
    pub fn with_sleeper(mut self, sleep: impl FnMut(Duration) + Send + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn retry_after(&mut self, request: &CompletionRequest, first: BackendError) -> Result<String, BackendError> {
        let mut last = first;
        for n in 1..=self.policy.retries {
            if !last.is_transient() {
                return Err(last);
            }
            let wait = self.policy.backoff(n);
            log::warn!("backend error ({last}); retry {n}/{} in {wait:?}", self.policy.retries);
            (self.sleep)(wait);
            match self.inner.complete(request) {
                Ok(t) => return Ok(t),
                Err(e) => last = e,
            }
        }
        if !last.is_transient() {
            return Err(last);
        }
        Err(BackendError::RetriesExhausted { attempts: self.policy.retries + 1, last: last.to_string() })
    }
}

impl<B: CompletionBackend> CompletionBackend for Retrying<B> {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, BackendError> {
        match self.inner.complete(request) {
            Ok(t) => Ok(t),
            Err(e) => self.retry_after(request, e),
        }
    }

    fn complete_batch(&mut self, requests: &[CompletionRequest]) -> Vec<Result<String, BackendError>> {
        let first = self.inner.complete_batch(requests);
        first
            .into_iter()
            .zip(requests)
            .map(|(r, req)| r.or_else(|e| self.retry_after(req, e)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    fn req(p: &str) -> CompletionRequest {
        CompletionRequest { prompt: p.into(), temperature: 1.0, max_tokens: 16 }
    }

    #[test]
    fn mock_prefers_hash_then_cycles() {
        let entries = vec![
            MockEntry { matcher: "*".into(), text: "one".into() },
            MockEntry { matcher: prompt_hash("special"), text: "exact".into() },
            MockEntry { matcher: "*".into(), text: "two".into() },
        ];
        let mut m = MockBackend::new(entries);
        assert_eq!(m.complete(&req("special")).unwrap(), "exact");
        let got: Vec<String> = (0..3).map(|_| m.complete(&req("x")).unwrap()).collect();
        assert_eq!(got, ["one", "two", "one"]);
        let mut empty = MockBackend::new(vec![]);
        assert_eq!(empty.complete(&req("x")), Err(BackendError::NoFixture));
    }

    struct Flaky {
        failures: u32,
        calls: u32,
        kind: fn() -> BackendError,
    }

    impl CompletionBackend for Flaky {
        fn complete(&mut self, _: &CompletionRequest) -> Result<String, BackendError> {
            self.calls += 1;
            if self.calls <= self.failures {
                Err((self.kind)())
            } else {
                Ok("ok".into())
            }
        }
    }

    fn transport() -> BackendError {
        BackendError::Transport("connection refused".into())
    }

    #[test]
    fn backoff_doubles_from_one_second() {
        let p = RetryPolicy::default();
        let waits: Vec<u64> = (1..=3).map(|n| p.backoff(n).as_secs()).collect();
        assert_eq!(waits, [1, 2, 4]);
    }

    #[test]
    fn transient_errors_are_retried() {
        let slept = Arc::new(Mutex::new(Vec::new()));
        let s = slept.clone();
        let mut b = Retrying::new(Flaky { failures: 2, calls: 0, kind: transport }, RetryPolicy::default())
            .with_sleeper(move |d| s.lock().unwrap().push(d));
        assert_eq!(b.complete(&req("p")).unwrap(), "ok");
        assert_eq!(b.inner().calls, 3);
        assert_eq!(*slept.lock().unwrap(), [Duration::from_secs(1), Duration::from_secs(2)]);
    }

    #[test]
    fn retries_are_capped() {
        let mut b = Retrying::new(Flaky { failures: 10, calls: 0, kind: transport }, RetryPolicy::default())
            .with_sleeper(|_| {});
        let err = b.complete(&req("p")).unwrap_err();
        assert!(matches!(err, BackendError::RetriesExhausted { attempts: 4, .. }));
        assert_eq!(b.inner().calls, 4);
    }

    #[test]
    fn protocol_errors_are_final() {
        let mut b = Retrying::new(
            Flaky { failures: 1, calls: 0, kind: || BackendError::Protocol("bad json".into()) },
            RetryPolicy::default(),
        )
        .with_sleeper(|_| panic!("must not sleep"));
        assert!(matches!(b.complete(&req("p")), Err(BackendError::Protocol(_))));
        assert_eq!(b.inner().calls, 1);
    }
}
