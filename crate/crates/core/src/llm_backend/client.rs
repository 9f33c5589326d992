use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use log::{debug, warn};
use rand::Rng;

use super::cache::{CacheEntry, CacheHeader, ResponseCache};
use super::{
    completion_cache_key, embedding_cache_key, BackendError, CacheKey, CompletionRequest,
    CompletionResult, FinishReason, ModelRef, Transport,
};
use crate::datamodel::EmbeddingVector;

pub const DEFAULT_PARALLELISM: usize = 8;

/// Exponential backoff with full jitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Same attempt budget, no sleeping. For tests.
    pub fn immediate() -> Self {
        Self {
            base_delay: Duration::ZERO,
            ..Self::default()
        }
    }

    /// Upper bound of the jitter window before retry number `attempt` (0-based).
    pub fn backoff_cap(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << attempt.min(20))
    }

    fn delay(&self, attempt: u32) -> Duration {
        let cap = self.backoff_cap(attempt);
        if cap.is_zero() {
            return cap;
        }
        let nanos = rand::rng().random_range(0..=cap.as_nanos() as u64);
        Duration::from_nanos(nanos)
    }
}

/// Request counters for one client.
#[derive(Debug, Default)]
pub struct ClientStats {
    requests: AtomicU64,
    cache_hits: AtomicU64,
    network_calls: AtomicU64,
    retries: AtomicU64,
}

impl ClientStats {
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }
    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }
    /// Transport invocations, including retried attempts.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::Relaxed)
    }
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }
}

struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Default)]
struct Flight {
    result: Mutex<Option<Result<CacheEntry, BackendError>>>,
    done: Condvar,
}

impl Flight {
    fn wait(&self) -> Result<CacheEntry, BackendError> {
        let mut slot = self.result.lock().unwrap();
        while slot.is_none() {
            slot = self.done.wait(slot).unwrap();
        }
        slot.clone().unwrap()
    }

    fn finish(&self, r: Result<CacheEntry, BackendError>) {
        *self.result.lock().unwrap() = Some(r);
        self.done.notify_all();
    }
}

/// Cache-first client shared by every pipeline stage.
///
/// Concurrent identical requests collapse into one transport call; the
/// number of simultaneous transport calls is bounded by `parallelism`.
pub struct LlmClient {
    transport: Arc<dyn Transport>,
    cache: ResponseCache,
    retry: RetryPolicy,
    limiter: Limiter,
    inflight: Mutex<HashMap<CacheKey, Arc<Flight>>>,
    embedding_dims: OnceLock<usize>,
    stats: ClientStats,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("cache", &self.cache)
            .field("retry", &self.retry)
            .field("stats", &self.stats)
            .finish()
    }
}

impl LlmClient {
    pub fn new(transport: Arc<dyn Transport>, cache: ResponseCache) -> Self {
        Self {
            transport,
            cache,
            retry: RetryPolicy::default(),
            limiter: Limiter::new(DEFAULT_PARALLELISM),
            inflight: Mutex::new(HashMap::new()),
            embedding_dims: OnceLock::new(),
            stats: ClientStats::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.limiter = Limiter::new(n);
        self
    }

    pub fn stats(&self) -> &ClientStats {
        &self.stats
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        req.validate()?;
        let key = completion_cache_key(req);
        let (entry, cached) = self.fetch(&key, || {
            let raw = self.transport.complete(req)?;
            Ok(CacheEntry {
                header: CacheHeader {
                    kind: "completion".into(),
                    backend: req.model.backend.as_str().into(),
                    model_name: req.model.model_name.clone(),
                    finish_reason: Some(raw.finish_reason),
                },
                body: raw.text,
            })
        })?;
        Ok(CompletionResult {
            text: entry.body,
            finish_reason: entry.header.finish_reason.unwrap_or(FinishReason::Stop),
            cached,
        })
    }

    pub fn embed(&self, text: &str, model: &ModelRef) -> Result<EmbeddingVector, BackendError> {
        if text.is_empty() {
            return Err(BackendError::InvalidRequest(
                "embedding input must not be empty".into(),
            ));
        }
        model.validate()?;
        let key = embedding_cache_key(model, text);
        let (entry, _) = self.fetch(&key, || {
            let values = self.transport.embed(text, model)?;
            if let Some(expected) = self.transport.embedding_dims() {
                if values.len() != expected {
                    return Err(BackendError::DimensionMismatch {
                        expected,
                        got: values.len(),
                    });
                }
            }
            Ok(CacheEntry {
                header: CacheHeader {
                    kind: "embedding".into(),
                    backend: model.backend.as_str().into(),
                    model_name: model.model_name.clone(),
                    finish_reason: None,
                },
                body: serde_json::to_string(&values).expect("finite floats serialize"),
            })
        })?;
        let values: Vec<f64> = serde_json::from_str(&entry.body)
            .map_err(|e| BackendError::Cache(format!("corrupt embedding entry {key}: {e}")))?;
        let expected = *self.embedding_dims.get_or_init(|| values.len());
        if values.len() != expected {
            return Err(BackendError::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        EmbeddingVector::new(values).map_err(|e| BackendError::MalformedResponse(e.to_string()))
    }

    /// Returns the entry for `key` and whether it was served without this
    /// caller triggering a transport call.
    fn fetch(
        &self,
        key: &CacheKey,
        call: impl Fn() -> Result<CacheEntry, BackendError>,
    ) -> Result<(CacheEntry, bool), BackendError> {
        self.stats.requests.fetch_add(1, Ordering::Relaxed);
        if let Some(hit) = self.cache.get(key)? {
            self.stats.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok((hit, true));
        }

        let (flight, leader) = {
            let mut table = self.inflight.lock().unwrap();
            match table.get(key) {
                Some(f) => (Arc::clone(f), false),
                None => {
                    let f = Arc::new(Flight::default());
                    table.insert(key.clone(), Arc::clone(&f));
                    (f, true)
                }
            }
        };
        if !leader {
            let entry = flight.wait()?;
            self.stats.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok((entry, true));
        }

        // A previous leader may have stored the entry after our first lookup.
        let result = match self.cache.get(key) {
            Ok(Some(hit)) => Ok((hit, true)),
            Ok(None) => self.call_with_retry(key, &call).map(|e| (e, false)),
            Err(e) => Err(e),
        };
        flight.finish(result.clone().map(|(e, _)| e));
        self.inflight.lock().unwrap().remove(key);
        if matches!(result, Ok((_, true))) {
            self.stats.cache_hits.fetch_add(1, Ordering::Relaxed);
        }
        result
    }

    fn call_with_retry(
        &self,
        key: &CacheKey,
        call: &impl Fn() -> Result<CacheEntry, BackendError>,
    ) -> Result<CacheEntry, BackendError> {
        let mut attempt = 0;
        loop {
            let outcome = {
                let _permit = self.limiter.acquire();
                self.stats.network_calls.fetch_add(1, Ordering::Relaxed);
                call()
            };
            match outcome {
                Ok(entry) => {
                    self.cache.put(key, &entry)?;
                    return Ok(entry);
                }
                Err(e) if e.is_retryable() && attempt + 1 < self.retry.max_attempts => {
                    let mut wait = self.retry.delay(attempt);
                    if let BackendError::RateLimited {
                        retry_after: Some(after),
                    } = &e
                    {
                        wait = wait.max(*after);
                    }
                    debug!(
                        "attempt {} for {key} failed ({e}); retrying in {wait:?}",
                        attempt + 1
                    );
                    self.stats.retries.fetch_add(1, Ordering::Relaxed);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => {
                    warn!("request {key} failed after {} attempt(s): {e}", attempt + 1);
                    return Err(e);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_backend::{MockTransport, RawCompletion};
    use std::sync::atomic::AtomicU32;

    fn mock_client() -> (Arc<MockTransport>, LlmClient) {
        let t = Arc::new(MockTransport::new());
        let c = LlmClient::new(t.clone(), ResponseCache::ephemeral())
            .with_retry(RetryPolicy::immediate());
        (t, c)
    }

    #[test]
    fn greedy_mock_is_stable_and_cached() {
        let (t, c) = mock_client();
        let req = CompletionRequest::greedy(ModelRef::mock("m"), "abc", 64);
        let a = c.complete(&req).unwrap();
        let b = c.complete(&req).unwrap();
        assert_eq!(a.text, b.text);
        assert!(!a.cached);
        assert!(b.cached);
        assert_eq!(t.calls(), 1);
        assert_eq!(c.stats().network_calls(), 1);
        assert_eq!(c.stats().cache_hits(), 1);
    }

    #[test]
    fn embed_rejects_empty_text() {
        let (_, c) = mock_client();
        assert!(matches!(
            c.embed("", &ModelRef::mock("m")),
            Err(BackendError::InvalidRequest(_))
        ));
    }

    #[test]
    fn embed_round_trips_through_cache_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let model = ModelRef::mock("m");
        let first = LlmClient::new(
            Arc::new(MockTransport::new()),
            ResponseCache::on_disk(dir.path()),
        )
        .embed("question\ndocument", &model)
        .unwrap();
        let t = Arc::new(MockTransport::new());
        let second = LlmClient::new(t.clone(), ResponseCache::on_disk(dir.path()))
            .embed("question\ndocument", &model)
            .unwrap();
        assert_eq!(first, second);
        assert_eq!(t.calls(), 0);
        assert!((first.norm() - 1.0).abs() <= 1e-9);
    }

    struct Flaky {
        failures: AtomicU32,
        error: BackendError,
        calls: AtomicU32,
    }

    impl Transport for Flaky {
        fn complete(&self, _req: &CompletionRequest) -> Result<RawCompletion, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(self.error.clone());
            }
            Ok(RawCompletion {
                text: "ok".into(),
                finish_reason: FinishReason::Stop,
            })
        }
        fn embed(&self, _text: &str, _model: &ModelRef) -> Result<Vec<f64>, BackendError> {
            Ok(vec![1.0, 2.0, 3.0])
        }
        fn embedding_dims(&self) -> Option<usize> {
            Some(4)
        }
    }

    fn flaky(failures: u32, error: BackendError) -> Arc<Flaky> {
        Arc::new(Flaky {
            failures: AtomicU32::new(failures),
            error,
            calls: AtomicU32::new(0),
        })
    }

    #[test]
    fn transport_errors_retry_until_success() {
        let t = flaky(4, BackendError::Transport("reset".into()));
        let c = LlmClient::new(t.clone(), ResponseCache::ephemeral())
            .with_retry(RetryPolicy::immediate());
        let r = c
            .complete(&CompletionRequest::greedy(ModelRef::mock("m"), "p", 4))
            .unwrap();
        assert_eq!(r.text, "ok");
        assert_eq!(t.calls.load(Ordering::SeqCst), 5);
        assert_eq!(c.stats().retries(), 4);
    }

    #[test]
    fn gives_up_after_five_attempts() {
        let t = flaky(10, BackendError::RateLimited { retry_after: None });
        let c = LlmClient::new(t.clone(), ResponseCache::ephemeral())
            .with_retry(RetryPolicy::immediate());
        let err = c
            .complete(&CompletionRequest::greedy(ModelRef::mock("m"), "p", 4))
            .unwrap_err();
        assert!(matches!(err, BackendError::RateLimited { .. }));
        assert_eq!(t.calls.load(Ordering::SeqCst), 5);
    }

    #[test]
    fn malformed_response_is_not_retried() {
        let t = flaky(3, BackendError::MalformedResponse("bad".into()));
        let c = LlmClient::new(t.clone(), ResponseCache::ephemeral())
            .with_retry(RetryPolicy::immediate());
        assert!(c
            .complete(&CompletionRequest::greedy(ModelRef::mock("m"), "p", 4))
            .is_err());
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn dimension_mismatch_detected() {
        let c = LlmClient::new(
            flaky(0, BackendError::Transport(String::new())),
            ResponseCache::ephemeral(),
        );
        assert_eq!(
            c.embed("x", &ModelRef::mock("m")).unwrap_err(),
            BackendError::DimensionMismatch {
                expected: 4,
                got: 3
            }
        );
    }

    #[test]
    fn backoff_doubles_from_base() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff_cap(0), Duration::from_millis(500));
        assert_eq!(p.backoff_cap(1), Duration::from_millis(1000));
        assert_eq!(p.backoff_cap(3), Duration::from_millis(4000));
    }

    struct Slow {
        calls: AtomicU32,
    }

    impl Transport for Slow {
        fn complete(&self, req: &CompletionRequest) -> Result<RawCompletion, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(50));
            Ok(RawCompletion {
                text: req.prompt.clone(),
                finish_reason: FinishReason::Stop,
            })
        }
        fn embed(&self, _text: &str, _model: &ModelRef) -> Result<Vec<f64>, BackendError> {
            unreachable!()
        }
    }

    #[test]
    fn concurrent_identical_requests_share_one_call() {
        let t = Arc::new(Slow {
            calls: AtomicU32::new(0),
        });
        let c = LlmClient::new(t.clone(), ResponseCache::ephemeral());
        let req = CompletionRequest::greedy(ModelRef::mock("m"), "same", 4);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| assert_eq!(c.complete(&req).unwrap().text, "same"));
            }
        });
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }
}
