//! Service client: transport, clock, sliding-window rate limiter, retries
//! with backoff, and the content-addressed response cache.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::prompt::ChatExchange;
use crate::error::LlmError;
use crate::rng::KeyedRng;

/// Connection, retry and caching settings shared by the chat, fill-mask and
/// translation services.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmServiceConfig {
    /// Chat-completion URL.
    pub endpoint_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_base_secs: f64,
    pub backoff_max_secs: f64,
    /// Requests per sliding 60-second window.
    pub rate_limit: u32,
    pub max_in_flight: usize,
    pub cache_dir: Option<PathBuf>,
    /// Sampling temperature for rephrasing; classification always uses 0.
    pub temperature: f64,
    /// Fill-mask URL per model key (`bert`, `distilbert`, `roberta`).
    pub fill_mask_endpoints: BTreeMap<String, String>,
    pub translate_endpoint: Option<String>,
    pub source_language: String,
    pub pivot_language: Option<String>,
    /// Refuse every endpoint that is not on the loopback interface; cached
    /// responses are still served.
    pub offline: bool,
    /// In-context examples per class for classification.
    pub classify_examples: usize,
}

impl Default for LlmServiceConfig {
    fn default() -> Self {
        LlmServiceConfig {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60.0,
            max_retries: 5,
            backoff_base_secs: 1.0,
            backoff_max_secs: 60.0,
            rate_limit: 60,
            max_in_flight: 4,
            cache_dir: None,
            temperature: 1.0,
            fill_mask_endpoints: BTreeMap::new(),
            translate_endpoint: None,
            source_language: "en".into(),
            pivot_language: Some("de".into()),
            offline: false,
            classify_examples: 2,
        }
    }
}

impl LlmServiceConfig {
    // negated comparisons so NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.rate_limit == 0 {
            return Err(LlmError::Config("rate_limit must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(LlmError::Config("max_in_flight must be positive".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(LlmError::Config("timeout_secs must be positive".into()));
        }
        if !(self.backoff_base_secs >= 0.0 && self.backoff_max_secs >= 0.0) {
            return Err(LlmError::Config(
                "backoff times must be non-negative".into(),
            ));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::Config("temperature must be >= 0".into()));
        }
        Ok(())
    }

    /// Points every service at one base URL, as served by the mock server.
    pub fn with_base_url(mut self, base: &str) -> Self {
        let base = base.trim_end_matches('/');
        self.endpoint_url = format!("{base}/v1/chat/completions");
        for model in ["bert", "distilbert", "roberta"] {
            self.fill_mask_endpoints
                .insert(model.into(), format!("{base}/fill-mask/{model}"));
        }
        self.translate_endpoint = Some(format!("{base}/translate"));
        self
    }
}

/// Monotonic seconds and sleeping, replaceable by a virtual clock in tests.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
    fn sleep(&self, secs: f64);
}

#[derive(Debug)]
pub struct SystemClock {
    start: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock {
            start: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn sleep(&self, secs: f64) {
        if secs > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(secs));
        }
    }
}

/// A clock that only moves when slept on or advanced.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: Mutex<f64>,
}

impl VirtualClock {
    pub fn advance(&self, secs: f64) {
        *self.now.lock().unwrap() += secs.max(0.0);
    }

    pub fn total_slept(&self) -> f64 {
        *self.now.lock().unwrap()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, secs: f64) {
        self.advance(secs);
    }
}

pub const RATE_WINDOW_SECS: f64 = 60.0;

/// At most `limit` grants in any half-open 60-second window.
#[derive(Debug)]
pub struct RateLimiter {
    limit: usize,
    window: Mutex<VecDeque<f64>>,
    granted: Mutex<Vec<f64>>,
}

impl RateLimiter {
    pub fn new(limit: u32) -> Self {
        RateLimiter {
            limit: limit.max(1) as usize,
            window: Mutex::new(VecDeque::new()),
            granted: Mutex::new(Vec::new()),
        }
    }

    /// Blocks (on `clock`) until a request may go out; returns its time.
    pub fn acquire(&self, clock: &dyn Clock) -> f64 {
        loop {
            let wait = {
                let mut w = self.window.lock().unwrap();
                let now = clock.now();
                while w.front().is_some_and(|&t| t <= now - RATE_WINDOW_SECS) {
                    w.pop_front();
                }
                if w.len() < self.limit {
                    w.push_back(now);
                    self.granted.lock().unwrap().push(now);
                    return now;
                }
                w[0] + RATE_WINDOW_SECS - now
            };
            clock.sleep(wait);
        }
    }

    /// Every grant time so far, in grant order.
    pub fn history(&self) -> Vec<f64> {
        self.granted.lock().unwrap().clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
    /// Seconds from a `Retry-After` header.
    pub retry_after: Option<f64>,
}

/// A JSON-over-HTTP POST.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        body: &Value,
        bearer: Option<&str>,
    ) -> Result<HttpResponse, LlmError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        body: &Value,
        bearer: Option<&str>,
    ) -> Result<HttpResponse, LlmError> {
        let mut req = self.agent.post(url);
        if let Some(key) = bearer {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok());
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(HttpResponse {
            status,
            body,
            retry_after,
        })
    }
}

/// True for `localhost`, `127.0.0.0/8` and `::1`.
pub fn is_loopback(url: &str) -> bool {
    let Ok(uri) = url.parse::<ureq::http::Uri>() else {
        return false;
    };
    match uri.host() {
        Some("localhost") => true,
        Some(h) => h
            .trim_start_matches('[')
            .trim_end_matches(']')
            .parse::<std::net::IpAddr>()
            .is_ok_and(|ip| ip.is_loopback()),
        None => false,
    }
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    service: String,
    model: String,
    request: Value,
    response: Value,
}

/// Responses keyed by `SHA-256(service \0 model \0 canonical request JSON)`.
/// With a directory, each response is also a file `<key>.json` there.
#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, Value>>,
}

impl ResponseCache {
    pub fn new(dir: Option<PathBuf>) -> Result<Self, LlmError> {
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
        }
        Ok(ResponseCache {
            dir,
            memory: Mutex::new(HashMap::new()),
        })
    }

    pub fn key(service: &str, model: &str, request: &Value) -> String {
        let mut h = Sha256::new();
        h.update(service.as_bytes());
        h.update([0]);
        h.update(model.as_bytes());
        h.update([0]);
        // serde_json maps are ordered, so this text is canonical
        h.update(request.to_string().as_bytes());
        hex::encode(h.finalize())
    }

    fn path(dir: &Path, key: &str) -> PathBuf {
        dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<Value>, LlmError> {
        if let Some(v) = self.memory.lock().unwrap().get(key) {
            return Ok(Some(v.clone()));
        }
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        let p = Self::path(dir, key);
        if !p.exists() {
            return Ok(None);
        }
        let rec: CacheRecord = serde_json::from_slice(&fs::read(&p)?)?;
        self.memory
            .lock()
            .unwrap()
            .insert(key.to_string(), rec.response.clone());
        Ok(Some(rec.response))
    }

    pub fn put(
        &self,
        key: &str,
        service: &str,
        model: &str,
        request: &Value,
        response: &Value,
    ) -> Result<(), LlmError> {
        self.memory
            .lock()
            .unwrap()
            .insert(key.to_string(), response.clone());
        if let Some(dir) = &self.dir {
            let rec = CacheRecord {
                service: service.into(),
                model: model.into(),
                request: request.clone(),
                response: response.clone(),
            };
            let tmp = dir.join(format!(".{key}.{}.tmp", std::process::id()));
            fs::write(&tmp, serde_json::to_vec_pretty(&rec)?)?;
            fs::rename(&tmp, Self::path(dir, key))?;
        }
        Ok(())
    }
}

/// What one logical call cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallInfo {
    /// Requests sent, retries included; 0 for a cache hit.
    pub attempts: u32,
    pub cached: bool,
}

impl CallInfo {
    pub fn merge(self, other: CallInfo) -> CallInfo {
        CallInfo {
            attempts: self.attempts + other.attempts,
            cached: self.cached && other.cached,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: String,
    pub score: f64,
}

/// The retrying, rate-limited, caching client for all three services.
pub struct LlmClient {
    cfg: LlmServiceConfig,
    transport: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
    limiter: RateLimiter,
    cache: ResponseCache,
    seed: u64,
    sent: AtomicU64,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl LlmClient {
    /// HTTP transport and the system clock.
    pub fn new(cfg: LlmServiceConfig, seed: u64) -> Result<Self, LlmError> {
        let transport = Arc::new(UreqTransport::new(Duration::from_secs_f64(
            cfg.timeout_secs,
        )));
        Self::with_parts(cfg, transport, Arc::new(SystemClock::default()), seed)
    }

    pub fn with_parts(
        cfg: LlmServiceConfig,
        transport: Arc<dyn Transport>,
        clock: Arc<dyn Clock>,
        seed: u64,
    ) -> Result<Self, LlmError> {
        cfg.validate()?;
        Ok(LlmClient {
            limiter: RateLimiter::new(cfg.rate_limit),
            cache: ResponseCache::new(cfg.cache_dir.clone())?,
            cfg,
            transport,
            clock,
            seed,
            sent: AtomicU64::new(0),
            key_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &LlmServiceConfig {
        &self.cfg
    }

    /// HTTP requests sent by this client so far.
    pub fn requests_sent(&self) -> u64 {
        self.sent.load(Ordering::SeqCst)
    }

    pub fn rate_limiter(&self) -> &RateLimiter {
        &self.limiter
    }

    fn bearer(&self, url: &str) -> Result<Option<String>, LlmError> {
        match std::env::var(&self.cfg.api_key_env) {
            Ok(k) if !k.is_empty() => Ok(Some(k)),
            _ if is_loopback(url) => Ok(None),
            _ => Err(LlmError::MissingKey(self.cfg.api_key_env.clone())),
        }
    }

    fn backoff(&self, key: &str, attempt: u32, retry_after: Option<f64>) -> f64 {
        let mut rng = KeyedRng::new(self.seed, "llm/backoff", &format!("{key}/{attempt}"));
        let jitter: f64 = rng.random_range(0.0..0.5);
        let exp = self.cfg.backoff_base_secs * 2f64.powi(attempt as i32) * (1.0 + jitter);
        exp.min(self.cfg.backoff_max_secs)
            .max(retry_after.unwrap_or(0.0))
    }

    /// Cached POST with retries. 429, 5xx and transport errors are retried
    /// up to `max_retries` times; 401/403 abort; other statuses fail at once.
    pub fn request(
        &self,
        service: &str,
        url: &str,
        body: &Value,
    ) -> Result<(Value, CallInfo), LlmError> {
        let model = body.get("model").and_then(Value::as_str).unwrap_or(service);
        let key = ResponseCache::key(service, model, body);
        let lock = self
            .key_locks
            .lock()
            .unwrap()
            .entry(key.clone())
            .or_default()
            .clone();
        let _held = lock.lock().unwrap();
        if let Some(v) = self.cache.get(&key)? {
            return Ok((
                v,
                CallInfo {
                    attempts: 0,
                    cached: true,
                },
            ));
        }
        if self.cfg.offline && !is_loopback(url) {
            return Err(LlmError::Offline(url.to_string()));
        }
        let bearer = self.bearer(url)?;
        let mut last = String::new();
        let attempts = self.cfg.max_retries + 1;
        for attempt in 0..attempts {
            self.limiter.acquire(self.clock.as_ref());
            self.sent.fetch_add(1, Ordering::SeqCst);
            let mut retry_after = None;
            match self.transport.post_json(url, body, bearer.as_deref()) {
                Ok(r) if (200..300).contains(&r.status) => {
                    let v: Value = serde_json::from_str(&r.body)
                        .map_err(|e| LlmError::Response(format!("{service}: {e}")))?;
                    self.cache.put(&key, service, model, body, &v)?;
                    return Ok((
                        v,
                        CallInfo {
                            attempts: attempt + 1,
                            cached: false,
                        },
                    ));
                }
                Ok(r) if r.status == 401 || r.status == 403 => {
                    return Err(LlmError::Auth { status: r.status })
                }
                Ok(r) if r.status == 429 || r.status >= 500 => {
                    log::debug!("{service}: HTTP {} on attempt {}", r.status, attempt + 1);
                    retry_after = r.retry_after;
                    last = format!("HTTP {}", r.status);
                }
                Ok(r) => {
                    return Err(LlmError::Http {
                        status: r.status,
                        body: r.body,
                    })
                }
                Err(e) => last = e.to_string(),
            }
            if attempt + 1 < attempts {
                self.clock.sleep(self.backoff(&key, attempt, retry_after));
            }
        }
        Err(LlmError::RetriesExhausted { attempts, last })
    }

    /// The first choice's message content.
    pub fn chat(&self, exchange: &ChatExchange) -> Result<(String, CallInfo), LlmError> {
        exchange.validate()?;
        let body = json!({
            "model": exchange.model_name,
            "messages": exchange.messages,
            "temperature": exchange.temperature,
            "n": 1,
        });
        let (v, info) = self.request("chat", &self.cfg.endpoint_url, &body)?;
        let content = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| {
                LlmError::Response("chat reply has no choices[0].message.content".into())
            })?;
        Ok((content.to_string(), info))
    }

    /// Candidates for the single `<mask>` in `text_with_mask`.
    pub fn fill_mask(
        &self,
        model_key: &str,
        text_with_mask: &str,
    ) -> Result<(Vec<Candidate>, CallInfo), LlmError> {
        let url =
            self.cfg.fill_mask_endpoints.get(model_key).ok_or_else(|| {
                LlmError::Config(format!("no fill-mask endpoint for `{model_key}`"))
            })?;
        let body = json!({ "model": model_key, "text_with_mask": text_with_mask });
        let (v, info) = self.request("fill_mask", url, &body)?;
        let c: Vec<Candidate> = serde_json::from_value(
            v.get("candidates")
                .cloned()
                .ok_or_else(|| LlmError::Response("fill-mask reply has no candidates".into()))?,
        )?;
        Ok((c, info))
    }

    pub fn translate(
        &self,
        text: &str,
        source: &str,
        target: &str,
    ) -> Result<(String, CallInfo), LlmError> {
        let url = self
            .cfg
            .translate_endpoint
            .as_deref()
            .ok_or_else(|| LlmError::Config("no translation endpoint configured".into()))?;
        let body = json!({ "text": text, "source": source, "target": target });
        let (v, info) = self.request("translate", url, &body)?;
        let t = v
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| LlmError::Response("translation reply has no text".into()))?;
        Ok((t.to_string(), info))
    }
}
