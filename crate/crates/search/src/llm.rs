//! Chat-completion client: HTTP and mock providers, retries, rate limiting,
//! usage accounting and prompt/response audit files.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use forge_core::lang::mutate::{crossover, mutate, restart};
use forge_core::lang::{parse_program, print_program, seed_program, Limits, RewardProgram};
use forge_core::rng;

pub const API_KEY_ENV: &str = "FORGE_LLM_API_KEY";
pub const ENDPOINT_ENV: &str = "FORGE_LLM_ENDPOINT";
pub const MODEL_ENV: &str = "FORGE_LLM_MODEL";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Http,
    Mock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub provider: ProviderKind,
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub rank_temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
    /// Prompt plus completion tokens admitted per minute; 0 disables the limit.
    pub tokens_per_minute: u64,
    /// JSON object mapping prompt digests to scripted mock responses.
    pub mock_script: Option<String>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Mock,
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: API_KEY_ENV.into(),
            temperature: 0.8,
            rank_temperature: 0.2,
            max_tokens: 1024,
            timeout_secs: 120.0,
            max_attempts: 3,
            backoff_base_ms: 500,
            max_in_flight: 4,
            tokens_per_minute: 0,
            mock_script: None,
        }
    }
}

impl LlmConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts < 1 {
            return Err("llm.max_attempts must be >= 1".into());
        }
        if !(self.timeout_secs > 0.0) {
            return Err("llm.timeout_secs must be > 0".into());
        }
        if self.max_in_flight < 1 {
            return Err("llm.max_in_flight must be >= 1".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) || !(0.0..=2.0).contains(&self.rank_temperature) {
            return Err("llm temperatures must lie in [0, 2]".into());
        }
        Ok(())
    }

    /// Applies endpoint and model overrides from the environment.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(v) = std::env::var(ENDPOINT_ENV) {
            self.endpoint = v;
        }
        if let Ok(v) = std::env::var(MODEL_ENV) {
            self.model = v;
        }
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Initial,
    Mutate,
    Crossover,
    Refine,
    Restart,
    Rank,
    Reflect,
}

impl RequestKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Initial => "initial",
            Self::Mutate => "mutate",
            Self::Crossover => "crossover",
            Self::Refine => "refine",
            Self::Restart => "restart",
            Self::Rank => "rank",
            Self::Reflect => "reflect",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Unique name within a run; used for audit files and ledger entries.
    pub key: String,
    pub kind: RequestKind,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn digest(&self) -> String {
        prompt_digest(&self.system, &self.user)
    }
}

/// Key used to look up scripted mock responses.
pub fn prompt_digest(system: &str, user: &str) -> String {
    let mut bytes = Vec::with_capacity(system.len() + user.len() + 1);
    bytes.extend_from_slice(system.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(user.as_bytes());
    rng::digest_hex(&bytes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl ProviderError {
    fn retryable(&self) -> bool {
        match self {
            Self::Transport(_) => true,
            Self::Status { status, .. } => *status == 429 || *status >= 500,
            Self::Malformed(_) => false,
        }
    }

    fn outcome(&self) -> String {
        match self {
            Self::Transport(_) => "transport_error".into(),
            Self::Status { status, .. } => format!("status_{status}"),
            Self::Malformed(_) => "malformed".into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("provider unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: ProviderError },
}

/// One completion attempt; retries live in [`LlmClient`].
pub trait ChatProvider: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// OpenAI-style chat-completion endpoint.
pub struct HttpProvider {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl HttpProvider {
    pub fn new(cfg: &LlmConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: cfg.endpoint.clone(),
            model: cfg.model.clone(),
            api_key: std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty()),
        }
    }
}

impl ChatProvider for HttpProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut call = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send(body.to_string()).map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| ProviderError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(ProviderError::Status { status, body: text.chars().take(500).collect() });
        }
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        let content = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))?
            .to_string();
        let usage = &v["usage"];
        Ok(ChatResponse {
            prompt_tokens: usage["prompt_tokens"].as_u64().unwrap_or_else(|| estimate_tokens(&req.system) + estimate_tokens(&req.user)),
            completion_tokens: usage["completion_tokens"].as_u64().unwrap_or_else(|| estimate_tokens(&content)),
            text: content,
        })
    }
}

/// Offline provider: scripted responses keyed by prompt digest, otherwise
/// a rule-based edit of the programs embedded in the prompt.
#[derive(Clone, Debug, Default)]
pub struct MockProvider {
    pub script: BTreeMap<String, String>,
}

impl MockProvider {
    pub fn new(script: BTreeMap<String, String>) -> Self {
        Self { script }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let script: BTreeMap<String, String> = serde_json::from_slice(&fs::read(path)?)?;
        Ok(Self { script })
    }

    fn rule(&self, req: &ChatRequest) -> String {
        let digest = req.digest();
        let mut r = rng::stream(u64::from_str_radix(&digest[..16], 16).unwrap_or(0), "mock-llm", &[]);
        let parents: Vec<RewardProgram> = fenced_blocks(&req.user)
            .into_iter()
            .filter(|(tag, _)| tag == "reward")
            .filter_map(|(_, body)| parse_program(&body, Limits::default()).ok())
            .collect();
        let fence = |p: &RewardProgram| format!("```reward\n{}\n```", print_program(p.ast()));
        match req.kind {
            RequestKind::Rank => {
                let ids: Vec<String> = req
                    .user
                    .lines()
                    .filter_map(|l| l.strip_prefix("### candidate "))
                    .map(|s| s.trim().to_string())
                    .collect();
                format!("```\n{}\n```", ids.join("\n"))
            }
            RequestKind::Reflect => {
                let ids: Vec<&str> = req.user.lines().filter_map(|l| l.strip_prefix("### candidate ")).collect();
                match (ids.first(), ids.last()) {
                    (Some(best), Some(worst)) if best != worst => format!(
                        "Candidate {} kept progress shaping and finished ahead of {}; keep goal and collision terms dominant and avoid large constant offsets.",
                        best.trim(),
                        worst.trim()
                    ),
                    _ => "Keep goal and collision terms dominant; shaping should stay small and local.".into(),
                }
            }
            RequestKind::Crossover if parents.len() >= 2 => fence(&crossover(&parents[0], &parents[1], &mut r)),
            RequestKind::Restart => fence(&restart(&mut r)),
            _ => {
                let base = parents.first().cloned().unwrap_or_else(seed_program);
                fence(&mutate(&base, &mut r))
            }
        }
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let text = match self.script.get(&req.digest()) {
            Some(t) => t.clone(),
            None => self.rule(req),
        };
        Ok(ChatResponse {
            prompt_tokens: estimate_tokens(&req.system) + estimate_tokens(&req.user),
            completion_tokens: estimate_tokens(&text),
            text,
        })
    }
}

/// Fenced code blocks as `(info string, body)`, in order of appearance.
pub fn fenced_blocks(text: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut open: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        let t = line.trim_start();
        match open.take() {
            None => {
                if let Some(info) = t.strip_prefix("```") {
                    open = Some((info.trim().to_string(), Vec::new()));
                }
            }
            Some((info, mut body)) => {
                if t.trim_end() == "```" {
                    out.push((info, body.join("\n")));
                } else {
                    body.push(line);
                    open = Some((info, body));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("response contains no fenced code block")]
pub struct ExtractionError;

/// Body of the last fenced block.
pub fn extract_program(response: &str) -> Result<String, ExtractionError> {
    fenced_blocks(response).pop().map(|(_, b)| b).ok_or(ExtractionError)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsageEntry {
    pub key: String,
    pub kind: RequestKind,
    pub attempt: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_ms: u64,
    pub outcome: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageTotals {
    pub requests: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub entries: Vec<UsageEntry>,
    pub totals: UsageTotals,
}

impl UsageLedger {
    pub fn record(&mut self, e: UsageEntry) {
        self.totals.requests += 1;
        self.totals.prompt_tokens += e.prompt_tokens;
        self.totals.completion_tokens += e.completion_tokens;
        self.entries.push(e);
    }

    pub fn recomputed_totals(&self) -> UsageTotals {
        self.entries.iter().fold(UsageTotals::default(), |mut t, e| {
            t.requests += 1;
            t.prompt_tokens += e.prompt_tokens;
            t.completion_tokens += e.completion_tokens;
            t
        })
    }

    /// Entries in a canonical order, independent of completion timing.
    pub fn sorted(&self) -> Self {
        let mut s = self.clone();
        s.entries.sort_by(|a, b| a.key.cmp(&b.key).then(a.attempt.cmp(&b.attempt)));
        s
    }
}

/// Gates dispatch on an in-flight cap and a tokens-per-minute window.
struct Limiter {
    max_in_flight: usize,
    tokens_per_minute: u64,
    in_flight: Mutex<usize>,
    freed: Condvar,
    window: Mutex<VecDeque<(Instant, u64)>>,
}

impl Limiter {
    fn new(cfg: &LlmConfig) -> Self {
        Self {
            max_in_flight: cfg.max_in_flight,
            tokens_per_minute: cfg.tokens_per_minute,
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            window: Mutex::new(VecDeque::new()),
        }
    }

    fn acquire(&self, tokens: u64) {
        if self.tokens_per_minute > 0 {
            loop {
                let mut w = self.window.lock().expect("limiter lock");
                let now = Instant::now();
                while w.front().is_some_and(|(t, _)| now.duration_since(*t) >= Duration::from_secs(60)) {
                    w.pop_front();
                }
                let used: u64 = w.iter().map(|(_, n)| n).sum();
                if used + tokens <= self.tokens_per_minute || w.is_empty() {
                    w.push_back((now, tokens));
                    break;
                }
                let wait = Duration::from_secs(60).saturating_sub(now.duration_since(w[0].0));
                drop(w);
                std::thread::sleep(wait.max(Duration::from_millis(10)));
            }
        }
        let mut n = self.in_flight.lock().expect("limiter lock");
        while *n >= self.max_in_flight {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
    }

    fn release(&self) {
        *self.in_flight.lock().expect("limiter lock") -= 1;
        self.freed.notify_one();
    }
}

#[derive(Serialize)]
struct AuditRecord<'a> {
    request: &'a ChatRequest,
    response: Option<&'a str>,
    error: Option<String>,
    attempts: u32,
}

pub struct LlmClient {
    cfg: LlmConfig,
    provider: Box<dyn ChatProvider>,
    ledger: Mutex<UsageLedger>,
    limiter: Limiter,
    audit_dir: Option<PathBuf>,
}

impl LlmClient {
    pub fn new(cfg: LlmConfig, provider: Box<dyn ChatProvider>) -> Self {
        let limiter = Limiter::new(&cfg);
        Self { cfg, provider, ledger: Mutex::new(UsageLedger::default()), limiter, audit_dir: None }
    }

    /// Builds the configured provider.
    pub fn from_config(cfg: &LlmConfig) -> std::io::Result<Self> {
        let provider: Box<dyn ChatProvider> = match cfg.provider {
            ProviderKind::Http => Box::new(HttpProvider::new(cfg)),
            ProviderKind::Mock => match &cfg.mock_script {
                Some(p) => Box::new(MockProvider::from_file(Path::new(p))?),
                None => Box::new(MockProvider::default()),
            },
        };
        Ok(Self::new(cfg.clone(), provider))
    }

    pub fn with_audit_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.audit_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> UsageLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    pub fn set_ledger(&self, ledger: UsageLedger) {
        *self.ledger.lock().expect("ledger lock") = ledger;
    }

    /// Sends `req`, retrying transport errors, 429 and 5xx with exponential
    /// backoff. Every attempt lands in the usage ledger.
    pub fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let estimate = estimate_tokens(&req.system) + estimate_tokens(&req.user) + req.max_tokens as u64;
        let mut last = None;
        let mut attempts = 0;
        for attempt in 1..=self.cfg.max_attempts {
            attempts = attempt;
            self.limiter.acquire(estimate);
            let started = Instant::now();
            let result = self.provider.complete(req);
            self.limiter.release();
            let wall_ms = started.elapsed().as_millis() as u64;
            let mut entry = UsageEntry {
                key: req.key.clone(),
                kind: req.kind,
                attempt,
                prompt_tokens: 0,
                completion_tokens: 0,
                wall_ms,
                outcome: "ok".into(),
            };
            match result {
                Ok(resp) => {
                    entry.prompt_tokens = resp.prompt_tokens;
                    entry.completion_tokens = resp.completion_tokens;
                    self.ledger.lock().expect("ledger lock").record(entry);
                    self.audit(req, Some(&resp.text), None, attempt);
                    return Ok(resp.text);
                }
                Err(e) => {
                    entry.outcome = e.outcome();
                    self.ledger.lock().expect("ledger lock").record(entry);
                    let retry = e.retryable();
                    last = Some(e);
                    if !retry {
                        break;
                    }
                    if attempt < self.cfg.max_attempts {
                        let ms = self.cfg.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                        std::thread::sleep(Duration::from_millis(ms));
                    }
                }
            }
        }
        let last = last.expect("at least one attempt");
        self.audit(req, None, Some(last.to_string()), attempts);
        Err(LlmError::Unavailable { attempts, last })
    }

    fn audit(&self, req: &ChatRequest, response: Option<&str>, error: Option<String>, attempts: u32) {
        let Some(dir) = &self.audit_dir else { return };
        let rec = AuditRecord { request: req, response, error, attempts };
        // Best effort: auditing never fails a request.
        let _ = fs::create_dir_all(dir);
        if let Ok(bytes) = serde_json::to_vec_pretty(&rec) {
            let _ = fs::write(dir.join(format!("{}.json", req.key)), bytes);
        }
    }
}
