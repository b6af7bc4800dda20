//! Completion backends.
//!
//! [`ModelBackend`] is the single seam between the pipeline and a model. Two
//! implementations ship here: [`MockBackend`], a scripted table keyed by prompt
//! hash, and (with the `http` feature) [`HttpBackend`], a client for
//! OpenAI-compatible `POST /v1/completions` endpoints.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Mutex;
#[cfg(feature = "http")]
use std::sync::Condvar;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::sha256_hex;

#[cfg(feature = "http")]
mod http;
#[cfg(feature = "http")]
pub use http::HttpBackend;
#[cfg(feature = "http")]
pub(crate) use http::JsonClient;

/// Upper bound on samples per request.
pub const MAX_SAMPLES: u32 = 32;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("backend unavailable after {attempts} attempts: {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("no scripted completions for prompt hash {hash}")]
    UnscriptedPrompt { hash: String },
    #[error("malformed endpoint response: {0}")]
    Protocol(String),
    #[error("completion carries no token log-probabilities")]
    UnscoredCompletion,
    #[error("backend configuration: {0}")]
    Config(String),
}

/// Decoding parameters for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub n: u32,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    pub stop: Vec<String>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self::forward()
    }
}

impl SamplingParams {
    /// Diverse sampling for forward candidate generation.
    pub fn forward() -> Self {
        SamplingParams {
            temperature: 0.8,
            top_p: 0.95,
            n: 1,
            max_tokens: 512,
            seed: None,
            stop: vec!["\n\nQ:".to_string()],
        }
    }

    /// Greedy decoding, used for backward selection and extraction calls.
    pub fn deterministic(max_tokens: u32) -> Self {
        SamplingParams {
            temperature: 0.0,
            top_p: 1.0,
            n: 1,
            max_tokens,
            seed: None,
            stop: vec!["\n\nQ:".to_string()],
        }
    }

    pub fn with_n(mut self, n: u32) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::InvalidParams(m));
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be >= 0", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p {} must be in (0, 1]", self.top_p));
        }
        if self.n == 0 || self.n > MAX_SAMPLES {
            return bad(format!("n {} must be in 1..={MAX_SAMPLES}", self.n));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    #[default]
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default)]
    pub finish_reason: FinishReason,
}

impl Completion {
    pub fn new(text: impl Into<String>) -> Self {
        Completion { text: text.into(), token_logprobs: None, finish_reason: FinishReason::Stop }
    }

    pub fn with_logprobs(mut self, logprobs: Vec<f64>) -> Self {
        self.token_logprobs = Some(logprobs);
        self
    }
}

impl From<&str> for Completion {
    fn from(text: &str) -> Self {
        Completion::new(text)
    }
}

impl From<String> for Completion {
    fn from(text: String) -> Self {
        Completion::new(text)
    }
}

/// Length-normalized likelihood: the mean token log-probability.
pub fn score_completion(completion: &Completion) -> Result<f64, BackendError> {
    match completion.token_logprobs.as_deref() {
        Some(lp) if !lp.is_empty() => Ok(lp.iter().sum::<f64>() / lp.len() as f64),
        _ => Err(BackendError::UnscoredCompletion),
    }
}

/// Key used by mock scripts: SHA-256 of the prompt bytes.
pub fn prompt_hash(prompt: &str) -> String {
    sha256_hex(prompt)
}

pub trait ModelBackend: Send + Sync {
    /// Returns exactly `params.n` completions for `prompt`.
    fn complete(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<Completion>, BackendError>;

    /// How many requests this backend allows outstanding at once.
    fn max_in_flight(&self) -> usize {
        1
    }
}

impl<B: ModelBackend + ?Sized> ModelBackend for &B {
    fn complete(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<Completion>, BackendError> {
        (**self).complete(prompt, params)
    }

    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
}

impl<B: ModelBackend + ?Sized> ModelBackend for Box<B> {
    fn complete(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<Completion>, BackendError> {
        (**self).complete(prompt, params)
    }

    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
}

type CompletionResult = Result<Vec<Completion>, BackendError>;

/// Issues one request per prompt, up to `backend.max_in_flight()` at a time.
/// Results come back in prompt order.
pub fn complete_all<B: ModelBackend + ?Sized>(
    backend: &B,
    prompts: &[String],
    params: &SamplingParams,
) -> Vec<CompletionResult> {
    let workers = backend.max_in_flight().clamp(1, prompts.len().max(1));
    if workers == 1 {
        return prompts.iter().map(|p| backend.complete(p, params)).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<CompletionResult>>> = prompts.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= prompts.len() {
                    break;
                }
                let result = backend.complete(&prompts[i], params);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

/// One scripted answer. Plain strings in the script file are accepted as
/// completions without log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedCompletion {
    Text(String),
    Full(Completion),
}

impl ScriptedCompletion {
    fn to_completion(&self) -> Completion {
        match self {
            ScriptedCompletion::Text(t) => Completion::new(t.clone()),
            ScriptedCompletion::Full(c) => c.clone(),
        }
    }
}

/// Deterministic backend over a table `prompt hash -> completions`.
///
/// Sample `i` of a request with seed `s` is entry `(s + i) mod len` of the
/// prompt's list, so output depends only on (prompt, seed, sample index).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockBackend {
    script: BTreeMap<String, Vec<ScriptedCompletion>>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let mock: MockBackend = serde_json::from_str(text)
            .map_err(|e| BackendError::Config(format!("mock script: {e}")))?;
        if let Some((hash, _)) = mock.script.iter().find(|(_, v)| v.is_empty()) {
            return Err(BackendError::Config(format!("mock script: empty list for {hash}")));
        }
        Ok(mock)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }

    /// Appends completions for `prompt`.
    pub fn script<I>(&mut self, prompt: &str, completions: I) -> &mut Self
    where
        I: IntoIterator,
        I::Item: Into<Completion>,
    {
        self.script_hash(prompt_hash(prompt), completions)
    }

    pub fn script_hash<I>(&mut self, hash: String, completions: I) -> &mut Self
    where
        I: IntoIterator,
        I::Item: Into<Completion>,
    {
        self.script
            .entry(hash)
            .or_default()
            .extend(completions.into_iter().map(|c| ScriptedCompletion::Full(c.into())));
        self
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }

    /// Merges another script into this one; lists for shared hashes are concatenated.
    pub fn merge(&mut self, other: MockBackend) {
        for (hash, list) in other.script {
            self.script.entry(hash).or_default().extend(list);
        }
    }
}

impl ModelBackend for MockBackend {
    fn complete(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<Completion>, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        params.validate()?;
        let hash = prompt_hash(prompt);
        let list = self
            .script
            .get(&hash)
            .ok_or(BackendError::UnscriptedPrompt { hash })?;
        let base = params.seed.unwrap_or(0);
        Ok((0..params.n as u64)
            .map(|i| {
                let idx = (base.wrapping_add(i) % list.len() as u64) as usize;
                list[idx].to_completion()
            })
            .collect())
    }

    fn max_in_flight(&self) -> usize {
        8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 4, backoff_base_ms: 250, backoff_max_ms: 8_000 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): exponential, capped,
    /// scaled by `jitter` in [0, 1) to between 50% and 100% of the step.
    pub fn delay(&self, attempt: u32, jitter: f64) -> Duration {
        let exp = self
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.saturating_sub(1).min(20))
            .min(self.backoff_max_ms);
        let scaled = exp as f64 * (0.5 + 0.5 * jitter.clamp(0.0, 1.0));
        Duration::from_millis(scaled as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: Option<String>,
    pub model_name: String,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub request_logprobs: bool,
    pub mock_script: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            base_url: None,
            model_name: "llama-2-7b-chat".to_string(),
            timeout_secs: 120,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            api_key_env: Some("OPENAI_API_KEY".to_string()),
            request_logprobs: true,
            mock_script: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_in_flight == 0 {
            return Err(BackendError::Config("max_in_flight must be positive".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(BackendError::Config("retry.max_attempts must be positive".into()));
        }
        match self.kind {
            BackendKind::Http if self.base_url.as_deref().is_none_or(str::is_empty) => {
                Err(BackendError::Config("http backend requires base_url".into()))
            }
            BackendKind::Mock if self.mock_script.is_none() => {
                Err(BackendError::Config("mock backend requires mock_script".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Builds the backend described by `config`.
pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn ModelBackend>, BackendError> {
    config.validate()?;
    match config.kind {
        BackendKind::Mock => {
            let path = config.mock_script.as_ref().expect("validated");
            let text = std::fs::read_to_string(path)
                .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
            Ok(Box::new(MockBackend::from_json(&text)?))
        }
        #[cfg(feature = "http")]
        BackendKind::Http => Ok(Box::new(HttpBackend::new(config.clone())?)),
        #[cfg(not(feature = "http"))]
        BackendKind::Http => Err(BackendError::Config("built without the `http` feature".into())),
    }
}

/// Counting semaphore bounding outstanding requests.
#[cfg(feature = "http")]
#[derive(Debug)]
pub(crate) struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

#[cfg(feature = "http")]
pub(crate) struct InFlightPermit<'a>(&'a InFlight);

#[cfg(feature = "http")]
impl InFlight {
    pub(crate) fn new(limit: usize) -> Self {
        InFlight { limit: limit.max(1), used: Mutex::new(0), freed: Condvar::new() }
    }

    pub(crate) fn acquire(&self) -> InFlightPermit<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        InFlightPermit(self)
    }
}

#[cfg(feature = "http")]
impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scripted(prompt: &str, texts: &[&str]) -> MockBackend {
        let mut mock = MockBackend::new();
        mock.script(prompt, texts.iter().map(|t| Completion::new(*t)));
        mock
    }

    #[test]
    fn mock_returns_scripted_completion_byte_exact() {
        let mock = scripted("p", &["The answer is (B)."]);
        let out = mock.complete("p", &SamplingParams::forward()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].text, "The answer is (B).");
    }

    #[test]
    fn mock_is_deterministic_for_a_seed() {
        let mock = scripted("p", &["a", "b", "c"]);
        let params = SamplingParams::forward().with_n(5).with_seed(7);
        let first = mock.complete("p", &params).unwrap();
        assert_eq!(first, mock.complete("p", &params).unwrap());
        let texts: Vec<_> = first.iter().map(|c| c.text.as_str()).collect();
        // 7 mod 3 = 1
        assert_eq!(texts, ["b", "c", "a", "b", "c"]);
    }

    #[test]
    fn mock_rejects_unscripted_and_empty_prompts() {
        let mock = scripted("p", &["x"]);
        assert!(matches!(
            mock.complete("other", &SamplingParams::forward()),
            Err(BackendError::UnscriptedPrompt { .. })
        ));
        assert!(matches!(mock.complete("", &SamplingParams::forward()), Err(BackendError::EmptyPrompt)));
    }

    #[test]
    fn mock_script_file_accepts_plain_strings_and_full_records() {
        let json = format!(
            r#"{{"{}": ["plain", {{"text": "full", "token_logprobs": [-0.5], "finish_reason": "length"}}]}}"#,
            prompt_hash("p")
        );
        let mock = MockBackend::from_json(&json).unwrap();
        let out = mock.complete("p", &SamplingParams::forward().with_n(2)).unwrap();
        assert_eq!(out[0], Completion::new("plain"));
        assert_eq!(out[1].token_logprobs, Some(vec![-0.5]));
        assert_eq!(out[1].finish_reason, FinishReason::Length);
        let back = MockBackend::from_json(&mock.to_json()).unwrap();
        assert_eq!(back, mock);
    }

    #[test]
    fn sampling_params_guard() {
        assert!(SamplingParams::forward().validate().is_ok());
        assert!(SamplingParams::forward().with_n(0).validate().is_err());
        assert!(SamplingParams::forward().with_n(33).validate().is_err());
        let mut p = SamplingParams::forward();
        p.top_p = 0.0;
        assert!(p.validate().is_err());
        p.top_p = 1.0;
        p.temperature = -0.1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn score_is_mean_logprob() {
        let c = |lp: Vec<f64>| Completion::new("x").with_logprobs(lp);
        assert_eq!(score_completion(&c(vec![-1.0, -1.0, -1.0])).unwrap(), -1.0);
        assert_eq!(score_completion(&c(vec![-0.5, -1.5])).unwrap(), -1.0);
        assert!(matches!(score_completion(&c(vec![])), Err(BackendError::UnscoredCompletion)));
        assert!(matches!(score_completion(&Completion::new("x")), Err(BackendError::UnscoredCompletion)));
    }

    #[test]
    fn backoff_grows_and_caps() {
        let policy = RetryPolicy { max_attempts: 5, backoff_base_ms: 100, backoff_max_ms: 1000 };
        assert_eq!(policy.delay(1, 1.0), Duration::from_millis(100));
        assert_eq!(policy.delay(2, 1.0), Duration::from_millis(200));
        assert_eq!(policy.delay(3, 0.0), Duration::from_millis(200));
        assert_eq!(policy.delay(10, 1.0), Duration::from_millis(1000));
    }

    #[test]
    fn config_requires_url_for_http() {
        let cfg = BackendConfig { kind: BackendKind::Http, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = BackendConfig { base_url: Some("http://x".into()), ..cfg };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn complete_all_preserves_order() {
        let mut mock = MockBackend::new();
        let prompts: Vec<String> = (0..20).map(|i| format!("prompt {i}")).collect();
        for (i, p) in prompts.iter().enumerate() {
            mock.script(p, [Completion::new(format!("answer {i}"))]);
        }
        let out = complete_all(&mock, &prompts, &SamplingParams::forward());
        for (i, r) in out.into_iter().enumerate() {
            assert_eq!(r.unwrap()[0].text, format!("answer {i}"));
        }
    }
}
