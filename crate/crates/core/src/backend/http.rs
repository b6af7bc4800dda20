//! OpenAI-compatible completions over HTTP.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{BackendConfig, BackendError, Completion, FinishReason, InFlight, ModelBackend, RetryPolicy, SamplingParams};

/// Blocking JSON-over-HTTP poster with retries and an in-flight bound.
///
/// Retries cover transport failures, 408, 429 and 5xx. Every request sent
/// through it must be idempotent.
#[derive(Debug)]
pub(crate) struct JsonClient {
    agent: ureq::Agent,
    retry: RetryPolicy,
    in_flight: InFlight,
    bearer: Option<String>,
}

fn retryable(status: u16) -> bool {
    status == 408 || status == 429 || status >= 500
}

impl JsonClient {
    pub(crate) fn new(timeout: Duration, retry: RetryPolicy, max_in_flight: usize, bearer: Option<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        JsonClient {
            agent: ureq::Agent::new_with_config(config),
            retry,
            in_flight: InFlight::new(max_in_flight),
            bearer,
        }
    }

    pub(crate) fn limit(&self) -> usize {
        self.in_flight.limit
    }

    pub(crate) fn post<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R, BackendError> {
        let mut last_error = String::new();
        let mut last_status = None;
        for attempt in 1..=self.retry.max_attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.delay(attempt - 1, rand::random::<f64>()));
            }
            let outcome = {
                let _permit = self.in_flight.acquire();
                let mut request = self.agent.post(url);
                if let Some(token) = &self.bearer {
                    request = request.header("Authorization", format!("Bearer {token}"));
                }
                request.send_json(body).and_then(|mut resp| {
                    let status = resp.status().as_u16();
                    resp.body_mut().read_to_string().map(|text| (status, text))
                })
            };
            match outcome {
                Ok((status, text)) if (200..300).contains(&status) => {
                    return serde_json::from_str(&text)
                        .map_err(|e| BackendError::Protocol(format!("{e}: {}", truncate(&text))));
                }
                Ok((status, text)) if retryable(status) => {
                    last_status = Some((status, text));
                }
                Ok((status, text)) => {
                    return Err(BackendError::Status { status, body: truncate(&text) });
                }
                Err(e) => {
                    last_status = None;
                    last_error = e.to_string();
                }
            }
        }
        match last_status {
            Some((status, text)) => Err(BackendError::Status { status, body: truncate(&text) }),
            None => Err(BackendError::BackendUnavailable { attempts: self.retry.max_attempts, last_error }),
        }
    }
}

fn truncate(text: &str) -> String {
    const LIMIT: usize = 512;
    if text.len() <= LIMIT {
        return text.to_string();
    }
    let mut end = LIMIT;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &text[..end])
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    top_p: f64,
    n: u32,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<u32>,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    index: u32,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
}

impl Choice {
    fn into_completion(self) -> Result<Completion, BackendError> {
        let token_logprobs = match self.logprobs {
            Some(lp) if !lp.token_logprobs.is_empty() => {
                // Some servers report null for the first token.
                let values: Vec<f64> = lp.token_logprobs.into_iter().flatten().collect();
                if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v > 0.0) {
                    return Err(BackendError::Protocol(format!("invalid token logprob {bad}")));
                }
                Some(values)
            }
            _ => None,
        };
        let finish_reason = match self.finish_reason.as_deref() {
            None | Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            Some(_) => FinishReason::Error,
        };
        Ok(Completion { text: self.text, token_logprobs, finish_reason })
    }
}

/// Client for `POST {base_url}/v1/completions`.
#[derive(Debug)]
pub struct HttpBackend {
    config: BackendConfig,
    url: String,
    client: JsonClient,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let base = config.base_url.as_deref().expect("validated").trim_end_matches('/');
        let url = if base.ends_with("/v1") {
            format!("{base}/completions")
        } else {
            format!("{base}/v1/completions")
        };
        let bearer = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|v| !v.is_empty());
        let client = JsonClient::new(
            Duration::from_secs(config.timeout_secs.max(1)),
            config.retry.clone(),
            config.max_in_flight,
            bearer,
        );
        Ok(HttpBackend { config, url, client })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl ModelBackend for HttpBackend {
    fn complete(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<Completion>, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        params.validate()?;
        let mut out: Vec<Completion> = Vec::with_capacity(params.n as usize);
        // Servers may return fewer choices than asked; re-request the remainder.
        let mut rounds = 0;
        while out.len() < params.n as usize {
            rounds += 1;
            if rounds > self.config.retry.max_attempts {
                return Err(BackendError::BackendUnavailable {
                    attempts: rounds - 1,
                    last_error: format!("received {} of {} completions", out.len(), params.n),
                });
            }
            let remaining = params.n - out.len() as u32;
            let request = CompletionRequest {
                model: &self.config.model_name,
                prompt,
                temperature: params.temperature,
                top_p: params.top_p,
                n: remaining,
                max_tokens: params.max_tokens,
                logprobs: self.config.request_logprobs.then_some(1),
                stop: &params.stop,
                seed: params.seed.map(|s| s.wrapping_add(out.len() as u64)),
            };
            let mut response: CompletionResponse = self.client.post(&self.url, &request)?;
            response.choices.sort_by_key(|c| c.index);
            for choice in response.choices.into_iter().take(remaining as usize) {
                out.push(choice.into_completion()?);
            }
        }
        Ok(out)
    }

    fn max_in_flight(&self) -> usize {
        self.client.limit()
    }
}
