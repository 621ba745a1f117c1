//! HTTP clients for completion-style and embedding endpoints.
//!
//! The completion wire format is the de-facto standard of hosted and local
//! model servers: POST a prompt with decoding fields, read back
//! `choices[0]`. Scoring reuses the same endpoint with `max_tokens = 0` and
//! `logprobs = 0`, expecting the prompt's own token logprobs in the
//! response. Transient failures (connect errors, timeouts, 429, 5xx) are
//! retried with exponential backoff up to `max_retries`; the credential is
//! read once from the configured environment variable and never logged.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use sda_core::backend::{
    BackendConfig, BackendError, DecodingParams, DecodingStrategy, EmbeddingVector, FinishReason,
    GenerationResult, MaskInfiller, ScoredText, TextEmbedder, TextGenerator, TextScorer,
};
use sda_core::corpus::token_count;

const BACKOFF_BASE_S: f64 = 0.25;
const BACKOFF_CAP_S: f64 = 4.0;

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    top_p: f64,
    stop: &'a [String],
    logprobs: Option<u32>,
    n_beams: Option<u32>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<LogprobsPayload>,
}

#[derive(Deserialize)]
struct LogprobsPayload {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
}

struct Transport {
    client: reqwest::blocking::Client,
    auth: Option<String>,
    max_retries: u32,
}

enum RequestFailure {
    Retryable(String),
    Fatal(BackendError),
}

impl Transport {
    fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let auth = if config.auth_token_env.is_empty() {
            None
        } else {
            match std::env::var(&config.auth_token_env) {
                Ok(token) if !token.is_empty() => Some(token),
                _ => return Err(BackendError::MissingCredential(config.auth_token_env.clone())),
            }
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build()
            .map_err(|e| BackendError::Transport { message: e.to_string(), attempts: 0 })?;
        Ok(Self { client, auth, max_retries: config.max_retries })
    }

    fn post_json<B: Serialize>(&self, url: &str, body: &B) -> Result<String, BackendError> {
        let mut attempt = 0u32;
        loop {
            match self.try_post(url, body) {
                Ok(text) => return Ok(text),
                Err(RequestFailure::Fatal(err)) => return Err(err),
                Err(RequestFailure::Retryable(message)) => {
                    if attempt >= self.max_retries {
                        return Err(BackendError::Transport { message, attempts: attempt + 1 });
                    }
                    let backoff =
                        (BACKOFF_BASE_S * f64::powi(2.0, attempt as i32)).min(BACKOFF_CAP_S);
                    std::thread::sleep(Duration::from_secs_f64(backoff));
                    attempt += 1;
                }
            }
        }
    }

    fn try_post<B: Serialize>(&self, url: &str, body: &B) -> Result<String, RequestFailure> {
        let mut request = self.client.post(url).json(body);
        if let Some(token) = &self.auth {
            request = request.bearer_auth(token);
        }
        let response = request
            .send()
            .map_err(|e| RequestFailure::Retryable(format!("request failed: {e}")))?;
        let status = response.status();
        if status.is_success() {
            return response
                .text()
                .map_err(|e| RequestFailure::Retryable(format!("reading body failed: {e}")));
        }
        let message = format!("HTTP {status}");
        if status.as_u16() == 429 || status.is_server_error() {
            Err(RequestFailure::Retryable(message))
        } else {
            Err(RequestFailure::Fatal(BackendError::Transport { message, attempts: 1 }))
        }
    }
}

/// Completion-endpoint client covering generation, scoring, and infilling.
pub struct HttpCompletionClient {
    config: BackendConfig,
    transport: Transport,
    supports_beam: bool,
    beam_downgraded: AtomicBool,
}

impl HttpCompletionClient {
    pub fn new(config: BackendConfig, supports_beam: bool) -> Result<Self, BackendError> {
        let transport = Transport::new(&config)?;
        Ok(Self { config, transport, supports_beam, beam_downgraded: AtomicBool::new(false) })
    }

    /// True once any beam request was downgraded to greedy because the
    /// backend lacks beam support; surfaced in the run manifest.
    pub fn beam_downgraded(&self) -> bool {
        self.beam_downgraded.load(Ordering::Relaxed)
    }

    fn first_choice(&self, body: &str) -> Result<Choice, BackendError> {
        let response: CompletionResponse = serde_json::from_str(body)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::MalformedResponse("response has no choices".into()))
    }

    fn decoding_fields(&self, params: &DecodingParams) -> (f64, f64, Option<u32>) {
        match params.strategy {
            DecodingStrategy::Beam { beam_size } => {
                if self.supports_beam {
                    (1.0, 1.0, Some(beam_size))
                } else {
                    self.beam_downgraded.store(true, Ordering::Relaxed);
                    (0.0, 1.0, None)
                }
            }
            DecodingStrategy::Nucleus { top_p, temperature } => (temperature, top_p, None),
        }
    }
}

fn parse_finish_reason(raw: Option<&str>) -> FinishReason {
    match raw {
        Some("length") => FinishReason::Length,
        Some("stop") | Some("stop_sequence") => FinishReason::StopSequence,
        _ => FinishReason::EndOfText,
    }
}

impl TextGenerator for HttpCompletionClient {
    fn generate(
        &self,
        prompt: &str,
        params: &DecodingParams,
    ) -> Result<GenerationResult, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        params.validate()?;
        let (temperature, top_p, n_beams) = self.decoding_fields(params);
        let request = CompletionRequest {
            model: &self.config.model_name,
            prompt,
            max_tokens: params.max_new_tokens,
            temperature,
            top_p,
            stop: &params.stop_sequences,
            logprobs: None,
            n_beams,
        };
        let body = self.transport.post_json(&self.config.endpoint_url, &request)?;
        let choice = self.first_choice(&body)?;

        // Enforce the stop contract even if the server echoed the stop
        // sequence back.
        let mut text = choice.text;
        let mut finish_reason = parse_finish_reason(choice.finish_reason.as_deref());
        if let Some(cut) = params
            .stop_sequences
            .iter()
            .filter(|s| !s.is_empty())
            .filter_map(|s| text.find(s.as_str()))
            .min()
        {
            text.truncate(cut);
            finish_reason = FinishReason::StopSequence;
        }
        Ok(GenerationResult { text, finish_reason })
    }
}

impl TextScorer for HttpCompletionClient {
    fn score(&self, text: &str) -> Result<ScoredText, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let request = CompletionRequest {
            model: &self.config.model_name,
            prompt: text,
            max_tokens: 0,
            temperature: 0.0,
            top_p: 1.0,
            stop: &[],
            logprobs: Some(0),
            n_beams: None,
        };
        let body = self.transport.post_json(&self.config.endpoint_url, &request)?;
        let choice = self.first_choice(&body)?;
        let payload = choice
            .logprobs
            .ok_or_else(|| BackendError::MalformedResponse("response carries no logprobs".into()))?;
        let mut logprobs = Vec::with_capacity(payload.token_logprobs.len());
        for lp in payload.token_logprobs {
            logprobs.push(lp.ok_or_else(|| {
                BackendError::MalformedResponse("null token logprob".into())
            })?);
        }
        ScoredText::new(payload.tokens, logprobs)
    }
}

impl MaskInfiller for HttpCompletionClient {
    fn infill(&self, text: &str, mask_marker: &str) -> Result<String, BackendError> {
        if mask_marker.is_empty() || !text.contains(mask_marker) {
            return Err(BackendError::NoMaskMarker);
        }
        let request = CompletionRequest {
            model: &self.config.model_name,
            prompt: text,
            max_tokens: (token_count(text) as u32).saturating_mul(2).max(64),
            temperature: 0.0,
            top_p: 1.0,
            stop: &[],
            logprobs: None,
            n_beams: None,
        };
        let body = self.transport.post_json(&self.config.endpoint_url, &request)?;
        let choice = self.first_choice(&body)?;
        if choice.text.contains(mask_marker) {
            return Err(BackendError::MalformedResponse(
                "infill response still contains the mask marker".into(),
            ));
        }
        Ok(choice.text)
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

/// Embedding-endpoint client: POST `{"model", "input"}` and read
/// `data[0].embedding`. The first response pins the dimension; later
/// mismatches are malformed.
pub struct HttpEmbedder {
    config: BackendConfig,
    transport: Transport,
    dim: AtomicUsize,
}

impl HttpEmbedder {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let transport = Transport::new(&config)?;
        Ok(Self { config, transport, dim: AtomicUsize::new(0) })
    }
}

impl TextEmbedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let request = EmbeddingRequest { model: &self.config.model_name, input: text };
        let body = self.transport.post_json(&self.config.endpoint_url, &request)?;
        let response: EmbeddingResponse = serde_json::from_str(&body)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let datum = response
            .data
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::MalformedResponse("response has no embedding".into()))?;
        let vector = EmbeddingVector::new(datum.embedding)?;
        let seen = self.dim.swap(vector.dim(), Ordering::Relaxed);
        if seen != 0 && seen != vector.dim() {
            return Err(BackendError::MalformedResponse(format!(
                "embedding dimension changed from {seen} to {}",
                vector.dim()
            )));
        }
        Ok(vector)
    }
}
