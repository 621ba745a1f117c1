//! Backend-agnostic text generation, token scoring, mask infilling, and
//! text embedding.
//!
//! Live clients (HTTP) and the deterministic [`mock`] implementations both
//! speak through the four traits defined here, so every pipeline stage can
//! run against either.

pub mod mock;

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::corpus::token_spans;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("text contains no occurrence of the mask marker")]
    NoMaskMarker,
    #[error("invalid decoding parameters: {0}")]
    InvalidParams(String),
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
    #[error("credential environment variable `{0}` is not set")]
    MissingCredential(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("no replay entry for prompt fingerprint {fingerprint:016x}")]
    MissingReplayEntry { fingerprint: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecodingStrategy {
    Beam { beam_size: u32 },
    Nucleus { top_p: f64, temperature: f64 },
}

/// Request-side decoding controls. Strategy-specific fields live inside the
/// strategy variant, so a beam request can never carry sampling knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodingParams {
    pub strategy: DecodingStrategy,
    pub max_new_tokens: u32,
    pub stop_sequences: Vec<String>,
}

impl DecodingParams {
    pub fn beam(beam_size: u32) -> Self {
        Self {
            strategy: DecodingStrategy::Beam { beam_size },
            max_new_tokens: 128,
            stop_sequences: Vec::new(),
        }
    }

    pub fn nucleus(top_p: f64, temperature: f64) -> Self {
        Self {
            strategy: DecodingStrategy::Nucleus { top_p, temperature },
            max_new_tokens: 128,
            stop_sequences: Vec::new(),
        }
    }

    pub fn with_max_new_tokens(mut self, max_new_tokens: u32) -> Self {
        self.max_new_tokens = max_new_tokens;
        self
    }

    pub fn with_stop_sequences<I, S>(mut self, stop: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stop_sequences = stop.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.strategy {
            DecodingStrategy::Beam { beam_size } => {
                if beam_size == 0 {
                    return Err(BackendError::InvalidParams("beam_size must be positive".into()));
                }
            }
            DecodingStrategy::Nucleus { top_p, temperature } => {
                if !(top_p > 0.0 && top_p <= 1.0) {
                    return Err(BackendError::InvalidParams(
                        "top_p must lie in (0, 1]".to_string(),
                    ));
                }
                if !(temperature > 0.0 && temperature.is_finite()) {
                    return Err(BackendError::InvalidParams(
                        "temperature must be a positive real".to_string(),
                    ));
                }
            }
        }
        if self.max_new_tokens == 0 {
            return Err(BackendError::InvalidParams("max_new_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinishReason {
    StopSequence,
    Length,
    EndOfText,
}

impl FinishReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FinishReason::StopSequence => "stop_sequence",
            FinishReason::Length => "length",
            FinishReason::EndOfText => "end_of_text",
        }
    }
}

/// One completed generation. `text` never contains the stop sequence that
/// terminated it.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub text: String,
    pub finish_reason: FinishReason,
}

/// Per-token log-likelihoods (natural log) for a scored text.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredText {
    tokens: Vec<String>,
    logprobs: Vec<f64>,
}

impl ScoredText {
    pub fn new(tokens: Vec<String>, logprobs: Vec<f64>) -> Result<Self, BackendError> {
        if tokens.len() != logprobs.len() {
            return Err(BackendError::MalformedResponse(
                "token and logprob lists have different lengths".into(),
            ));
        }
        if logprobs.iter().any(|lp| !lp.is_finite()) {
            return Err(BackendError::MalformedResponse("non-finite logprob".into()));
        }
        Ok(Self { tokens, logprobs })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn mean_logprob(&self) -> f64 {
        if self.logprobs.is_empty() {
            return 0.0;
        }
        self.logprobs.iter().sum::<f64>() / self.logprobs.len() as f64
    }
}

/// Fixed-dimension real vector with finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, BackendError> {
        if values.is_empty() {
            return Err(BackendError::MalformedResponse("embedding has zero dimensions".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::MalformedResponse(
                "embedding contains a non-finite component".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Connection settings for a live provider. The credential is named by the
/// environment variable holding it and is never stored in config files.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub auth_token_env: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub parallelism: usize,
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.parallelism == 0 {
            return Err(BackendError::InvalidParams("parallelism must be at least 1".into()));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(BackendError::InvalidParams("timeout_s must be positive".into()));
        }
        Ok(())
    }
}

pub trait TextGenerator {
    fn generate(&self, prompt: &str, params: &DecodingParams)
        -> Result<GenerationResult, BackendError>;
}

pub trait TextScorer {
    fn score(&self, text: &str) -> Result<ScoredText, BackendError>;
}

pub trait MaskInfiller {
    fn infill(&self, text: &str, mask_marker: &str) -> Result<String, BackendError>;
}

pub trait TextEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError>;
}

/// Truncate a raw completion at whichever limit triggers first: the earliest
/// stop-sequence occurrence or the `max_new_tokens` cap (whitespace tokens).
/// The triggering stop sequence is excluded from the returned text.
pub fn apply_decoding_limits(raw: &str, params: &DecodingParams) -> GenerationResult {
    let stop_cut = params
        .stop_sequences
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| raw.find(s.as_str()))
        .min();

    let cap = params.max_new_tokens as usize;
    let spans = token_spans(raw);
    let cap_cut = if spans.len() > cap { Some(spans[cap - 1].1) } else { None };

    match (stop_cut, cap_cut) {
        (Some(s), Some(c)) if s <= c => GenerationResult {
            text: raw[..s].to_string(),
            finish_reason: FinishReason::StopSequence,
        },
        (Some(s), None) => GenerationResult {
            text: raw[..s].to_string(),
            finish_reason: FinishReason::StopSequence,
        },
        (_, Some(c)) => GenerationResult {
            text: raw[..c].to_string(),
            finish_reason: FinishReason::Length,
        },
        (None, None) => {
            GenerationResult { text: raw.to_string(), finish_reason: FinishReason::EndOfText }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn params_validate_ranges() {
        assert!(DecodingParams::beam(3).validate().is_ok());
        assert!(DecodingParams::beam(0).validate().is_err());
        assert!(DecodingParams::nucleus(0.9, 0.6).validate().is_ok());
        assert!(DecodingParams::nucleus(0.0, 0.6).validate().is_err());
        assert!(DecodingParams::nucleus(1.1, 0.6).validate().is_err());
        assert!(DecodingParams::nucleus(0.9, 0.0).validate().is_err());
        assert!(DecodingParams::nucleus(0.9, 0.6).with_max_new_tokens(0).validate().is_err());
    }

    #[test]
    fn stop_sequence_truncates_and_is_excluded() {
        let params = DecodingParams::nucleus(0.9, 0.9)
            .with_stop_sequences(["\n"])
            .with_max_new_tokens(50);
        let out = apply_decoding_limits("hi\nthere", &params);
        assert_eq!(out.text, "hi");
        assert_eq!(out.finish_reason, FinishReason::StopSequence);
    }

    #[test]
    fn token_cap_applies_when_no_stop() {
        let params = DecodingParams::nucleus(0.9, 0.9).with_max_new_tokens(1);
        let out = apply_decoding_limits("hello world again", &params);
        assert_eq!(out.text, "hello");
        assert_eq!(out.finish_reason, FinishReason::Length);
    }

    #[test]
    fn earliest_limit_wins() {
        // Cap of one token bites before the stop sequence after "world".
        let params = DecodingParams::nucleus(0.9, 0.9)
            .with_stop_sequences(["\n"])
            .with_max_new_tokens(1);
        let out = apply_decoding_limits("hello world\nbye", &params);
        assert_eq!(out.text, "hello");
        assert_eq!(out.finish_reason, FinishReason::Length);

        // Stop inside the first token wins over a later cap.
        let params = DecodingParams::nucleus(0.9, 0.9)
            .with_stop_sequences(["\n"])
            .with_max_new_tokens(2);
        let out = apply_decoding_limits("hi\nthere again", &params);
        assert_eq!(out.text, "hi");
        assert_eq!(out.finish_reason, FinishReason::StopSequence);
    }

    #[test]
    fn unbounded_text_ends_naturally() {
        let params = DecodingParams::nucleus(0.9, 0.9).with_max_new_tokens(50);
        let out = apply_decoding_limits("short answer", &params);
        assert_eq!(out.text, "short answer");
        assert_eq!(out.finish_reason, FinishReason::EndOfText);
    }

    #[test]
    fn scored_text_validation() {
        assert!(ScoredText::new(vec!["a".into()], vec![-0.5, -0.5]).is_err());
        assert!(ScoredText::new(vec!["a".into()], vec![f64::NAN]).is_err());
        let s = ScoredText::new(vec!["a".into(), "b".into()], vec![-1.0, -3.0]).unwrap();
        assert_eq!(s.mean_logprob(), -2.0);
    }

    #[test]
    fn embedding_validation() {
        assert!(EmbeddingVector::new(vec![]).is_err());
        assert!(EmbeddingVector::new(vec![1.0, f64::INFINITY]).is_err());
        assert_eq!(EmbeddingVector::new(vec![0.0, 1.0]).unwrap().dim(), 2);
    }
}
