//! Deterministic mock backends for offline runs and tests.
//!
//! [`ReplayGenerator`] answers from a fingerprint-keyed completion table and
//! is a pure function of the prompt. [`SyntheticGenerator`] fabricates
//! summary- or utterance-shaped text from a seeded generator; its per-call
//! randomness mixes the seed, the prompt fingerprint, and an internal call
//! counter, so a full pipeline run is bit-reproducible at parallelism 1 and
//! retries of the same prompt still see fresh samples.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{
    apply_decoding_limits, BackendError, DecodingParams, EmbeddingVector, GenerationResult,
    MaskInfiller, ScoredText, TextEmbedder, TextGenerator, TextScorer,
};
use crate::corpus::{token_spans, tokenize, SUMMARY_PREFIX};
use crate::math::{fnv1a_64, mix_seeds, sqrt};
use crate::prompting::S2S_COMPLETION_CUE;

/// Stable 64-bit fingerprint of a prompt, used to key replay tables.
pub fn prompt_fingerprint(prompt: &str) -> u64 {
    fnv1a_64(prompt.as_bytes())
}

/// Generation mock that replays scripted completions keyed by prompt
/// fingerprint. Unknown prompts are an error, which keeps golden tests honest.
#[derive(Debug, Default, Clone)]
pub struct ReplayGenerator {
    entries: BTreeMap<u64, String>,
}

impl ReplayGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prompt: &str, completion: impl Into<String>) {
        self.entries.insert(prompt_fingerprint(prompt), completion.into());
    }

    pub fn insert_by_fingerprint(&mut self, fingerprint: u64, completion: impl Into<String>) {
        self.entries.insert(fingerprint, completion.into());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl TextGenerator for ReplayGenerator {
    fn generate(
        &self,
        prompt: &str,
        params: &DecodingParams,
    ) -> Result<GenerationResult, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let fingerprint = prompt_fingerprint(prompt);
        let raw = self
            .entries
            .get(&fingerprint)
            .ok_or(BackendError::MissingReplayEntry { fingerprint })?;
        Ok(apply_decoding_limits(raw, params))
    }
}

/// Knobs for [`SyntheticGenerator`]. Probabilities select degenerate outputs
/// so that filter and retry paths can be exercised deliberately.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub vocab: Vec<String>,
    /// Inclusive range of body tokens in a fabricated summary.
    pub summary_body_tokens: (usize, usize),
    /// Inclusive range of tokens in a fabricated utterance.
    pub utterance_tokens: (usize, usize),
    /// Expected number of near-unique code tokens per text.
    pub unique_tokens_per_text: usize,
    /// Chance that an utterance ends with the stop phrase.
    pub p_bye: f64,
    /// Chance of an utterance too short to pass the utterance filter.
    pub p_short_utterance: f64,
    /// Chance of a summary missing the `User B` marker.
    pub p_missing_marker: f64,
    /// Chance of a summary too short to pass the summary filter.
    pub p_short_summary: f64,
}

const VOCAB: &[&str] = &[
    "about", "afternoon", "again", "agree", "airport", "always", "amazing", "anything",
    "apartment", "appointment", "baking", "bicycle", "birthday", "books", "breakfast", "brother",
    "budget", "busy", "camera", "camping", "careful", "cheaper", "chess", "cinema", "city",
    "class", "coffee", "concert", "cooking", "corner", "country", "cousin", "dancing",
    "daughter", "deadline", "delicious", "dentist", "dinner", "doctor", "driving", "early",
    "evening", "exercise", "expensive", "family", "famous", "favorite", "festival", "finish",
    "flowers", "football", "forecast", "forget", "friends", "garden", "grocery", "guitar",
    "happy", "health", "hiking", "holiday", "homework", "hospital", "hotel", "hungry",
    "interview", "island", "jacket", "keys", "kitchen", "lawyer", "league", "lecture",
    "library", "lucky", "lunch", "machine", "manager", "market", "medicine", "meeting",
    "message", "morning", "mountain", "movie", "museum", "music", "neighbor", "nervous",
    "newspaper", "noodles", "office", "orange", "orchestra", "outside", "painting", "parents",
    "parking", "party", "passport", "perfect", "phone", "photos", "piano", "picnic", "plane",
    "plants", "pleasant", "practice", "present", "project", "promise", "puzzle", "rain",
    "ready", "recipe", "relax", "repair", "report", "restaurant", "river", "running",
    "schedule", "school", "seaside", "season", "sister", "sleepy", "snow", "soccer", "station",
    "store", "street", "student", "subway", "summer", "sunny", "surprise", "swimming",
    "teacher", "team", "temple", "theater", "ticket", "tired", "tomorrow", "tonight", "train",
    "travel", "umbrella", "vacation", "vegetables", "village", "violin", "visit", "waiting",
    "walking", "weather", "weekend", "window", "winter", "wonderful", "yesterday", "yoga",
];

const SUMMARY_VERBS: &[&str] = &[
    "asks", "tells", "reminds", "invites", "updates", "phones", "thanks", "persuades",
];

const SUMMARY_GLUE: &[&str] =
    &["about", "whether", "because", "regarding", "after", "before", "and", "so"];

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            vocab: VOCAB.iter().map(|w| (*w).to_string()).collect(),
            summary_body_tokens: (28, 40),
            utterance_tokens: (6, 12),
            unique_tokens_per_text: 3,
            p_bye: 0.35,
            p_short_utterance: 0.0,
            p_missing_marker: 0.0,
            p_short_summary: 0.0,
        }
    }
}

/// Seeded pseudo-text generator. The shape of the output is inferred from
/// the prompt's trailing cue: a numbered-summary cue yields a full summary,
/// the summary prefix yields a summary body, and a speaker cue yields one
/// utterance.
#[derive(Debug)]
pub struct SyntheticGenerator {
    seed: u64,
    config: SyntheticConfig,
    calls: AtomicU64,
}

impl SyntheticGenerator {
    pub fn new(seed: u64) -> Self {
        Self::with_config(seed, SyntheticConfig::default())
    }

    pub fn with_config(seed: u64, config: SyntheticConfig) -> Self {
        Self { seed, config, calls: AtomicU64::new(0) }
    }

    fn call_rng(&self, prompt: &str) -> ChaCha8Rng {
        let call = self.calls.fetch_add(1, Ordering::Relaxed);
        ChaCha8Rng::seed_from_u64(mix_seeds(mix_seeds(self.seed, prompt_fingerprint(prompt)), call))
    }

    fn pick<'a>(&'a self, rng: &mut ChaCha8Rng, words: &'a [String]) -> &'a str {
        &words[rng.gen_range(0..words.len())]
    }

    fn body_token(&self, rng: &mut ChaCha8Rng, p_code: f64) -> String {
        if rng.gen_bool(p_code) {
            format!("#{:05}", rng.gen_range(0..100_000u32))
        } else {
            self.pick(rng, &self.config.vocab).to_string()
        }
    }

    fn summary(&self, rng: &mut ChaCha8Rng, with_prefix: bool) -> String {
        let cfg = &self.config;
        let (lo, hi) = cfg.summary_body_tokens;
        let n_body =
            if rng.gen_bool(cfg.p_short_summary) { 5 } else { rng.gen_range(lo..=hi.max(lo)) };
        let skip_second_marker = rng.gen_bool(cfg.p_missing_marker);
        let p_code = (cfg.unique_tokens_per_text as f64 / n_body.max(1) as f64).min(1.0);

        let mut tokens: Vec<String> = Vec::new();
        if with_prefix {
            tokens.push(SUMMARY_PREFIX.to_string());
        }
        tokens.push("User".to_string());
        tokens.push("A".to_string());
        tokens.push(self.pick_static(rng, SUMMARY_VERBS).to_string());
        let split = n_body / 3 + rng.gen_range(0..=n_body / 3);
        for i in 0..n_body {
            if i == split && !skip_second_marker {
                tokens.push("User".to_string());
                tokens.push("B".to_string());
                tokens.push(self.pick_static(rng, SUMMARY_GLUE).to_string());
            }
            tokens.push(self.body_token(rng, p_code));
        }
        let mut text = tokens.join(" ");
        text.push('.');
        text
    }

    fn pick_static<'a>(&self, rng: &mut ChaCha8Rng, words: &'a [&'a str]) -> &'a str {
        words[rng.gen_range(0..words.len())]
    }

    fn utterance(&self, rng: &mut ChaCha8Rng) -> String {
        let cfg = &self.config;
        if rng.gen_bool(cfg.p_short_utterance) {
            let mut toks: Vec<String> = Vec::new();
            for _ in 0..3 {
                toks.push(self.pick(rng, &cfg.vocab).to_string());
            }
            return toks.join(" ");
        }
        let (lo, hi) = cfg.utterance_tokens;
        let n = rng.gen_range(lo..=hi.max(lo));
        let p_code = (cfg.unique_tokens_per_text as f64 / n.max(1) as f64).min(1.0);
        let mut toks: Vec<String> = Vec::new();
        for _ in 0..n {
            toks.push(self.body_token(rng, p_code));
        }
        if rng.gen_bool(cfg.p_bye) {
            for w in ["bye,", "see", "you", "soon"] {
                toks.push(w.to_string());
            }
        }
        toks.join(" ")
    }

    fn generic(&self, rng: &mut ChaCha8Rng) -> String {
        let mut toks: Vec<String> = Vec::new();
        for _ in 0..8 {
            toks.push(self.pick(rng, &self.config.vocab).to_string());
        }
        toks.join(" ")
    }
}

impl TextGenerator for SyntheticGenerator {
    fn generate(
        &self,
        prompt: &str,
        params: &DecodingParams,
    ) -> Result<GenerationResult, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let mut rng = self.call_rng(prompt);
        let raw = if prompt.ends_with(S2S_COMPLETION_CUE) {
            self.summary(&mut rng, true)
        } else if prompt.ends_with(SUMMARY_PREFIX) {
            self.summary(&mut rng, false)
        } else if prompt.ends_with("User A:") || prompt.ends_with("User B:") {
            self.utterance(&mut rng)
        } else {
            self.generic(&mut rng)
        };
        Ok(apply_decoding_limits(&raw, params))
    }
}

/// Scorer that assigns one fixed logprob to every whitespace token.
#[derive(Debug, Clone)]
pub struct ConstantScorer {
    logprob_per_token: f64,
}

impl ConstantScorer {
    pub fn new(logprob_per_token: f64) -> Self {
        Self { logprob_per_token }
    }
}

impl TextScorer for ConstantScorer {
    fn score(&self, text: &str) -> Result<ScoredText, BackendError> {
        let tokens: Vec<String> = tokenize(text).into_iter().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let n = tokens.len();
        ScoredText::new(tokens, alloc::vec![self.logprob_per_token; n])
    }
}

/// Token-hash bag-of-words embedder: each token hashes to one signed
/// component, the sum is L2-normalized. Deterministic across processes.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(64)
    }
}

impl TextEmbedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let mut values = alloc::vec![0.0f64; self.dim];
        for tok in tokens {
            let h = fnv1a_64(tok.as_bytes());
            let idx = (h % self.dim as u64) as usize;
            let sign = if (h >> 32) & 1 == 1 { 1.0 } else { -1.0 };
            values[idx] += sign;
        }
        let norm = sqrt(values.iter().map(|v| v * v).sum::<f64>());
        if norm == 0.0 {
            // Signed counts cancelled out; fall back to a one-hot on the
            // whole-text hash so the vector stays usable.
            let idx = (fnv1a_64(text.as_bytes()) % self.dim as u64) as usize;
            values[idx] = 1.0;
        } else {
            for v in values.iter_mut() {
                *v /= norm;
            }
        }
        EmbeddingVector::new(values)
    }
}

/// Embedder that looks texts up in a fixed table, with an optional fallback
/// vector for everything else. Used to construct exact geometric scenarios.
#[derive(Debug, Default, Clone)]
pub struct TableEmbedder {
    entries: BTreeMap<String, Vec<f64>>,
    fallback: Option<Vec<f64>>,
}

impl TableEmbedder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fallback(values: Vec<f64>) -> Self {
        Self { entries: BTreeMap::new(), fallback: Some(values) }
    }

    pub fn insert(&mut self, text: impl Into<String>, values: Vec<f64>) {
        self.entries.insert(text.into(), values);
    }
}

impl TextEmbedder for TableEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let values = self
            .entries
            .get(text)
            .or(self.fallback.as_ref())
            .ok_or_else(|| {
                BackendError::MalformedResponse(format!(
                    "no embedding table entry for text of {} byte(s)",
                    text.len()
                ))
            })?
            .clone();
        EmbeddingVector::new(values)
    }
}

/// Infiller that replaces marker tokens by their token position in the
/// received text, with a fixed default for unlisted positions. Markers must
/// stand alone as whole tokens.
#[derive(Debug, Clone)]
pub struct TableInfiller {
    replacements: BTreeMap<usize, String>,
    default_fill: String,
}

impl TableInfiller {
    pub fn new(default_fill: impl Into<String>) -> Self {
        Self { replacements: BTreeMap::new(), default_fill: default_fill.into() }
    }

    pub fn set(&mut self, token_position: usize, replacement: impl Into<String>) {
        self.replacements.insert(token_position, replacement.into());
    }
}

fn splice_markers(
    text: &str,
    mask_marker: &str,
    mut fill: impl FnMut(usize) -> String,
) -> Result<String, BackendError> {
    if mask_marker.is_empty() || !text.contains(mask_marker) {
        return Err(BackendError::NoMaskMarker);
    }
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for (pos, (start, end)) in token_spans(text).into_iter().enumerate() {
        out.push_str(&text[cursor..start]);
        let token = &text[start..end];
        if token == mask_marker {
            out.push_str(&fill(pos));
        } else {
            out.push_str(token);
        }
        cursor = end;
    }
    out.push_str(&text[cursor..]);
    Ok(out)
}

impl MaskInfiller for TableInfiller {
    fn infill(&self, text: &str, mask_marker: &str) -> Result<String, BackendError> {
        splice_markers(text, mask_marker, |pos| {
            self.replacements.get(&pos).unwrap_or(&self.default_fill).clone()
        })
    }
}

/// Infiller that fills each marker with a vocabulary word chosen
/// deterministically from (seed, text, marker position).
#[derive(Debug, Clone)]
pub struct HashInfiller {
    seed: u64,
    vocab: Vec<String>,
}

impl HashInfiller {
    pub fn new(seed: u64) -> Self {
        Self { seed, vocab: VOCAB.iter().map(|w| (*w).to_string()).collect() }
    }

    pub fn with_vocab(seed: u64, vocab: Vec<String>) -> Self {
        assert!(!vocab.is_empty(), "infill vocabulary must be non-empty");
        Self { seed, vocab }
    }
}

impl MaskInfiller for HashInfiller {
    fn infill(&self, text: &str, mask_marker: &str) -> Result<String, BackendError> {
        let text_hash = fnv1a_64(text.as_bytes());
        splice_markers(text, mask_marker, |pos| {
            let h = mix_seeds(self.seed, text_hash ^ pos as u64);
            self.vocab[(h % self.vocab.len() as u64) as usize].clone()
        })
    }
}
