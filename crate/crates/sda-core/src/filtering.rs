//! Candidate filters and the text-overlap primitives behind them.
//!
//! The summary filter demands speaker markers, a minimum length, and low
//! ROUGE-L overlap against the already-accepted pool. The utterance filter
//! enforces a minimum token count. The dialogue filter rejects candidates
//! whose mean top-5 cosine similarity to the accepted pool is too high.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::backend::{BackendError, EmbeddingVector, TextEmbedder};
use crate::corpus::{render_dialogue, token_count, Dialogue, DialoguePool, Summary, SummaryPool, Utterance};
use crate::math::sqrt;

/// Number of largest similarities averaged by the dialogue filter.
pub const DIALOGUE_FILTER_TOP_K: usize = 5;

pub const SPEAKER_MARKER_A: &str = "User A";
pub const SPEAKER_MARKER_B: &str = "User B";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("rouge-l requires non-empty token sequences")]
    EmptyRougeInput,
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Acceptance thresholds for the three filters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterThresholds {
    /// Maximum tolerated pool ROUGE-L F1 for a new summary (exclusive).
    pub t_s: f64,
    /// Maximum tolerated mean top-5 cosine similarity for a new dialogue
    /// (exclusive).
    pub t_d: f64,
    pub min_summary_tokens: usize,
    pub min_utterance_tokens: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self { t_s: 0.35, t_d: 0.8, min_summary_tokens: 18, min_utterance_tokens: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterReason {
    Ok,
    MissingSpeakerMarker,
    TooShort,
    RougeTooHigh,
    SimilarityTooHigh,
}

impl FilterReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterReason::Ok => "ok",
            FilterReason::MissingSpeakerMarker => "missing_speaker_marker",
            FilterReason::TooShort => "too_short",
            FilterReason::RougeTooHigh => "rouge_too_high",
            FilterReason::SimilarityTooHigh => "similarity_too_high",
        }
    }
}

/// Outcome of one filter check. `reason` is [`FilterReason::Ok`] exactly when
/// the candidate was accepted; `score` carries the deciding overlap or
/// similarity value when one was computed.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterVerdict {
    accepted: bool,
    reason: FilterReason,
    score: Option<f64>,
}

impl FilterVerdict {
    pub fn accept(score: Option<f64>) -> Self {
        Self { accepted: true, reason: FilterReason::Ok, score }
    }

    pub fn reject(reason: FilterReason, score: Option<f64>) -> Self {
        debug_assert!(reason != FilterReason::Ok);
        Self { accepted: false, reason, score }
    }

    pub fn accepted(&self) -> bool {
        self.accepted
    }

    pub fn reason(&self) -> FilterReason {
        self.reason
    }

    pub fn score(&self) -> Option<f64> {
        self.score
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// ROUGE-L over token sequences: LCS length L gives precision L/|candidate|,
/// recall L/|reference|, and their harmonic mean as F1 (0 when L = 0).
pub fn rouge_l(candidate: &[&str], reference: &[&str]) -> Result<RougeScore, FilterError> {
    let (m, n) = (candidate.len(), reference.len());
    if m == 0 || n == 0 {
        return Err(FilterError::EmptyRougeInput);
    }
    // Two-row LCS table; the full-table oracle lives in the tests.
    let mut prev = alloc::vec![0usize; n + 1];
    let mut curr = alloc::vec![0usize; n + 1];
    for i in 0..m {
        for j in 0..n {
            curr[j + 1] = if candidate[i] == reference[j] {
                prev[j] + 1
            } else {
                curr[j].max(prev[j + 1])
            };
        }
        core::mem::swap(&mut prev, &mut curr);
        curr[0] = 0;
    }
    let lcs = prev[n];
    let precision = lcs as f64 / m as f64;
    let recall = lcs as f64 / n as f64;
    let f1 = if lcs == 0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(RougeScore { precision, recall, f1 })
}

/// Lowercased whitespace tokens, the unit ROUGE-L deduplication runs on.
pub fn lowercase_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Highest ROUGE-L F1 of `text` against every pool member. `None` on an
/// empty pool.
pub fn max_pool_rouge(text: &str, pool: &SummaryPool) -> Option<f64> {
    let candidate = lowercase_tokens(text);
    let candidate_refs: Vec<&str> = candidate.iter().map(String::as_str).collect();
    let mut max_f1: Option<f64> = None;
    for member in pool.iter() {
        let member_tokens = lowercase_tokens(member.text());
        let member_refs: Vec<&str> = member_tokens.iter().map(String::as_str).collect();
        let score = rouge_l(&candidate_refs, &member_refs)
            .expect("summary texts always carry at least the prefix tokens");
        max_f1 = Some(max_f1.map_or(score.f1, |m: f64| m.max(score.f1)));
    }
    max_f1
}

/// Summary filter: both speaker markers present, at least
/// `min_summary_tokens` tokens, and maximum pool ROUGE-L F1 below `t_s`
/// (vacuously true on an empty pool). Checks run in that order and the
/// first failure decides the reason.
pub fn summary_filter(
    summary: &Summary,
    pool: &SummaryPool,
    thresholds: &FilterThresholds,
) -> FilterVerdict {
    let text = summary.text();
    if !(text.contains(SPEAKER_MARKER_A) && text.contains(SPEAKER_MARKER_B)) {
        return FilterVerdict::reject(FilterReason::MissingSpeakerMarker, None);
    }
    if token_count(text) < thresholds.min_summary_tokens {
        return FilterVerdict::reject(FilterReason::TooShort, None);
    }
    match max_pool_rouge(text, pool) {
        None => FilterVerdict::accept(None),
        Some(max_f1) if max_f1 < thresholds.t_s => FilterVerdict::accept(Some(max_f1)),
        Some(max_f1) => FilterVerdict::reject(FilterReason::RougeTooHigh, Some(max_f1)),
    }
}

/// Utterance filter: at least `min_utterance_tokens` tokens.
pub fn utterance_filter(utterance: &Utterance, thresholds: &FilterThresholds) -> FilterVerdict {
    if token_count(utterance.text()) >= thresholds.min_utterance_tokens {
        FilterVerdict::accept(None)
    } else {
        FilterVerdict::reject(FilterReason::TooShort, None)
    }
}

/// Cosine similarity of two equal-dimension, non-zero vectors, clamped to
/// [-1, 1] against rounding spill.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, FilterError> {
    if a.dim() != b.dim() {
        return Err(FilterError::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(FilterError::ZeroVector);
    }
    Ok((dot / (sqrt(norm_a) * sqrt(norm_b))).clamp(-1.0, 1.0))
}

/// Cache of pool-member embeddings keyed by dialogue id, plus a tally of
/// embedder invocations.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    entries: BTreeMap<String, EmbeddingVector>,
    embed_calls: u64,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of times the backing embedder was invoked through this
    /// cache.
    pub fn embed_calls(&self) -> u64 {
        self.embed_calls
    }

    pub fn get_or_embed(
        &mut self,
        id: &str,
        text: &str,
        embedder: &dyn TextEmbedder,
    ) -> Result<&EmbeddingVector, BackendError> {
        if !self.entries.contains_key(id) {
            self.embed_calls += 1;
            let vector = embedder.embed(text)?;
            self.entries.insert(id.to_string(), vector);
        }
        Ok(self.entries.get(id).expect("inserted above"))
    }

    /// Embed without caching, still counted in the tally. Used for evolving
    /// candidates whose text changes between checks.
    pub fn embed_direct(
        &mut self,
        text: &str,
        embedder: &dyn TextEmbedder,
    ) -> Result<EmbeddingVector, BackendError> {
        self.embed_calls += 1;
        embedder.embed(text)
    }
}

/// Running top-k accumulator over f64 values; keeps the k largest seen.
struct TopK {
    k: usize,
    values: Vec<f64>, // ascending
}

impl TopK {
    fn new(k: usize) -> Self {
        Self { k, values: Vec::with_capacity(k) }
    }

    fn push(&mut self, v: f64) {
        if self.values.len() < self.k {
            let at = self.values.partition_point(|x| *x < v);
            self.values.insert(at, v);
        } else if v > self.values[0] {
            self.values.remove(0);
            let at = self.values.partition_point(|x| *x < v);
            self.values.insert(at, v);
        }
    }

    fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some(self.values.iter().sum::<f64>() / self.values.len() as f64)
        }
    }
}

/// Dialogue filter: embed the candidate's rendered text, take the cosine
/// similarity to every pool member (members cached by id), and accept when
/// the mean of the top-5 similarities (all of them when the pool is smaller)
/// stays below `t_d`. An empty pool accepts vacuously with no score.
pub fn dialogue_filter(
    candidate: &Dialogue,
    pool: &DialoguePool,
    embedder: &dyn TextEmbedder,
    cache: &mut EmbeddingCache,
    thresholds: &FilterThresholds,
) -> Result<FilterVerdict, FilterError> {
    if pool.is_empty() {
        return Ok(FilterVerdict::accept(None));
    }
    let candidate_embedding = cache.embed_direct(&render_dialogue(candidate), embedder)?;
    let mut top = TopK::new(DIALOGUE_FILTER_TOP_K);
    for member in pool.iter() {
        let member_embedding = cache.get_or_embed(member.id(), &render_dialogue(member), embedder)?;
        top.push(cosine_similarity(&candidate_embedding, member_embedding)?);
    }
    let mean = top.mean().expect("pool is non-empty");
    if mean < thresholds.t_d {
        Ok(FilterVerdict::accept(Some(mean)))
    } else {
        Ok(FilterVerdict::reject(FilterReason::SimilarityTooHigh, Some(mean)))
    }
}
