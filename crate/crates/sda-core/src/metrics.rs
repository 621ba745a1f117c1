//! Corpus-level evaluation: a clustering-based semantic-diversity score,
//! distinct-n, and mean perplexity.
//!
//! The diversity score fits k-means on the seed embeddings with
//! k = round(sqrt(|seed| / 2)) clusters and averages each augmented
//! embedding's Euclidean distance to its nearest centroid; larger means the
//! augmented data spreads wider around the seed distribution.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::backend::{BackendError, EmbeddingVector, TextEmbedder, TextScorer};
use crate::corpus::{render_dialogue, tokenize, DialoguePool};
use crate::math::{exp, round_half_even, sqrt};

const KMEANS_MAX_ITERATIONS: usize = 300;
const KMEANS_SHIFT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("cannot cluster an empty point set")]
    EmptyPoints,
    #[error("k must lie between 1 and the number of points; got k={k} for {points} point(s)")]
    InvalidK { k: usize, points: usize },
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("n-gram order must be at least 1")]
    ZeroNgramOrder,
    #[error("pool yields no {n}-gram")]
    NoNgrams { n: usize },
    #[error("pool is empty")]
    EmptyPool,
    #[error("scored text has no tokens")]
    EmptyScore,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// A fitted k-means model. At convergence every point is assigned to its
/// nearest centroid and `inertia` is the sum of squared distances to the
/// assigned centroids. `inertia_history` records the inertia of each
/// assignment pass, which is non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub centroids: Vec<EmbeddingVector>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations_run: usize,
    pub inertia_history: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        sum += d * d;
    }
    sum
}

/// Index of the nearest centroid and the Euclidean distance to it. Ties go
/// to the lower index.
pub fn nearest_centroid(point: &EmbeddingVector, centroids: &[EmbeddingVector]) -> (usize, f64) {
    debug_assert!(!centroids.is_empty());
    let mut best = 0;
    let mut best_d2 = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d2 = squared_distance(point.values(), c.values());
        if d2 < best_d2 {
            best_d2 = d2;
            best = i;
        }
    }
    (best, sqrt(best_d2))
}

/// Canonical point order for seeding: lexicographic over components. This
/// makes the k-means++ draw independent of the input order.
fn canonical_order(points: &[EmbeddingVector]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (points[a].values(), points[b].values());
        for (x, y) in pa.iter().zip(pb) {
            match x.total_cmp(y) {
                core::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        core::cmp::Ordering::Equal
    });
    order
}

fn kmeans_plus_plus_seeds(
    points: &[EmbeddingVector],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<EmbeddingVector> {
    let order = canonical_order(points);
    let mut centroids: Vec<EmbeddingVector> = Vec::with_capacity(k);
    let mut chosen: BTreeSet<usize> = BTreeSet::new();

    let first = order[rng.gen_range(0..order.len())];
    chosen.insert(first);
    centroids.push(points[first].clone());

    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p.values(), centroids[0].values()))
        .collect();

    while centroids.len() < k {
        let total: f64 = order.iter().map(|&i| d2[i]).sum();
        let next = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut picked = None;
            for &i in &order {
                r -= d2[i];
                if r <= 0.0 && !chosen.contains(&i) {
                    picked = Some(i);
                    break;
                }
            }
            // Rounding can push r past every candidate; take the last
            // unchosen point with positive weight, else the first unchosen.
            picked
                .or_else(|| order.iter().rev().copied().find(|i| d2[*i] > 0.0 && !chosen.contains(i)))
                .or_else(|| order.iter().copied().find(|i| !chosen.contains(i)))
                .expect("k <= points, so an unchosen point exists")
        } else {
            // All remaining points duplicate an existing centroid.
            order
                .iter()
                .copied()
                .find(|i| !chosen.contains(i))
                .expect("k <= points, so an unchosen point exists")
        };
        chosen.insert(next);
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            let d = squared_distance(p.values(), points[next].values());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

fn assign(points: &[EmbeddingVector], centroids: &[EmbeddingVector]) -> (Vec<usize>, f64) {
    let mut assignments = Vec::with_capacity(points.len());
    let mut inertia = 0.0;
    for p in points {
        let mut best = 0;
        let mut best_d2 = f64::INFINITY;
        for (i, c) in centroids.iter().enumerate() {
            let d2 = squared_distance(p.values(), c.values());
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        assignments.push(best);
        inertia += best_d2;
    }
    (assignments, inertia)
}

/// Lloyd's algorithm with a seeded k-means++ initialization. Runs until the
/// largest centroid shift drops below 1e-4 or 300 iterations, whichever
/// comes first. Deterministic for a fixed seed, independent of point order.
pub fn kmeans(
    points: &[EmbeddingVector],
    k: usize,
    seed: u64,
) -> Result<KMeansModel, MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::EmptyPoints);
    }
    if k == 0 || k > points.len() {
        return Err(MetricsError::InvalidK { k, points: points.len() });
    }
    let dim = points[0].dim();
    for p in points {
        if p.dim() != dim {
            return Err(MetricsError::DimensionMismatch { left: dim, right: p.dim() });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus_seeds(points, k, &mut rng);

    let mut inertia_history = Vec::new();
    let mut iterations_run = 0;
    let (mut assignments, mut inertia) = assign(points, &centroids);
    inertia_history.push(inertia);

    while iterations_run < KMEANS_MAX_ITERATIONS {
        // Mean of each cluster; empty clusters keep their centroid.
        let mut sums = alloc::vec![alloc::vec![0.0f64; dim]; k];
        let mut counts = alloc::vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p.values()) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        let mut next_centroids = Vec::with_capacity(k);
        for (i, sum) in sums.into_iter().enumerate() {
            if counts[i] == 0 {
                next_centroids.push(centroids[i].clone());
                continue;
            }
            let mean: Vec<f64> = sum.into_iter().map(|s| s / counts[i] as f64).collect();
            shift = shift.max(sqrt(squared_distance(&mean, centroids[i].values())));
            next_centroids.push(EmbeddingVector::new(mean).expect("means of finite points"));
        }
        centroids = next_centroids;
        iterations_run += 1;

        let (next_assignments, next_inertia) = assign(points, &centroids);
        debug_assert!(next_inertia <= inertia + 1e-9);
        assignments = next_assignments;
        inertia = next_inertia;
        inertia_history.push(inertia);

        if shift < KMEANS_SHIFT_TOLERANCE {
            break;
        }
    }

    Ok(KMeansModel { centroids, assignments, inertia, iterations_run, inertia_history })
}

/// Cluster count for a seed pool of `n` dialogues:
/// round-half-even of sqrt(n / 2), floored at 1.
pub fn cluster_count(seed_pool_len: usize) -> usize {
    let k = round_half_even(sqrt(seed_pool_len as f64 / 2.0)) as usize;
    k.max(1)
}

/// Everything the diversity computation produced, kept so that exports and
/// reports reuse the same embeddings and fit.
#[derive(Debug, Clone)]
pub struct SdAnalysis {
    pub value: f64,
    /// Distance of each augmented embedding to its nearest seed centroid.
    pub distances: Vec<f64>,
    /// Index of that centroid, aligned with `distances`.
    pub nearest: Vec<usize>,
    pub k: usize,
    pub model: KMeansModel,
    pub seed_embeddings: Vec<EmbeddingVector>,
    pub aug_embeddings: Vec<EmbeddingVector>,
}

/// Semantic diversity of `d_aug` with respect to `d_seed`: mean Euclidean
/// distance from each augmented embedding to its nearest seed-cluster
/// centroid.
pub fn semantic_diversity(
    d_seed: &DialoguePool,
    d_aug: &DialoguePool,
    embedder: &dyn TextEmbedder,
    seed: u64,
) -> Result<SdAnalysis, MetricsError> {
    if d_seed.is_empty() || d_aug.is_empty() {
        return Err(MetricsError::EmptyPool);
    }
    let embed_pool = |pool: &DialoguePool| -> Result<Vec<EmbeddingVector>, BackendError> {
        pool.iter().map(|d| embedder.embed(&render_dialogue(d))).collect()
    };
    let seed_embeddings = embed_pool(d_seed)?;
    let aug_embeddings = embed_pool(d_aug)?;

    let k = cluster_count(d_seed.len());
    let model = kmeans(&seed_embeddings, k, seed)?;

    let mut distances = Vec::with_capacity(aug_embeddings.len());
    let mut nearest = Vec::with_capacity(aug_embeddings.len());
    for h in &aug_embeddings {
        if h.dim() != seed_embeddings[0].dim() {
            return Err(MetricsError::DimensionMismatch {
                left: seed_embeddings[0].dim(),
                right: h.dim(),
            });
        }
        let (idx, dist) = nearest_centroid(h, &model.centroids);
        nearest.push(idx);
        distances.push(dist);
    }
    let value = distances.iter().sum::<f64>() / distances.len() as f64;

    Ok(SdAnalysis { value, distances, nearest, k, model, seed_embeddings, aug_embeddings })
}

/// Distinct-n: unique token n-grams divided by total n-gram count, with
/// n-grams drawn within utterances (never across turn boundaries),
/// case-sensitive.
pub fn distinct_n(pool: &DialoguePool, n: usize) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::ZeroNgramOrder);
    }
    let mut unique: BTreeSet<Vec<&str>> = BTreeSet::new();
    let mut total: u64 = 0;
    for dialogue in pool.iter() {
        for utterance in dialogue.utterances() {
            let tokens = tokenize(utterance.text());
            if tokens.len() < n {
                continue;
            }
            for gram in tokens.windows(n) {
                total += 1;
                unique.insert(gram.to_vec());
            }
        }
    }
    if total == 0 {
        return Err(MetricsError::NoNgrams { n });
    }
    Ok(unique.len() as f64 / total as f64)
}

/// Mean perplexity over dialogues: each dialogue's rendered text is scored
/// and contributes exp(-mean token logprob); the corpus value is the
/// arithmetic mean of those.
pub fn corpus_perplexity(
    pool: &DialoguePool,
    scorer: &dyn TextScorer,
) -> Result<f64, MetricsError> {
    if pool.is_empty() {
        return Err(MetricsError::EmptyPool);
    }
    let mut sum = 0.0;
    for dialogue in pool.iter() {
        let scored = scorer.score(&render_dialogue(dialogue))?;
        if scored.is_empty() {
            return Err(MetricsError::EmptyScore);
        }
        sum += exp(-scored.mean_logprob());
    }
    Ok(sum / pool.len() as f64)
}

/// Aggregate report for one evaluated pool.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    pub sd_value: f64,
    pub per_point_distances: Vec<f64>,
    pub k: usize,
    pub distinct_1: f64,
    pub distinct_2: f64,
    pub mean_ppl: Option<f64>,
}

/// Compute the full report for `d_aug` against `d_seed`: semantic
/// diversity, distinct-1/2 of the evaluated pool, and mean perplexity when
/// a scorer is available.
pub fn evaluate_pools(
    d_seed: &DialoguePool,
    d_aug: &DialoguePool,
    embedder: &dyn TextEmbedder,
    scorer: Option<&dyn TextScorer>,
    seed: u64,
) -> Result<(DiversityReport, SdAnalysis), MetricsError> {
    let analysis = semantic_diversity(d_seed, d_aug, embedder, seed)?;
    let distinct_1 = distinct_n(d_aug, 1)?;
    let distinct_2 = distinct_n(d_aug, 2)?;
    let mean_ppl = match scorer {
        Some(s) => Some(corpus_perplexity(d_aug, s)?),
        None => None,
    };
    let report = DiversityReport {
        sd_value: analysis.value,
        per_point_distances: analysis.distances.clone(),
        k: analysis.k,
        distinct_1,
        distinct_2,
        mean_ppl,
    };
    Ok((report, analysis))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolLabel {
    Seed,
    Aug,
}

impl PoolLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolLabel::Seed => "seed",
            PoolLabel::Aug => "aug",
        }
    }
}

/// One row of the embedding export: which pool the dialogue came from, its
/// embedding, and its nearest centroid in the fitted seed clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingExportRecord {
    pub id: String,
    pub pool: PoolLabel,
    pub embedding: Vec<f64>,
    pub centroid: usize,
    pub distance: f64,
}

/// Flatten a diversity analysis into one record per dialogue, seed rows
/// first, preserving pool order. Augmented rows reuse the analysis
/// distances verbatim.
pub fn export_records(
    d_seed: &DialoguePool,
    d_aug: &DialoguePool,
    analysis: &SdAnalysis,
) -> Vec<EmbeddingExportRecord> {
    let mut rows = Vec::with_capacity(d_seed.len() + d_aug.len());
    for (dialogue, embedding) in d_seed.iter().zip(&analysis.seed_embeddings) {
        let (centroid, distance) = nearest_centroid(embedding, &analysis.model.centroids);
        rows.push(EmbeddingExportRecord {
            id: dialogue.id().to_string(),
            pool: PoolLabel::Seed,
            embedding: embedding.values().to_vec(),
            centroid,
            distance,
        });
    }
    for (i, dialogue) in d_aug.iter().enumerate() {
        rows.push(EmbeddingExportRecord {
            id: dialogue.id().to_string(),
            pool: PoolLabel::Aug,
            embedding: analysis.aug_embeddings[i].values().to_vec(),
            centroid: analysis.nearest[i],
            distance: analysis.distances[i],
        });
    }
    rows
}

/// Group pool ids by their nearest centroid; handy for inspecting fits.
pub fn cluster_membership(model: &KMeansModel, ids: &[String]) -> BTreeMap<usize, Vec<String>> {
    let mut clusters: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (id, &assignment) in ids.iter().zip(&model.assignments) {
        clusters.entry(assignment).or_default().push(id.clone());
    }
    clusters
}
