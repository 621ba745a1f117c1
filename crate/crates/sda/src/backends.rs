//! Provider construction from configuration: each of the four slots
//! (generation, scoring, infill, embedding) independently selects a mock,
//! a replay table, or a live HTTP client.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use sda_core::backend::mock::{
    ConstantScorer, HashEmbedder, HashInfiller, ReplayGenerator, SyntheticConfig,
    SyntheticGenerator,
};
use sda_core::backend::{MaskInfiller, TextEmbedder, TextGenerator, TextScorer};

use crate::config::{FileConfig, ProviderSection};
use crate::error::CliError;
use crate::http::{HttpCompletionClient, HttpEmbedder};

/// The four provider slots a run works with. Scoring and infill are
/// optional; stages that need them fail with a capability error when the
/// slot is configured as `none`.
pub struct Providers {
    pub generator: Arc<dyn TextGenerator + Send + Sync>,
    pub scorer: Option<Arc<dyn TextScorer + Send + Sync>>,
    pub infiller: Option<Arc<dyn MaskInfiller + Send + Sync>>,
    pub embedder: Arc<dyn TextEmbedder + Send + Sync>,
    /// Completion client kept for downgrade reporting, when one was built.
    generation_http: Option<Arc<HttpCompletionClient>>,
}

impl Providers {
    /// Manifest notes about degraded behavior, currently only the
    /// beam-to-greedy downgrade.
    pub fn downgrades(&self) -> Vec<String> {
        let mut notes = Vec::new();
        if let Some(client) = &self.generation_http {
            if client.beam_downgraded() {
                notes.push(
                    "generation backend lacks beam support; beam requests ran greedy".to_string(),
                );
            }
        }
        notes
    }
}

fn salt(role: &str) -> u64 {
    // Stable per-role derivation for mock seeds.
    role.bytes().fold(0xa076_1d64_78bd_642fu64, |acc, b| {
        (acc ^ u64::from(b)).wrapping_mul(0x100_0000_01b3)
    })
}

fn mock_seed(provider: &ProviderSection, rng_seed: u64, role: &str) -> u64 {
    provider.mock_seed.unwrap_or(rng_seed ^ salt(role))
}

#[derive(Deserialize)]
struct ReplayRecord {
    prompt: Option<String>,
    fingerprint: Option<String>,
    completion: String,
}

fn load_replay(path: &Path) -> Result<ReplayGenerator, CliError> {
    let raw = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read replay table `{}`: {e}", path.display())))?;
    let mut replay = ReplayGenerator::new();
    for (i, line) in raw.lines().enumerate() {
        let record: ReplayRecord = serde_json::from_str(line).map_err(|e| {
            CliError::Config(format!("{}:{}: invalid replay record: {e}", path.display(), i + 1))
        })?;
        match (record.prompt, record.fingerprint) {
            (Some(prompt), _) => replay.insert(&prompt, record.completion),
            (None, Some(hex)) => {
                let fp = u64::from_str_radix(&hex, 16).map_err(|_| {
                    CliError::Config(format!(
                        "{}:{}: fingerprint is not a hex number",
                        path.display(),
                        i + 1
                    ))
                })?;
                replay.insert_by_fingerprint(fp, record.completion);
            }
            (None, None) => {
                return Err(CliError::Config(format!(
                    "{}:{}: replay record needs a prompt or a fingerprint",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(replay)
}

fn synthetic_config(provider: &ProviderSection) -> SyntheticConfig {
    SyntheticConfig {
        p_bye: provider.synthetic.p_bye,
        p_short_utterance: provider.synthetic.p_short_utterance,
        p_missing_marker: provider.synthetic.p_missing_marker,
        p_short_summary: provider.synthetic.p_short_summary,
        ..SyntheticConfig::default()
    }
}

/// Build all four providers. With `force_mocks` every slot uses its mock
/// regardless of the configured kind.
pub fn build_providers(config: &FileConfig, force_mocks: bool) -> Result<Providers, CliError> {
    let kind = |provider: &ProviderSection| -> String {
        if force_mocks { "mock".to_string() } else { provider.kind.clone() }
    };

    let generation = &config.backends.generation;
    let mut generation_http = None;
    let generator: Arc<dyn TextGenerator + Send + Sync> = match kind(generation).as_str() {
        "mock" => Arc::new(SyntheticGenerator::with_config(
            mock_seed(generation, config.rng_seed, "generation"),
            synthetic_config(generation),
        )),
        "replay" => {
            let path = generation.replay_path.as_ref().ok_or_else(|| {
                CliError::Config("backends.generation.replay_path is required for replay".into())
            })?;
            Arc::new(load_replay(path)?)
        }
        "http" => {
            let client = Arc::new(HttpCompletionClient::new(
                FileConfig::backend_config(generation),
                generation.supports_beam,
            )?);
            generation_http = Some(client.clone());
            client
        }
        other => {
            return Err(CliError::Config(format!(
                "backends.generation.kind `{other}` is not one of mock, replay, http"
            )))
        }
    };

    let scoring = &config.backends.scoring;
    let scorer: Option<Arc<dyn TextScorer + Send + Sync>> = match kind(scoring).as_str() {
        "none" => None,
        // ln(0.5) per token: a corpus of mock scores lands at perplexity 2.
        "mock" => Some(Arc::new(ConstantScorer::new(-std::f64::consts::LN_2))),
        "http" => Some(Arc::new(HttpCompletionClient::new(
            FileConfig::backend_config(scoring),
            scoring.supports_beam,
        )?)),
        other => {
            return Err(CliError::Config(format!(
                "backends.scoring.kind `{other}` is not one of mock, http, none"
            )))
        }
    };

    let infill = &config.backends.infill;
    let infiller: Option<Arc<dyn MaskInfiller + Send + Sync>> = match kind(infill).as_str() {
        "none" => None,
        "mock" => Some(Arc::new(HashInfiller::new(mock_seed(infill, config.rng_seed, "infill")))),
        "http" => Some(Arc::new(HttpCompletionClient::new(
            FileConfig::backend_config(infill),
            infill.supports_beam,
        )?)),
        other => {
            return Err(CliError::Config(format!(
                "backends.infill.kind `{other}` is not one of mock, http, none"
            )))
        }
    };

    let embedding = &config.backends.embedding;
    let embedder: Arc<dyn TextEmbedder + Send + Sync> = match kind(embedding).as_str() {
        "mock" => Arc::new(HashEmbedder::default()),
        "http" => Arc::new(HttpEmbedder::new(FileConfig::backend_config(embedding))?),
        other => {
            return Err(CliError::Config(format!(
                "backends.embedding.kind `{other}` is not one of mock, http"
            )))
        }
    };

    Ok(Providers { generator, scorer, infiller, embedder, generation_http })
}
