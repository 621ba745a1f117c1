//! Run configuration: one TOML file with sectioned (dotted) keys, flag
//! overrides on top, spec defaults underneath. The resolved structure is
//! serialized verbatim into the run manifest, so a manifest plus the input
//! files replays a mock run exactly.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use sda_core::augmentor::AugmentConfig;
use sda_core::backend::{BackendConfig, DecodingParams, DecodingStrategy};
use sda_core::baselines::BaselineConfig;
use sda_core::filtering::FilterThresholds;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub rng_seed: u64,
    pub paths: PathsSection,
    pub run: RunSection,
    pub backends: BackendsSection,
    pub filters: FiltersSection,
    pub augment: AugmentSection,
    pub baseline: BaselineSection,
    pub report: ReportSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub seed_pool: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub exemplar_bundle: Option<PathBuf>,
    pub goldens: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub parallelism: usize,
    pub mock_backends: bool,
    pub trace_prompts: bool,
    pub relabel_speakers: bool,
    pub stop_word_boundary: bool,
    pub force: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            parallelism: 1,
            mock_backends: false,
            trace_prompts: false,
            relabel_speakers: false,
            stop_word_boundary: false,
            force: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsSection {
    pub generation: ProviderSection,
    pub scoring: ProviderSection,
    pub infill: ProviderSection,
    pub embedding: ProviderSection,
}

/// One provider slot. `kind` selects the implementation: `mock` (synthetic
/// generator / constant scorer / hash infiller / hash embedder), `replay`
/// (generation only, table loaded from `replay_path`), `http`, or `none`
/// (scoring and infill only).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: String,
    pub endpoint_url: String,
    pub model_name: String,
    pub auth_token_env: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub parallelism: usize,
    /// Beam requests are downgraded to greedy when false; the downgrade is
    /// recorded in the run manifest.
    pub supports_beam: bool,
    /// Seed for mock providers; derived from `rng_seed` when absent.
    pub mock_seed: Option<u64>,
    pub replay_path: Option<PathBuf>,
    pub synthetic: SyntheticSection,
}

impl Default for ProviderSection {
    fn default() -> Self {
        Self {
            kind: "mock".to_string(),
            endpoint_url: "http://127.0.0.1:8080/v1/completions".to_string(),
            model_name: "default".to_string(),
            auth_token_env: String::new(),
            timeout_s: 30.0,
            max_retries: 2,
            parallelism: 1,
            supports_beam: true,
            mock_seed: None,
            replay_path: None,
            synthetic: SyntheticSection::default(),
        }
    }
}

/// Knobs of the synthetic generation mock.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub p_bye: f64,
    pub p_short_utterance: f64,
    pub p_missing_marker: f64,
    pub p_short_summary: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self { p_bye: 0.35, p_short_utterance: 0.0, p_missing_marker: 0.0, p_short_summary: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FiltersSection {
    pub t_s: f64,
    pub t_d: f64,
    pub min_summary_tokens: usize,
    pub min_utterance_tokens: usize,
}

impl Default for FiltersSection {
    fn default() -> Self {
        let th = FilterThresholds::default();
        Self {
            t_s: th.t_s,
            t_d: th.t_d,
            min_summary_tokens: th.min_summary_tokens,
            min_utterance_tokens: th.min_utterance_tokens,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingSection {
    pub strategy: String,
    pub beam_size: u32,
    pub top_p: f64,
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub stop_sequences: Vec<String>,
}

impl Default for DecodingSection {
    fn default() -> Self {
        Self {
            strategy: "nucleus".to_string(),
            beam_size: 3,
            top_p: 0.9,
            temperature: 1.0,
            max_new_tokens: 128,
            stop_sequences: vec!["\n".to_string()],
        }
    }
}

impl DecodingSection {
    pub fn beam(beam_size: u32, max_new_tokens: u32, stop: &[&str]) -> Self {
        Self {
            strategy: "beam".to_string(),
            beam_size,
            max_new_tokens,
            stop_sequences: stop.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn nucleus(top_p: f64, temperature: f64, max_new_tokens: u32, stop: &[&str]) -> Self {
        Self {
            strategy: "nucleus".to_string(),
            top_p,
            temperature,
            max_new_tokens,
            stop_sequences: stop.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn to_params(&self, context: &str) -> Result<DecodingParams, CliError> {
        let strategy = match self.strategy.as_str() {
            "beam" => DecodingStrategy::Beam { beam_size: self.beam_size },
            "nucleus" => {
                DecodingStrategy::Nucleus { top_p: self.top_p, temperature: self.temperature }
            }
            other => {
                return Err(CliError::Config(format!(
                    "{context}: unknown decoding strategy `{other}` (expected beam or nucleus)"
                )))
            }
        };
        let params = DecodingParams {
            strategy,
            max_new_tokens: self.max_new_tokens,
            stop_sequences: self.stop_sequences.clone(),
        };
        params.validate().map_err(|e| CliError::Config(format!("{context}: {e}")))?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    /// Target size of the augmented summary pool (m).
    pub m: usize,
    pub seed_exemplars_per_step: usize,
    pub generated_exemplars_per_step: usize,
    pub min_turns_before_stop: usize,
    pub max_turns_before_reset: usize,
    pub max_utterance_retries: usize,
    pub max_dialogue_resets: usize,
    pub max_summary_attempts_factor: usize,
    /// `abort` or `skip`: whether a failed seed summarization aborts the
    /// stage or is recorded and skipped.
    pub on_summarize_failure: String,
    pub d2s: DecodingSection,
    pub s2s: DecodingSection,
    pub s2d: DecodingSection,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            m: 1000,
            seed_exemplars_per_step: 5,
            generated_exemplars_per_step: 3,
            min_turns_before_stop: 3,
            max_turns_before_reset: 10,
            max_utterance_retries: 3,
            max_dialogue_resets: 3,
            max_summary_attempts_factor: 20,
            on_summarize_failure: "abort".to_string(),
            d2s: DecodingSection::beam(3, 128, &["\n\n"]),
            s2s: DecodingSection::nucleus(0.9, 0.9, 128, &["\n"]),
            s2d: DecodingSection::nucleus(0.9, 0.6, 50, &["\n"]),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub mask_rate: f64,
    pub mask_marker: String,
    pub icl_exemplars: usize,
    pub max_turns: usize,
    pub context_turns: usize,
    /// Dialogues produced per `baseline` invocation.
    pub count: usize,
    pub icl: DecodingSection,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            mask_marker: "[MASK]".to_string(),
            icl_exemplars: 5,
            max_turns: 10,
            context_turns: 1,
            count: 100,
            icl: DecodingSection::nucleus(0.9, 1.0, 50, &["\n"]),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub verbosity: u8,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self { verbosity: 1 }
    }
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        toml::from_str(&raw)
            .map_err(|e| CliError::Config(format!("invalid config `{}`: {e}", path.display())))
    }

    pub fn thresholds(&self) -> FilterThresholds {
        FilterThresholds {
            t_s: self.filters.t_s,
            t_d: self.filters.t_d,
            min_summary_tokens: self.filters.min_summary_tokens,
            min_utterance_tokens: self.filters.min_utterance_tokens,
        }
    }

    pub fn augment_config(&self) -> Result<AugmentConfig, CliError> {
        let a = &self.augment;
        Ok(AugmentConfig {
            target_summaries: a.m,
            seed_exemplars_per_step: a.seed_exemplars_per_step,
            generated_exemplars_per_step: a.generated_exemplars_per_step,
            d2s_params: a.d2s.to_params("augment.d2s")?,
            s2s_params: a.s2s.to_params("augment.s2s")?,
            s2d_params: a.s2d.to_params("augment.s2d")?,
            min_turns_before_stop: a.min_turns_before_stop,
            max_turns_before_reset: a.max_turns_before_reset,
            max_utterance_retries: a.max_utterance_retries,
            max_dialogue_resets: a.max_dialogue_resets,
            max_summary_attempts_factor: a.max_summary_attempts_factor,
            stop_word_boundary: self.run.stop_word_boundary,
            rng_seed: self.rng_seed,
        })
    }

    pub fn failure_mode(&self) -> Result<sda_core::augmentor::FailureMode, CliError> {
        match self.augment.on_summarize_failure.as_str() {
            "abort" => Ok(sda_core::augmentor::FailureMode::Abort),
            "skip" => Ok(sda_core::augmentor::FailureMode::SkipAndRecord),
            other => Err(CliError::Config(format!(
                "augment.on_summarize_failure `{other}` is not one of abort, skip"
            ))),
        }
    }

    pub fn baseline_config(&self) -> Result<BaselineConfig, CliError> {
        let b = &self.baseline;
        Ok(BaselineConfig {
            mask_rate: b.mask_rate,
            mask_marker: b.mask_marker.clone(),
            icl_exemplars: b.icl_exemplars,
            icl_params: b.icl.to_params("baseline.icl")?,
            max_turns: b.max_turns,
            context_turns: b.context_turns,
            min_turns_before_stop: self.augment.min_turns_before_stop,
            stop_word_boundary: self.run.stop_word_boundary,
            rng_seed: self.rng_seed,
        })
    }

    pub fn backend_config(provider: &ProviderSection) -> BackendConfig {
        BackendConfig {
            endpoint_url: provider.endpoint_url.clone(),
            model_name: provider.model_name.clone(),
            auth_token_env: provider.auth_token_env.clone(),
            timeout_s: provider.timeout_s,
            max_retries: provider.max_retries,
            parallelism: provider.parallelism,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_values() {
        let cfg = FileConfig::default();
        assert_eq!(cfg.filters.t_s, 0.35);
        assert_eq!(cfg.filters.t_d, 0.8);
        assert_eq!(cfg.filters.min_summary_tokens, 18);
        assert_eq!(cfg.filters.min_utterance_tokens, 5);
        assert_eq!(cfg.augment.m, 1000);
        assert_eq!(cfg.augment.d2s.strategy, "beam");
        assert_eq!(cfg.augment.d2s.beam_size, 3);
        assert_eq!(cfg.augment.s2s.top_p, 0.9);
        assert_eq!(cfg.augment.s2s.temperature, 0.9);
        assert_eq!(cfg.augment.s2d.temperature, 0.6);
        assert_eq!(cfg.augment.s2d.max_new_tokens, 50);
        assert_eq!(cfg.baseline.mask_rate, 0.15);
        assert_eq!(cfg.baseline.icl_exemplars, 5);
        assert_eq!(cfg.baseline.max_turns, 10);
    }

    #[test]
    fn dotted_keys_parse() {
        let cfg: FileConfig = toml::from_str(
            "rng_seed = 7\nfilters.t_s = 0.5\naugment.m = 20\naugment.s2d.temperature = 0.7\n",
        )
        .unwrap();
        assert_eq!(cfg.rng_seed, 7);
        assert_eq!(cfg.filters.t_s, 0.5);
        assert_eq!(cfg.augment.m, 20);
        assert_eq!(cfg.augment.s2d.temperature, 0.7);
        // Untouched keys keep their defaults.
        assert_eq!(cfg.filters.t_d, 0.8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<FileConfig>("filters.t_x = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("t_x"));
    }

    #[test]
    fn decoding_section_validates() {
        let bad = DecodingSection { strategy: "greedy".into(), ..DecodingSection::default() };
        assert!(bad.to_params("x").is_err());
        let bad = DecodingSection { top_p: 1.5, ..DecodingSection::default() };
        assert!(bad.to_params("x").is_err());
        let ok = DecodingSection::default();
        assert!(ok.to_params("x").is_ok());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = FileConfig { rng_seed: 123, ..FileConfig::default() };
        let text = toml::to_string(&cfg).unwrap();
        let back: FileConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
