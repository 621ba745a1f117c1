//! Comparison augmenters: mask-and-reconstruct (MLM) and plain or
//! context-conditioned in-context generation (ICL). These deliberately skip
//! the summary and dialogue filters so their output reflects the raw
//! method.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::augmentor::{contains_stop_phrase, sample_refs};
use crate::backend::{BackendError, DecodingParams, MaskInfiller, TextGenerator};
use crate::corpus::{
    parse_rendered_dialogue, render_dialogue, render_utterances, token_spans, CorpusError,
    Dialogue, DialogueOrigin, DialoguePool, Speaker, Utterance,
};
use crate::math::{mix_seeds, round_half_even};

/// Draws of a context dialogue before giving up in
/// [`icl_context_augment`].
pub const CONTEXT_RESAMPLE_BUDGET: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("seed pool has {got} dialogue(s); at least {need} required")]
    SeedPoolTooSmall { need: usize, got: usize },
    #[error("dialogue `{0}` has no tokens to mask")]
    NothingToMask(String),
    #[error("mask marker must be a single non-empty token: {0:?}")]
    InvalidMaskMarker(String),
    #[error("no usable seed dialogue with at least {turns} turn(s) found within the resample budget")]
    ContextUnavailable { turns: usize },
    #[error("backend returned an empty utterance")]
    EmptyUtterance,
    #[error("infilled dialogue no longer matches the original structure: {0}")]
    StructureChanged(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("backend failure: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Tunables of the baseline augmenters.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    /// Fraction of dialogue tokens masked by the MLM baseline.
    pub mask_rate: f64,
    pub mask_marker: String,
    pub icl_exemplars: usize,
    pub icl_params: DecodingParams,
    /// Hard cap on dialogue turns, counting supplied context turns.
    pub max_turns: usize,
    /// First turns of the extra seed dialogue kept verbatim (icl-ctx only).
    pub context_turns: usize,
    /// A dialogue may stop naturally once it has more than this many turns
    /// and the last utterance contains a stop phrase.
    pub min_turns_before_stop: usize,
    pub stop_word_boundary: bool,
    pub rng_seed: u64,
}

impl BaselineConfig {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            mask_rate: 0.15,
            mask_marker: "[MASK]".to_string(),
            icl_exemplars: 5,
            icl_params: DecodingParams::nucleus(0.9, 1.0)
                .with_stop_sequences(["\n"])
                .with_max_new_tokens(50),
            max_turns: 10,
            context_turns: 1,
            min_turns_before_stop: 3,
            stop_word_boundary: false,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(BaselineError::InvalidConfig("mask_rate must lie in (0, 1)".into()));
        }
        if self.context_turns == 0 {
            return Err(BaselineError::InvalidConfig("context_turns must be at least 1".into()));
        }
        if self.icl_exemplars == 0 {
            return Err(BaselineError::InvalidConfig("icl_exemplars must be at least 1".into()));
        }
        if self.max_turns == 0 {
            return Err(BaselineError::InvalidConfig("max_turns must be at least 1".into()));
        }
        if self.mask_marker.is_empty()
            || self.mask_marker.chars().any(char::is_whitespace)
        {
            return Err(BaselineError::InvalidMaskMarker(self.mask_marker.clone()));
        }
        self.icl_params
            .validate()
            .map_err(|e| BaselineError::InvalidConfig(format!("icl params: {e}")))?;
        Ok(())
    }
}

/// Independent RNG stream for the `index`-th generated item.
pub fn item_rng(rng_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seeds(rng_seed, index))
}

/// Number of positions masked in a dialogue of `total_tokens` tokens:
/// round-half-even of rate × tokens, at least 1.
pub fn mask_count(total_tokens: usize, mask_rate: f64) -> usize {
    let rounded = round_half_even(mask_rate * total_tokens as f64) as usize;
    rounded.clamp(1, total_tokens)
}

/// Mask-and-reconstruct: pick token positions uniformly without replacement
/// across the whole dialogue, replace them with the marker, hand the
/// rendered text to the infiller, and parse it back. Utterance boundaries
/// and speakers are preserved; unmasked text comes back byte-identical.
pub fn mlm_augment(
    id: &str,
    dialogue: &Dialogue,
    infiller: &dyn MaskInfiller,
    config: &BaselineConfig,
    rng: &mut dyn RngCore,
) -> Result<Dialogue, BaselineError> {
    config.validate()?;
    // Token positions counted over utterance texts only; the rendered
    // speaker prefixes are never maskable.
    let spans_per_utterance: Vec<Vec<(usize, usize)>> =
        dialogue.utterances().iter().map(|u| token_spans(u.text())).collect();
    let total_tokens: usize = spans_per_utterance.iter().map(Vec::len).sum();
    if total_tokens == 0 {
        return Err(BaselineError::NothingToMask(dialogue.id().to_string()));
    }

    let count = mask_count(total_tokens, config.mask_rate);
    let chosen: BTreeSet<usize> =
        rand::seq::index::sample(rng, total_tokens, count).iter().collect();

    let mut masked_utterances = Vec::with_capacity(dialogue.turn_count());
    let mut position = 0usize;
    for (utterance, spans) in dialogue.utterances().iter().zip(&spans_per_utterance) {
        let text = utterance.text();
        let mut masked = String::with_capacity(text.len());
        let mut cursor = 0usize;
        for &(start, end) in spans {
            masked.push_str(&text[cursor..start]);
            if chosen.contains(&position) {
                masked.push_str(&config.mask_marker);
            } else {
                masked.push_str(&text[start..end]);
            }
            cursor = end;
            position += 1;
        }
        masked.push_str(&text[cursor..]);
        masked_utterances.push(Utterance::new(utterance.speaker(), masked)?);
    }

    let masked_dialogue = Dialogue::new(id, DialogueOrigin::Mlm, masked_utterances)?;
    let filled = infiller.infill(&render_dialogue(&masked_dialogue), &config.mask_marker)?;
    let result = parse_rendered_dialogue(id, DialogueOrigin::Mlm, &filled)?;

    if result.turn_count() != dialogue.turn_count() {
        return Err(BaselineError::StructureChanged(format!(
            "turn count changed from {} to {}",
            dialogue.turn_count(),
            result.turn_count()
        )));
    }
    Ok(result)
}

/// Generate turns after `initial`, alternating speaker cues, until the stop
/// phrase rule fires or the turn cap is reached.
fn generate_turns(
    id: &str,
    base_prompt: &str,
    initial: Vec<Utterance>,
    origin: DialogueOrigin,
    generator: &dyn TextGenerator,
    config: &BaselineConfig,
) -> Result<Dialogue, BaselineError> {
    let mut utterances = initial;
    while utterances.len() < config.max_turns {
        let speaker = Speaker::nth(utterances.len());
        let mut prompt = String::from(base_prompt);
        if !utterances.is_empty() {
            prompt.push_str(&render_utterances(&utterances));
            prompt.push('\n');
        }
        prompt.push_str(speaker.cue());

        let generated = generator.generate(&prompt, &config.icl_params)?;
        let text = generated.text.trim().to_string();
        if text.is_empty() {
            return Err(BaselineError::EmptyUtterance);
        }
        utterances.push(Utterance::new(speaker, text)?);

        if utterances.len() > config.min_turns_before_stop
            && contains_stop_phrase(
                utterances.last().expect("just pushed").text(),
                config.stop_word_boundary,
            )
        {
            break;
        }
    }
    Ok(Dialogue::new(id, origin, utterances)?)
}

fn exemplar_prompt(exemplars: &[&Dialogue]) -> String {
    let mut prompt = String::new();
    for exemplar in exemplars {
        prompt.push_str(&render_dialogue(exemplar));
        prompt.push_str("\n\n");
    }
    prompt
}

/// Plain ICL: concatenate five random seed dialogues, then generate a new
/// dialogue turn by turn behind a `User A:` cue.
pub fn icl_augment(
    id: &str,
    d_seed: &DialoguePool,
    generator: &dyn TextGenerator,
    config: &BaselineConfig,
    rng: &mut dyn RngCore,
) -> Result<Dialogue, BaselineError> {
    config.validate()?;
    if d_seed.len() < config.icl_exemplars {
        return Err(BaselineError::SeedPoolTooSmall {
            need: config.icl_exemplars,
            got: d_seed.len(),
        });
    }
    let exemplars = sample_refs(d_seed.items(), config.icl_exemplars, rng);
    let base = exemplar_prompt(&exemplars);
    generate_turns(id, &base, Vec::new(), DialogueOrigin::Icl, generator, config)
}

/// Context-conditioned ICL: as [`icl_augment`], plus one extra seed
/// dialogue whose first `context_turns` turns open the generated dialogue
/// verbatim. Context candidates shorter than that are redrawn up to
/// [`CONTEXT_RESAMPLE_BUDGET`] times.
pub fn icl_context_augment(
    id: &str,
    d_seed: &DialoguePool,
    generator: &dyn TextGenerator,
    config: &BaselineConfig,
    rng: &mut dyn RngCore,
) -> Result<Dialogue, BaselineError> {
    config.validate()?;
    if d_seed.len() < config.icl_exemplars + 1 {
        return Err(BaselineError::SeedPoolTooSmall {
            need: config.icl_exemplars + 1,
            got: d_seed.len(),
        });
    }
    let exemplars = sample_refs(d_seed.items(), config.icl_exemplars, rng);
    let exemplar_ids: BTreeSet<&str> = exemplars.iter().map(|d| d.id()).collect();

    let mut context: Option<&Dialogue> = None;
    for _ in 0..CONTEXT_RESAMPLE_BUDGET {
        let candidate = &d_seed.items()[rng.gen_range(0..d_seed.len())];
        if exemplar_ids.contains(candidate.id()) {
            continue;
        }
        if candidate.turn_count() >= config.context_turns {
            context = Some(candidate);
            break;
        }
    }
    let context =
        context.ok_or(BaselineError::ContextUnavailable { turns: config.context_turns })?;

    let base = exemplar_prompt(&exemplars);
    let initial: Vec<Utterance> = context.utterances()[..config.context_turns].to_vec();
    generate_turns(id, &base, initial, DialogueOrigin::IclCtx, generator, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{SyntheticConfig, SyntheticGenerator, TableInfiller};
    use crate::corpus::{token_count, tokenize, PoolRole};
    use alloc::vec;

    fn utt(speaker: Speaker, text: &str) -> Utterance {
        Utterance::new(speaker, text).unwrap()
    }

    fn twenty_token_dialogue() -> Dialogue {
        // 12 + 8 = 20 tokens across two turns.
        Dialogue::new(
            "d20",
            DialogueOrigin::Seed,
            vec![
                utt(
                    Speaker::A,
                    "I am planning a long trip to the coast next month already",
                ),
                utt(Speaker::B, "That sounds great, can I come along too?"),
            ],
        )
        .unwrap()
    }

    fn seed_pool(n: usize) -> DialoguePool {
        DialoguePool::from_dialogues(
            PoolRole::Seed,
            (0..n).map(|i| {
                Dialogue::new(
                    format!("seed-{i:02}"),
                    DialogueOrigin::Seed,
                    vec![
                        utt(Speaker::A, &format!("Opening question number {i} about plans?")),
                        utt(Speaker::B, &format!("Detailed answer number {i} with content.")),
                        utt(Speaker::A, &format!("Follow up remark number {i} right here.")),
                        utt(Speaker::B, &format!("Closing thought number {i} to finish.")),
                    ],
                )
                .unwrap()
            }),
        )
        .unwrap()
    }

    #[test]
    fn mask_count_rounding() {
        assert_eq!(mask_count(20, 0.15), 3); // 3.0 exactly
        assert_eq!(mask_count(10, 0.15), 2); // 1.5 rounds half-even to 2
        assert_eq!(mask_count(30, 0.15), 4); // 4.5 rounds half-even to 4
        assert_eq!(mask_count(1, 0.15), 1); // floor of 1
        assert_eq!(mask_count(3, 0.15), 1);
    }

    #[test]
    fn mlm_masks_exactly_three_positions_of_twenty() {
        let dialogue = twenty_token_dialogue();
        assert_eq!(dialogue.token_count(), 20);
        // Echo infiller: markers come back as markers, so the masked
        // positions stay visible in the output.
        let infiller = TableInfiller::new("[MASK]");
        let config = BaselineConfig::new(0);
        let mut rng = item_rng(0, 0);
        let out = mlm_augment("m1", &dialogue, &infiller, &config, &mut rng).unwrap();

        let originals: Vec<&str> = dialogue
            .utterances()
            .iter()
            .flat_map(|u| tokenize(u.text()))
            .collect();
        let masked: Vec<&str> =
            out.utterances().iter().flat_map(|u| tokenize(u.text())).collect();
        assert_eq!(masked.len(), 20);
        let changed = originals
            .iter()
            .zip(&masked)
            .filter(|(a, b)| **a != **b)
            .count();
        assert_eq!(changed, 3);
        assert_eq!(masked.iter().filter(|t| **t == "[MASK]").count(), 3);
        // Speakers and turn count preserved.
        assert_eq!(out.turn_count(), dialogue.turn_count());
        for (a, b) in dialogue.utterances().iter().zip(out.utterances()) {
            assert_eq!(a.speaker(), b.speaker());
        }
    }

    #[test]
    fn mlm_identity_infill_reproduces_input() {
        let dialogue = twenty_token_dialogue();
        let config = BaselineConfig::new(0);
        // Script the infiller to restore the original token at every
        // position of the rendered text: whichever positions end up masked,
        // the reconstruction is the identity. Each rendered line adds two
        // speaker-prefix tokens ("User" and "A:") before its utterance.
        let mut infiller = TableInfiller::new("unused");
        let mut rendered_pos = 0usize;
        for u in dialogue.utterances() {
            rendered_pos += 2;
            for tok in tokenize(u.text()) {
                infiller.set(rendered_pos, tok);
                rendered_pos += 1;
            }
        }

        let mut rng = item_rng(7, 3);
        let out = mlm_augment("m1", &dialogue, &infiller, &config, &mut rng).unwrap();
        assert_eq!(out.utterances(), dialogue.utterances());
    }

    #[test]
    fn mlm_leaves_unmasked_tokens_byte_identical() {
        let dialogue = twenty_token_dialogue();
        let infiller = TableInfiller::new("REPLACED");
        let config = BaselineConfig::new(0);
        let mut rng = item_rng(1, 5);
        let out = mlm_augment("m2", &dialogue, &infiller, &config, &mut rng).unwrap();
        let originals: Vec<&str> =
            dialogue.utterances().iter().flat_map(|u| tokenize(u.text())).collect();
        let produced: Vec<&str> =
            out.utterances().iter().flat_map(|u| tokenize(u.text())).collect();
        for (a, b) in originals.iter().zip(&produced) {
            assert!(b == a || *b == "REPLACED");
        }
    }

    #[test]
    fn mlm_rejects_invalid_marker() {
        let dialogue = twenty_token_dialogue();
        let infiller = TableInfiller::new("x");
        let mut config = BaselineConfig::new(0);
        config.mask_marker = "two words".into();
        let mut rng = item_rng(0, 0);
        assert!(matches!(
            mlm_augment("m", &dialogue, &infiller, &config, &mut rng),
            Err(BaselineError::InvalidMaskMarker(_))
        ));
    }

    #[test]
    fn icl_caps_at_ten_turns_without_stop_phrase() {
        let pool = seed_pool(7);
        let synthetic = SyntheticConfig { p_bye: 0.0, ..SyntheticConfig::default() };
        let generator = SyntheticGenerator::with_config(3, synthetic);
        let config = BaselineConfig::new(3);
        let mut rng = item_rng(3, 0);
        let out = icl_augment("icl-0", &pool, &generator, &config, &mut rng).unwrap();
        assert_eq!(out.turn_count(), 10);
        assert_eq!(out.origin(), DialogueOrigin::Icl);
    }

    #[test]
    fn icl_stops_naturally_after_three_turns() {
        let pool = seed_pool(7);
        let synthetic = SyntheticConfig { p_bye: 1.0, ..SyntheticConfig::default() };
        let generator = SyntheticGenerator::with_config(5, synthetic);
        let config = BaselineConfig::new(5);
        let mut rng = item_rng(5, 0);
        let out = icl_augment("icl-0", &pool, &generator, &config, &mut rng).unwrap();
        // Every generated utterance carries the stop phrase, so the rule
        // fires at the first eligible turn.
        assert_eq!(out.turn_count(), 4);
        assert!(contains_stop_phrase(out.utterances()[3].text(), false));
    }

    #[test]
    fn icl_sampling_is_reproducible() {
        let pool = seed_pool(9);
        let synthetic = SyntheticConfig { p_bye: 0.5, ..SyntheticConfig::default() };
        let run = || {
            let generator = SyntheticGenerator::with_config(21, synthetic.clone());
            let config = BaselineConfig::new(21);
            let mut rng = item_rng(21, 4);
            icl_augment("icl-4", &pool, &generator, &config, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn icl_requires_five_seeds() {
        let pool = seed_pool(4);
        let generator = SyntheticGenerator::new(0);
        let config = BaselineConfig::new(0);
        let mut rng = item_rng(0, 0);
        assert_eq!(
            icl_augment("icl-0", &pool, &generator, &config, &mut rng).unwrap_err(),
            BaselineError::SeedPoolTooSmall { need: 5, got: 4 }
        );
    }

    #[test]
    fn icl_ctx_keeps_context_prefix_verbatim() {
        let pool = seed_pool(8);
        let generator = SyntheticGenerator::new(13);
        let mut config = BaselineConfig::new(13);
        config.context_turns = 2;
        let mut rng = item_rng(13, 2);
        let out = icl_context_augment("ctx-2", &pool, &generator, &config, &mut rng).unwrap();
        assert_eq!(out.origin(), DialogueOrigin::IclCtx);
        // The first two turns match some seed dialogue verbatim.
        let prefix: Vec<&Utterance> = out.utterances().iter().take(2).collect();
        let found = pool.iter().any(|d| {
            d.turn_count() >= 2
                && d.utterances()[0] == *prefix[0]
                && d.utterances()[1] == *prefix[1]
        });
        assert!(found);
        assert!(out.turn_count() > 2);
    }

    #[test]
    fn icl_ctx_continues_with_alternating_speaker() {
        let pool = seed_pool(8);
        let generator = SyntheticGenerator::new(2);
        let mut config = BaselineConfig::new(2);
        config.context_turns = 3;
        let mut rng = item_rng(2, 0);
        let out = icl_context_augment("ctx-3", &pool, &generator, &config, &mut rng).unwrap();
        // Turn 4 exists and belongs to speaker B.
        assert!(out.turn_count() >= 4);
        assert_eq!(out.utterances()[3].speaker(), Speaker::B);
    }

    #[test]
    fn icl_ctx_errors_when_no_context_is_long_enough() {
        let pool = seed_pool(8); // all dialogues have 4 turns
        let generator = SyntheticGenerator::new(2);
        let mut config = BaselineConfig::new(2);
        config.context_turns = 9;
        let mut rng = item_rng(2, 0);
        assert_eq!(
            icl_context_augment("ctx", &pool, &generator, &config, &mut rng).unwrap_err(),
            BaselineError::ContextUnavailable { turns: 9 }
        );
    }

    #[test]
    fn generated_utterances_respect_token_cap() {
        let pool = seed_pool(6);
        let generator = SyntheticGenerator::new(11);
        let config = BaselineConfig::new(11);
        let mut rng = item_rng(11, 1);
        let out = icl_augment("icl-1", &pool, &generator, &config, &mut rng).unwrap();
        for u in out.utterances() {
            assert!(token_count(u.text()) <= 50);
        }
    }
}
