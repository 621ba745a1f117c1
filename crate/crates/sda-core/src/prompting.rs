//! Byte-exact construction of the three few-shot prompts.
//!
//! Each builder emits a task-description header, the in-context exemplars,
//! and a completion cue as the literal last characters, so the model
//! continues exactly where the target text should start. Lines are joined
//! with `\n` only and no trailing newline follows the cue.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::corpus::{
    alternates_from_a, render_dialogue, render_utterances, Dialogue, Speaker, Summary,
    SummaryOrigin, Utterance,
};

pub const D2S_HEADER: &str = "Summarize the following dialogue between User A and User B:";
pub const S2S_HEADER: &str =
    "Two people are chatting with each other, here are some possible summaries of their dialogue:";
pub const S2D_HEADER: &str = "Convert the following summary into dialogue:";

/// Exemplars per dialogue↔summary prompt.
pub const EXEMPLARS_PER_PROMPT: usize = 5;
/// Summaries shown per summary-augmentation prompt.
pub const S2S_EXEMPLAR_COUNT: usize = 8;

/// Trailing cue of the summarization prompt; the completion continues the
/// summary after this prefix.
pub const D2S_COMPLETION_CUE: &str = "Summary:\nIn the above dialogue,";
/// Trailing cue of the summary-augmentation prompt. The space is part of the
/// cue: the completion is a full summary.
pub const S2S_COMPLETION_CUE: &str = "Summary 9: ";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("expected exactly {expected} exemplar pair(s), got {got}")]
    ExemplarCount { expected: usize, got: usize },
    #[error("expected exactly {expected} exemplar summaries, got {got}")]
    SummaryCount { expected: usize, got: usize },
    #[error("prefix utterances do not alternate starting with speaker A")]
    NonAlternatingPrefix,
    #[error("exemplar summary `{summary_id}` is not the summary of dialogue `{dialogue_id}`")]
    UnlinkedExemplar { summary_id: String, dialogue_id: String },
}

/// A dialogue together with its summary, used as one in-context exemplar.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarPair {
    dialogue: Dialogue,
    summary: Summary,
}

impl ExemplarPair {
    pub fn new(dialogue: Dialogue, summary: Summary) -> Result<Self, PromptError> {
        if summary.origin() == SummaryOrigin::Seed
            && summary.parent_dialogue_id().is_some_and(|p| p != dialogue.id())
        {
            return Err(PromptError::UnlinkedExemplar {
                summary_id: summary.id().into(),
                dialogue_id: dialogue.id().into(),
            });
        }
        Ok(Self { dialogue, summary })
    }

    pub fn dialogue(&self) -> &Dialogue {
        &self.dialogue
    }

    pub fn summary(&self) -> &Summary {
        &self.summary
    }
}

/// The fixed exemplar sets for the two dialogue↔summary prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    d2s_exemplars: Vec<ExemplarPair>,
    s2d_exemplars: Vec<ExemplarPair>,
}

impl PromptBundle {
    pub fn new(
        d2s_exemplars: Vec<ExemplarPair>,
        s2d_exemplars: Vec<ExemplarPair>,
    ) -> Result<Self, PromptError> {
        for set in [&d2s_exemplars, &s2d_exemplars] {
            if set.len() != EXEMPLARS_PER_PROMPT {
                return Err(PromptError::ExemplarCount {
                    expected: EXEMPLARS_PER_PROMPT,
                    got: set.len(),
                });
            }
        }
        Ok(Self { d2s_exemplars, s2d_exemplars })
    }

    pub fn d2s_exemplars(&self) -> &[ExemplarPair] {
        &self.d2s_exemplars
    }

    pub fn s2d_exemplars(&self) -> &[ExemplarPair] {
        &self.s2d_exemplars
    }
}

/// Prompt that asks for a summary of `target`. Ends with
/// [`D2S_COMPLETION_CUE`], so the completion continues the summary text.
pub fn build_d2s_prompt(bundle: &PromptBundle, target: &Dialogue) -> String {
    let mut p = String::new();
    p.push_str(D2S_HEADER);
    p.push('\n');
    for (i, pair) in bundle.d2s_exemplars().iter().enumerate() {
        push_numbered(&mut p, "Exemplar", i + 1);
        p.push_str(&render_dialogue(pair.dialogue()));
        p.push_str("\nSummary:\n");
        p.push_str(pair.summary().text());
        p.push('\n');
    }
    push_numbered(&mut p, "Exemplar", bundle.d2s_exemplars().len() + 1);
    p.push_str(&render_dialogue(target));
    p.push('\n');
    p.push_str(D2S_COMPLETION_CUE);
    p
}

/// Prompt that asks for a ninth summary given eight exemplars, in the given
/// order. Ends with [`S2S_COMPLETION_CUE`].
pub fn build_s2s_prompt(exemplars: &[&Summary]) -> Result<String, PromptError> {
    if exemplars.len() != S2S_EXEMPLAR_COUNT {
        return Err(PromptError::SummaryCount {
            expected: S2S_EXEMPLAR_COUNT,
            got: exemplars.len(),
        });
    }
    let mut p = String::new();
    p.push_str(S2S_HEADER);
    p.push('\n');
    for (i, summary) in exemplars.iter().enumerate() {
        p.push_str("Summary ");
        push_usize(&mut p, i + 1);
        p.push_str(": ");
        p.push_str(summary.text());
        p.push('\n');
    }
    p.push_str(S2S_COMPLETION_CUE);
    Ok(p)
}

/// Prompt that asks for the next utterance of a dialogue planned by
/// `summary`, after the already-accepted `prefix` turns. Ends with the
/// speaker cue for the next turn (`User A:` when the prefix is empty).
pub fn build_s2d_prompt(
    bundle: &PromptBundle,
    summary: &Summary,
    prefix: &[Utterance],
) -> Result<String, PromptError> {
    if !alternates_from_a(prefix) {
        return Err(PromptError::NonAlternatingPrefix);
    }
    let mut p = String::new();
    p.push_str(S2D_HEADER);
    p.push('\n');
    for (i, pair) in bundle.s2d_exemplars().iter().enumerate() {
        push_numbered(&mut p, "Exemplar", i + 1);
        p.push_str(pair.summary().text());
        p.push_str("\nDialogue:\n");
        p.push_str(&render_dialogue(pair.dialogue()));
        p.push('\n');
    }
    push_numbered(&mut p, "Exemplar", bundle.s2d_exemplars().len() + 1);
    p.push_str(summary.text());
    p.push_str("\nDialogue:\n");
    if !prefix.is_empty() {
        p.push_str(&render_utterances(prefix));
        p.push('\n');
    }
    p.push_str(Speaker::nth(prefix.len()).cue());
    Ok(p)
}

fn push_numbered(out: &mut String, label: &str, index: usize) {
    out.push_str(label);
    out.push(' ');
    push_usize(out, index);
    out.push_str(":\n");
}

fn push_usize(out: &mut String, value: usize) {
    let mut buf = [0u8; 20];
    let mut v = value;
    let mut i = buf.len();
    loop {
        i -= 1;
        buf[i] = b'0' + (v % 10) as u8;
        v /= 10;
        if v == 0 {
            break;
        }
    }
    out.push_str(core::str::from_utf8(&buf[i..]).expect("digits are ascii"));
}
