//! Dialogue and summary data model.
//!
//! A dialogue is a speaker-alternating sequence of single-line utterances,
//! always opened by speaker A. A summary is a one-paragraph plan of a
//! dialogue and always starts with [`SUMMARY_PREFIX`]. Pools are ordered,
//! append-only collections with unique ids. Tokens are maximal runs of
//! non-whitespace characters throughout the crate.

use alloc::string::{String, ToString};
use alloc::{collections::BTreeSet, vec::Vec};

use thiserror::Error;

/// Canonical opening of every summary plan.
pub const SUMMARY_PREFIX: &str = "In the above dialogue,";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("utterance text is empty")]
    EmptyUtterance,
    #[error("utterance text contains a newline")]
    NewlineInUtterance,
    #[error("dialogue `{id}` has no utterances")]
    EmptyDialogue { id: String },
    #[error("dialogue `{id}` does not open with speaker A")]
    FirstSpeakerNotA { id: String },
    #[error("dialogue `{id}` has consecutive turns by the same speaker at turn {turn}")]
    NonAlternatingSpeakers { id: String, turn: usize },
    #[error("summary `{id}` does not start with \"In the above dialogue,\"")]
    MissingSummaryPrefix { id: String },
    #[error("duplicate id `{id}` in pool")]
    DuplicateId { id: String },
    #[error("line {line} of rendered dialogue has no speaker prefix")]
    UnparsableLine { line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Speaker {
    A,
    B,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::A => Speaker::B,
            Speaker::B => Speaker::A,
        }
    }

    /// Speaker of the zero-based `index`-th turn: A, B, A, B, ...
    pub fn nth(index: usize) -> Speaker {
        if index % 2 == 0 {
            Speaker::A
        } else {
            Speaker::B
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Speaker::A => "A",
            Speaker::B => "B",
        }
    }

    pub fn parse(label: &str) -> Option<Speaker> {
        match label {
            "A" => Some(Speaker::A),
            "B" => Some(Speaker::B),
            _ => None,
        }
    }

    /// Line prefix in the rendered form, e.g. `"User A: "`.
    pub fn line_prefix(self) -> &'static str {
        match self {
            Speaker::A => "User A: ",
            Speaker::B => "User B: ",
        }
    }

    /// Bare speaker cue used at the end of generation prompts, e.g. `"User A:"`.
    pub fn cue(self) -> &'static str {
        match self {
            Speaker::A => "User A:",
            Speaker::B => "User B:",
        }
    }
}

/// One turn of a dialogue. The text is non-empty and spans a single line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    speaker: Speaker,
    text: String,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Result<Self, CorpusError> {
        let text = text.into();
        if text.is_empty() {
            return Err(CorpusError::EmptyUtterance);
        }
        if text.chars().any(|c| c == '\n' || c == '\r') {
            return Err(CorpusError::NewlineInUtterance);
        }
        Ok(Self { speaker, text })
    }

    pub fn speaker(&self) -> Speaker {
        self.speaker
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DialogueOrigin {
    Seed,
    Sda,
    Mlm,
    Icl,
    IclCtx,
}

impl DialogueOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            DialogueOrigin::Seed => "seed",
            DialogueOrigin::Sda => "sda",
            DialogueOrigin::Mlm => "mlm",
            DialogueOrigin::Icl => "icl",
            DialogueOrigin::IclCtx => "icl_ctx",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "seed" => Some(DialogueOrigin::Seed),
            "sda" => Some(DialogueOrigin::Sda),
            "mlm" => Some(DialogueOrigin::Mlm),
            "icl" => Some(DialogueOrigin::Icl),
            "icl_ctx" => Some(DialogueOrigin::IclCtx),
            _ => None,
        }
    }
}

/// A two-party dialogue: non-empty, strictly alternating, speaker A first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    id: String,
    origin: DialogueOrigin,
    utterances: Vec<Utterance>,
}

impl Dialogue {
    pub fn new(
        id: impl Into<String>,
        origin: DialogueOrigin,
        utterances: Vec<Utterance>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        if utterances.is_empty() {
            return Err(CorpusError::EmptyDialogue { id });
        }
        if utterances[0].speaker() != Speaker::A {
            return Err(CorpusError::FirstSpeakerNotA { id });
        }
        for (i, pair) in utterances.windows(2).enumerate() {
            if pair[0].speaker() == pair[1].speaker() {
                return Err(CorpusError::NonAlternatingSpeakers { id, turn: i + 2 });
            }
        }
        Ok(Self { id, origin, utterances })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn origin(&self) -> DialogueOrigin {
        self.origin
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn turn_count(&self) -> usize {
        self.utterances.len()
    }

    /// Whitespace tokens across all utterance texts.
    pub fn token_count(&self) -> usize {
        self.utterances.iter().map(|u| token_count(u.text())).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryOrigin {
    Seed,
    Generated,
}

impl SummaryOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            SummaryOrigin::Seed => "seed",
            SummaryOrigin::Generated => "generated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "seed" => Some(SummaryOrigin::Seed),
            "generated" => Some(SummaryOrigin::Generated),
            _ => None,
        }
    }
}

/// A dialogue plan. Text always opens with [`SUMMARY_PREFIX`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    id: String,
    text: String,
    origin: SummaryOrigin,
    parent_dialogue_id: Option<String>,
}

impl Summary {
    pub fn new(
        id: impl Into<String>,
        origin: SummaryOrigin,
        parent_dialogue_id: Option<String>,
        text: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        let text = text.into();
        if !text.starts_with(SUMMARY_PREFIX) {
            return Err(CorpusError::MissingSummaryPrefix { id });
        }
        Ok(Self { id, text, origin, parent_dialogue_id })
    }

    /// Build a seed summary from a raw completion of the summarization
    /// prompt, whose cue already ends with [`SUMMARY_PREFIX`]. The completion
    /// is trimmed and joined to the prefix with a single space.
    pub fn seed_from_completion(
        id: impl Into<String>,
        parent_dialogue_id: impl Into<String>,
        completion: &str,
    ) -> Summary {
        let body = completion.trim();
        let text = if body.is_empty() {
            SUMMARY_PREFIX.to_string()
        } else {
            let mut t = String::with_capacity(SUMMARY_PREFIX.len() + 1 + body.len());
            t.push_str(SUMMARY_PREFIX);
            t.push(' ');
            t.push_str(body);
            t
        };
        Summary {
            id: id.into(),
            text,
            origin: SummaryOrigin::Seed,
            parent_dialogue_id: Some(parent_dialogue_id.into()),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn origin(&self) -> SummaryOrigin {
        self.origin
    }

    pub fn parent_dialogue_id(&self) -> Option<&str> {
        self.parent_dialogue_id.as_deref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolRole {
    Seed,
    Augmented,
}

impl PoolRole {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolRole::Seed => "seed",
            PoolRole::Augmented => "augmented",
        }
    }
}

/// Ordered, append-only collection of dialogues with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialoguePool {
    role: PoolRole,
    items: Vec<Dialogue>,
    ids: BTreeSet<String>,
}

impl DialoguePool {
    pub fn new(role: PoolRole) -> Self {
        Self { role, items: Vec::new(), ids: BTreeSet::new() }
    }

    pub fn from_dialogues(
        role: PoolRole,
        dialogues: impl IntoIterator<Item = Dialogue>,
    ) -> Result<Self, CorpusError> {
        let mut pool = Self::new(role);
        for d in dialogues {
            pool.push(d)?;
        }
        Ok(pool)
    }

    pub fn push(&mut self, dialogue: Dialogue) -> Result<(), CorpusError> {
        if !self.ids.insert(dialogue.id().to_string()) {
            return Err(CorpusError::DuplicateId { id: dialogue.id().to_string() });
        }
        self.items.push(dialogue);
        Ok(())
    }

    pub fn role(&self) -> PoolRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Dialogue] {
        &self.items
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Dialogue> {
        self.items.iter()
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.ids.contains(id)
    }
}

/// Ordered, append-only collection of summaries with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryPool {
    role: PoolRole,
    items: Vec<Summary>,
    ids: BTreeSet<String>,
}

impl SummaryPool {
    pub fn new(role: PoolRole) -> Self {
        Self { role, items: Vec::new(), ids: BTreeSet::new() }
    }

    pub fn from_summaries(
        role: PoolRole,
        summaries: impl IntoIterator<Item = Summary>,
    ) -> Result<Self, CorpusError> {
        let mut pool = Self::new(role);
        for s in summaries {
            pool.push(s)?;
        }
        Ok(pool)
    }

    pub fn push(&mut self, summary: Summary) -> Result<(), CorpusError> {
        if !self.ids.insert(summary.id().to_string()) {
            return Err(CorpusError::DuplicateId { id: summary.id().to_string() });
        }
        self.items.push(summary);
        Ok(())
    }

    pub fn role(&self) -> PoolRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Summary] {
        &self.items
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Summary> {
        self.items.iter()
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.ids.contains(id)
    }
}

/// Split into whitespace tokens.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Number of whitespace tokens.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Byte ranges `(start, end)` of each whitespace token, in order.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Render turns as `User A: ...` lines joined by single newlines.
pub fn render_utterances(utterances: &[Utterance]) -> String {
    let mut out = String::new();
    for (i, u) in utterances.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(u.speaker().line_prefix());
        out.push_str(u.text());
    }
    out
}

/// Canonical text form of a dialogue.
pub fn render_dialogue(dialogue: &Dialogue) -> String {
    render_utterances(dialogue.utterances())
}

/// Inverse of [`render_dialogue`]: parse `User A: ...` lines back into a
/// dialogue with the given id and origin.
pub fn parse_rendered_dialogue(
    id: impl Into<String>,
    origin: DialogueOrigin,
    text: &str,
) -> Result<Dialogue, CorpusError> {
    let mut utterances = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (speaker, rest) = if let Some(rest) = line.strip_prefix(Speaker::A.line_prefix()) {
            (Speaker::A, rest)
        } else if let Some(rest) = line.strip_prefix(Speaker::B.line_prefix()) {
            (Speaker::B, rest)
        } else {
            return Err(CorpusError::UnparsableLine { line: i + 1 });
        };
        utterances.push(Utterance::new(speaker, rest)?);
    }
    Dialogue::new(id, origin, utterances)
}

/// True when speakers follow the A, B, A, B, ... sequence. Holds vacuously
/// for an empty slice.
pub fn alternates_from_a(utterances: &[Utterance]) -> bool {
    utterances
        .iter()
        .enumerate()
        .all(|(i, u)| u.speaker() == Speaker::nth(i))
}

/// Rename speakers in order of first appearance: the first label observed
/// becomes A, the other B. Repairs swapped-speaker records; sequences with
/// consecutive same-speaker turns remain invalid.
pub fn relabel_speakers(speakers: &mut [Speaker]) {
    if speakers.first() == Some(&Speaker::B) {
        for s in speakers.iter_mut() {
            *s = s.other();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn utt(speaker: Speaker, text: &str) -> Utterance {
        Utterance::new(speaker, text).unwrap()
    }

    #[test]
    fn tokenize_splits_on_any_whitespace() {
        assert_eq!(tokenize("Hello , world"), vec!["Hello", ",", "world"]);
        assert_eq!(tokenize(""), Vec::<&str>::new());
        assert_eq!(tokenize("a  b\tc"), vec!["a", "b", "c"]);
        assert_eq!(token_count("Hello , world"), 3);
    }

    #[test]
    fn token_spans_cover_tokens() {
        let text = " a  bb\tccc ";
        let spans = token_spans(text);
        assert_eq!(spans.len(), 3);
        let toks: Vec<&str> = spans.iter().map(|&(s, e)| &text[s..e]).collect();
        assert_eq!(toks, vec!["a", "bb", "ccc"]);
    }

    #[test]
    fn render_two_turns() {
        let d = Dialogue::new(
            "d1",
            DialogueOrigin::Seed,
            vec![utt(Speaker::A, "Hi"), utt(Speaker::B, "Hello")],
        )
        .unwrap();
        assert_eq!(render_dialogue(&d), "User A: Hi\nUser B: Hello");
    }

    #[test]
    fn render_single_turn() {
        let d =
            Dialogue::new("d1", DialogueOrigin::Seed, vec![utt(Speaker::A, "Hey")]).unwrap();
        assert_eq!(render_dialogue(&d), "User A: Hey");
    }

    #[test]
    fn render_parse_round_trip() {
        let d = Dialogue::new(
            "d1",
            DialogueOrigin::Sda,
            vec![
                utt(Speaker::A, "I'm going to Japan this year."),
                utt(Speaker::B, "Lucky you, User A: is that so?"),
                utt(Speaker::A, "Yes, in June."),
            ],
        )
        .unwrap();
        let text = render_dialogue(&d);
        let back = parse_rendered_dialogue("d1", DialogueOrigin::Sda, &text).unwrap();
        assert_eq!(back, d);
        assert_eq!(render_dialogue(&back), text);
    }

    #[test]
    fn parse_rejects_lines_without_prefix() {
        let err = parse_rendered_dialogue("x", DialogueOrigin::Seed, "User A: hi\nnope")
            .unwrap_err();
        assert_eq!(err, CorpusError::UnparsableLine { line: 2 });
    }

    #[test]
    fn utterance_invariants() {
        assert_eq!(Utterance::new(Speaker::A, "").unwrap_err(), CorpusError::EmptyUtterance);
        assert_eq!(
            Utterance::new(Speaker::A, "a\nb").unwrap_err(),
            CorpusError::NewlineInUtterance
        );
    }

    #[test]
    fn dialogue_invariants() {
        assert!(matches!(
            Dialogue::new("d", DialogueOrigin::Seed, vec![]),
            Err(CorpusError::EmptyDialogue { .. })
        ));
        assert!(matches!(
            Dialogue::new("d", DialogueOrigin::Seed, vec![utt(Speaker::B, "hi")]),
            Err(CorpusError::FirstSpeakerNotA { .. })
        ));
        let err = Dialogue::new(
            "d",
            DialogueOrigin::Seed,
            vec![utt(Speaker::A, "one"), utt(Speaker::A, "two")],
        )
        .unwrap_err();
        assert_eq!(err, CorpusError::NonAlternatingSpeakers { id: "d".into(), turn: 2 });
    }

    #[test]
    fn summary_requires_prefix() {
        assert!(matches!(
            Summary::new("s", SummaryOrigin::Seed, None, "A summary."),
            Err(CorpusError::MissingSummaryPrefix { .. })
        ));
        let s = Summary::new(
            "s",
            SummaryOrigin::Generated,
            None,
            "In the above dialogue, User A greets User B.",
        )
        .unwrap();
        assert_eq!(s.origin(), SummaryOrigin::Generated);
    }

    #[test]
    fn seed_summary_from_completion_normalizes_whitespace() {
        let s = Summary::seed_from_completion("s1", "d1", " User A calls User B. \n");
        assert_eq!(s.text(), "In the above dialogue, User A calls User B.");
        assert_eq!(s.parent_dialogue_id(), Some("d1"));
        let empty = Summary::seed_from_completion("s2", "d2", "   ");
        assert_eq!(empty.text(), SUMMARY_PREFIX);
    }

    #[test]
    fn pool_rejects_duplicate_ids() {
        let d = Dialogue::new("dup", DialogueOrigin::Seed, vec![utt(Speaker::A, "hi there")])
            .unwrap();
        let mut pool = DialoguePool::new(PoolRole::Seed);
        pool.push(d.clone()).unwrap();
        assert_eq!(pool.push(d).unwrap_err(), CorpusError::DuplicateId { id: "dup".into() });
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn relabel_flips_swapped_speakers_only() {
        let mut swapped = vec![Speaker::B, Speaker::A, Speaker::B];
        relabel_speakers(&mut swapped);
        assert_eq!(swapped, vec![Speaker::A, Speaker::B, Speaker::A]);

        // Consecutive same-speaker turns are left as-is: renaming labels
        // cannot repair them.
        let mut stuck = vec![Speaker::A, Speaker::A, Speaker::B];
        relabel_speakers(&mut stuck);
        assert_eq!(stuck, vec![Speaker::A, Speaker::A, Speaker::B]);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn utterance_text() -> impl Strategy<Value = String> {
            proptest::string::string_regex("[a-zA-Z0-9 ,.!?']{1,40}").unwrap()
        }

        fn dialogue() -> impl Strategy<Value = Dialogue> {
            (proptest::collection::vec(utterance_text(), 1..8), "[a-z0-9]{1,8}").prop_map(
                |(texts, id)| {
                    let utterances = texts
                        .into_iter()
                        .enumerate()
                        .map(|(i, t)| Utterance::new(Speaker::nth(i), t).unwrap())
                        .collect();
                    Dialogue::new(id, DialogueOrigin::Seed, utterances).unwrap()
                },
            )
        }

        proptest! {
            #[test]
            fn render_parse_identity(d in dialogue()) {
                let text = render_dialogue(&d);
                let back = parse_rendered_dialogue(d.id(), d.origin(), &text).unwrap();
                prop_assert_eq!(&back, &d);
                prop_assert_eq!(render_dialogue(&back), text);
            }

            #[test]
            fn token_spans_match_tokenize(text in "[ a-z\t]{0,60}") {
                let spans = token_spans(&text);
                let from_spans: Vec<&str> =
                    spans.iter().map(|&(s, e)| &text[s..e]).collect();
                prop_assert_eq!(from_spans, tokenize(&text));
            }
        }
    }
}
