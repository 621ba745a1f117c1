//! Line-delimited JSON persistence for dialogue and summary pools, plus the
//! exemplar bundle loader.
//!
//! One record per line; loading validates every record and reports the
//! offending line number. Saving always emits the canonical field order, so
//! a load/save round trip is byte-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use sda_core::corpus::{
    relabel_speakers, CorpusError, Dialogue, DialogueOrigin, DialoguePool, PoolRole, Speaker,
    Summary, SummaryOrigin, SummaryPool, Utterance,
};
use sda_core::prompting::{ExemplarPair, PromptBundle};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("cannot read `{path}`: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write `{path}`: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: invalid record: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: {source}")]
    Invalid { path: PathBuf, line: usize, source: CorpusError },
    #[error("exemplar bundle at `{path}`: {message}")]
    Bundle { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub id: String,
    pub origin: String,
    pub utterances: Vec<UtteranceRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub id: String,
    pub origin: String,
    pub parent_dialogue_id: Option<String>,
    pub text: String,
}

impl From<&Dialogue> for DialogueRecord {
    fn from(dialogue: &Dialogue) -> Self {
        DialogueRecord {
            id: dialogue.id().to_string(),
            origin: dialogue.origin().as_str().to_string(),
            utterances: dialogue
                .utterances()
                .iter()
                .map(|u| UtteranceRecord {
                    speaker: u.speaker().label().to_string(),
                    text: u.text().to_string(),
                })
                .collect(),
        }
    }
}

impl From<&Summary> for SummaryRecord {
    fn from(summary: &Summary) -> Self {
        SummaryRecord {
            id: summary.id().to_string(),
            origin: summary.origin().as_str().to_string(),
            parent_dialogue_id: summary.parent_dialogue_id().map(str::to_string),
            text: summary.text().to_string(),
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, RecordError> {
    let content = fs::read_to_string(path)
        .map_err(|source| RecordError::Read { path: path.to_path_buf(), source })?;
    Ok(content.lines().map(str::to_string).collect())
}

fn dialogue_from_record(
    record: DialogueRecord,
    relabel: bool,
    path: &Path,
    line: usize,
) -> Result<Dialogue, RecordError> {
    let origin = DialogueOrigin::parse(&record.origin).ok_or_else(|| RecordError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("unknown dialogue origin `{}`", record.origin),
    })?;
    let mut speakers = Vec::with_capacity(record.utterances.len());
    for u in &record.utterances {
        let speaker = Speaker::parse(&u.speaker).ok_or_else(|| RecordError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("unknown speaker `{}`", u.speaker),
        })?;
        speakers.push(speaker);
    }
    if relabel {
        relabel_speakers(&mut speakers);
    }
    let invalid = |source| RecordError::Invalid { path: path.to_path_buf(), line, source };
    let mut utterances = Vec::with_capacity(record.utterances.len());
    for (u, speaker) in record.utterances.iter().zip(speakers) {
        utterances.push(Utterance::new(speaker, u.text.clone()).map_err(invalid)?);
    }
    Dialogue::new(record.id, origin, utterances).map_err(invalid)
}

/// Load a dialogue pool. With `relabel`, swapped speaker labels are renamed
/// in order of first appearance before validation.
pub fn load_dialogue_pool(
    path: &Path,
    role: PoolRole,
    relabel: bool,
) -> Result<DialoguePool, RecordError> {
    let mut pool = DialoguePool::new(role);
    for (i, raw) in read_lines(path)?.iter().enumerate() {
        let line = i + 1;
        let record: DialogueRecord =
            serde_json::from_str(raw).map_err(|e| RecordError::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
        let dialogue = dialogue_from_record(record, relabel, path, line)?;
        pool.push(dialogue).map_err(|source| RecordError::Invalid {
            path: path.to_path_buf(),
            line,
            source,
        })?;
    }
    Ok(pool)
}

pub fn load_summary_pool(path: &Path, role: PoolRole) -> Result<SummaryPool, RecordError> {
    let mut pool = SummaryPool::new(role);
    for (i, raw) in read_lines(path)?.iter().enumerate() {
        let line = i + 1;
        let record: SummaryRecord = serde_json::from_str(raw).map_err(|e| RecordError::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let origin = SummaryOrigin::parse(&record.origin).ok_or_else(|| RecordError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("unknown summary origin `{}`", record.origin),
        })?;
        let summary = Summary::new(record.id, origin, record.parent_dialogue_id, record.text)
            .map_err(|source| RecordError::Invalid { path: path.to_path_buf(), line, source })?;
        pool.push(summary).map_err(|source| RecordError::Invalid {
            path: path.to_path_buf(),
            line,
            source,
        })?;
    }
    Ok(pool)
}

fn write_jsonl<T: Serialize>(items: impl Iterator<Item = T>, path: &Path) -> Result<(), RecordError> {
    let mut out = Vec::new();
    for item in items {
        let line = serde_json::to_string(&item).expect("records serialize infallibly");
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|source| RecordError::Write { path: path.to_path_buf(), source })?;
    }
    let mut file = fs::File::create(path)
        .map_err(|source| RecordError::Write { path: path.to_path_buf(), source })?;
    file.write_all(&out)
        .map_err(|source| RecordError::Write { path: path.to_path_buf(), source })?;
    Ok(())
}

pub fn save_dialogue_pool(pool: &DialoguePool, path: &Path) -> Result<(), RecordError> {
    write_jsonl(pool.iter().map(DialogueRecord::from), path)
}

pub fn save_summary_pool(pool: &SummaryPool, path: &Path) -> Result<(), RecordError> {
    write_jsonl(pool.iter().map(SummaryRecord::from), path)
}

/// Load the exemplar bundle from a directory holding `dialogues.jsonl` and
/// `summaries.jsonl` (five records each, summaries linked to dialogues via
/// `parent_dialogue_id`). The same five pairs serve both the
/// dialogue→summary and summary→dialogue prompts.
pub fn load_exemplar_bundle(dir: &Path) -> Result<PromptBundle, RecordError> {
    let dialogues = load_dialogue_pool(&dir.join("dialogues.jsonl"), PoolRole::Seed, false)?;
    let summaries = load_summary_pool(&dir.join("summaries.jsonl"), PoolRole::Seed)?;
    let bundle_err = |message: String| RecordError::Bundle { path: dir.to_path_buf(), message };

    let mut pairs = Vec::with_capacity(dialogues.len());
    for dialogue in dialogues.iter() {
        let summary = summaries
            .iter()
            .find(|s| s.parent_dialogue_id() == Some(dialogue.id()))
            .ok_or_else(|| {
                bundle_err(format!("no summary linked to dialogue `{}`", dialogue.id()))
            })?;
        let pair = ExemplarPair::new(dialogue.clone(), summary.clone())
            .map_err(|e| bundle_err(e.to_string()))?;
        pairs.push(pair);
    }
    PromptBundle::new(pairs.clone(), pairs).map_err(|e| bundle_err(e.to_string()))
}
