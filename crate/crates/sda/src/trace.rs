//! Prompt tracing to files: one file per prompt under
//! `<out>/trace/<stage>/<item>.txt`. Write failures are stashed rather than
//! escalated, so tracing never aborts a run; the runner reports the first
//! failure at the end.

use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use sda_core::augmentor::{PromptTrace, Stage};

pub struct FileTrace {
    dir: PathBuf,
    first_error: Mutex<Option<String>>,
}

impl FileTrace {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir, first_error: Mutex::new(None) }
    }

    pub fn first_error(&self) -> Option<String> {
        self.first_error.lock().expect("trace mutex poisoned").clone()
    }

    fn sanitize(item: &str) -> String {
        item.chars().map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '-' }).collect()
    }
}

impl PromptTrace for FileTrace {
    fn record(&self, stage: Stage, item: &str, prompt: &str) {
        let dir = self.dir.join(stage.as_str());
        let path = dir.join(format!("{}.txt", Self::sanitize(item)));
        let result = fs::create_dir_all(&dir).and_then(|_| fs::write(&path, prompt));
        if let Err(e) = result {
            let mut slot = self.first_error.lock().expect("trace mutex poisoned");
            if slot.is_none() {
                *slot = Some(format!("cannot write trace `{}`: {e}", path.display()));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_one_file_per_prompt() {
        let dir = tempfile::tempdir().unwrap();
        let trace = FileTrace::new(dir.path().to_path_buf());
        trace.record(Stage::Summarize, "seed-001", "prompt text");
        trace.record(Stage::GenerateDialogues, "sda-0001:pass0:turn1:try0", "other");
        assert!(dir.path().join("summarize/seed-001.txt").exists());
        assert!(dir
            .path()
            .join("generate_dialogues/sda-0001-pass0-turn1-try0.txt")
            .exists());
        assert!(trace.first_error().is_none());
    }
}
