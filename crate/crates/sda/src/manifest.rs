//! Run manifests: the resolved configuration snapshot, the rng seed, and
//! content hashes of the exemplar bundle and goldens directory. Together
//! with the input files this replays a mock run exactly. Nothing volatile
//! (timestamps, durations) is recorded, so reruns write identical bytes.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::FileConfig;
use crate::error::CliError;

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'static str,
    pub rng_seed: u64,
    pub config: &'a FileConfig,
    pub exemplar_bundle_sha256: Option<String>,
    pub goldens_sha256: Option<String>,
    pub downgrades: Vec<String>,
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, config: &'a FileConfig) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            rng_seed: config.rng_seed,
            config,
            exemplar_bundle_sha256: None,
            goldens_sha256: None,
            downgrades: Vec::new(),
        }
    }
}

fn hash_file(hasher: &mut Sha256, path: &Path) -> Result<(), CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Io(format!("cannot hash `{}`: {e}", path.display())))?;
    hasher.update(bytes);
    Ok(())
}

/// SHA-256 over a file, or over a directory's files (sorted by name, names
/// included) when `path` is a directory.
pub fn content_sha256(path: &Path) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)
            .map_err(|e| CliError::Io(format!("cannot list `{}`: {e}", path.display())))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for entry in entries {
            if let Some(name) = entry.file_name() {
                hasher.update(name.to_string_lossy().as_bytes());
            }
            hash_file(&mut hasher, &entry)?;
        }
    } else {
        hash_file(&mut hasher, path)?;
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_hash_is_stable_and_content_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.txt"), "two").unwrap();
        fs::write(dir.path().join("a.txt"), "one").unwrap();
        let first = content_sha256(dir.path()).unwrap();
        let second = content_sha256(dir.path()).unwrap();
        assert_eq!(first, second);
        fs::write(dir.path().join("a.txt"), "changed").unwrap();
        assert_ne!(content_sha256(dir.path()).unwrap(), first);
    }

    #[test]
    fn manifest_serializes_deterministically() {
        let config = FileConfig::default();
        let manifest = Manifest::new("pipeline", &config);
        let a = serde_json::to_string_pretty(&manifest).unwrap();
        let b = serde_json::to_string_pretty(&Manifest::new("pipeline", &config)).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"command\": \"pipeline\""));
    }
}
