//! Run manifests: every file of a run directory with its content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Checkpoint paths in order, relative to the run directory.
    pub checkpoints: Vec<String>,
    pub artifacts: Vec<ArtifactEntry>,
}

fn relative(root: &Path, path: &Path) -> Result<String> {
    let rel = path
        .strip_prefix(root)
        .map_err(|_| Error::Contract(format!("{} is outside {}", path.display(), root.display())))?;
    Ok(rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/"))
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn hash_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((crate::util::sha256_hex(&bytes), bytes.len() as u64))
}

impl RunManifest {
    /// Hashes every file under `root` except an existing manifest.
    pub fn build(root: &Path, seed: u64, config: serde_json::Value, checkpoints: &[PathBuf]) -> Result<Self> {
        let mut files = Vec::new();
        walk(root, &mut files)?;
        let mut artifacts = Vec::with_capacity(files.len());
        for f in files {
            let path = relative(root, &f)?;
            if path == MANIFEST_FILE {
                continue;
            }
            let (sha256, bytes) = hash_file(&f)?;
            artifacts.push(ArtifactEntry { path, sha256, bytes });
        }
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            checkpoints: checkpoints.iter().map(|c| relative(root, c)).collect::<Result<_>>()?,
            artifacts,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks that every listed file exists with the recorded hash and that
    /// every checkpoint is listed.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for a in &self.artifacts {
            let path = root.join(&a.path);
            let (sha, _) = hash_file(&path)?;
            if sha != a.sha256 {
                return Err(Error::Provenance {
                    expected: format!("{} {}", a.path, a.sha256),
                    actual: sha,
                });
            }
        }
        for c in &self.checkpoints {
            if !self.artifacts.iter().any(|a| &a.path == c) {
                return Err(Error::Contract(format!("checkpoint {c} is not a listed artifact")));
            }
        }
        Ok(())
    }
}
