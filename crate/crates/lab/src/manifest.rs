//! `manifest.json`: what produced a run directory and digests of its files.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::formats::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub platform: String,
    /// Resolved config, as written to `config.toml`.
    pub config: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub complete: bool,
    pub files: Vec<FileDigest>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn digest_file(dir: &Path, name: &str) -> Result<FileDigest> {
    let bytes = fs::read(dir.join(name)).with_context(|| format!("reading {name}"))?;
    Ok(FileDigest {
        path: name.to_string(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

impl RunManifest {
    /// Writes an incomplete manifest into `dir`.
    pub fn begin(dir: &Path, config: &str) -> Result<Self> {
        let m = Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            platform: format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
            config: config.to_string(),
            started_unix: now_unix(),
            finished_unix: None,
            complete: false,
            files: Vec::new(),
        };
        m.write(dir)?;
        Ok(m)
    }

    /// Records digests of `files` (relative to `dir`) and marks the run complete.
    pub fn finalize(&mut self, dir: &Path, files: &[&str]) -> Result<()> {
        self.files = files
            .iter()
            .map(|f| digest_file(dir, f))
            .collect::<Result<_>>()?;
        self.finished_unix = Some(now_unix());
        self.complete = true;
        self.write(dir)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())
            .with_context(|| format!("writing manifest in {}", dir.display()))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))
            .with_context(|| format!("reading manifest in {}", dir.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Problems found when re-digesting the inventory; empty means intact.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        let mut problems = Vec::new();
        if !self.complete {
            problems.push("run did not complete".to_string());
        }
        for f in &self.files {
            match digest_file(dir, &f.path) {
                Ok(d) if d == *f => {}
                Ok(d) if d.bytes != f.bytes => problems.push(format!(
                    "{}: size {} differs from recorded {}",
                    f.path, d.bytes, f.bytes
                )),
                Ok(_) => problems.push(format!("{}: digest mismatch", f.path)),
                Err(e) => problems.push(format!("{}: {e:#}", f.path)),
            }
        }
        problems
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_tampering_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        fs::write(d.join("a.csv"), "x,y\n1,2\n").unwrap();
        fs::write(d.join("b.csv"), "z\n3\n").unwrap();
        let mut m = RunManifest::begin(d, "master_seed = 0\n").unwrap();
        assert!(!RunManifest::load(d).unwrap().complete);
        m.finalize(d, &["a.csv", "b.csv"]).unwrap();
        let loaded = RunManifest::load(d).unwrap();
        assert_eq!(loaded, m);
        assert!(loaded.verify(d).is_empty());

        fs::write(d.join("a.csv"), "x,y\n1,3\n").unwrap();
        fs::write(d.join("b.csv"), "z\n").unwrap();
        let problems = loaded.verify(d);
        assert_eq!(problems.len(), 2, "{problems:?}");
        assert!(problems[0].contains("digest"));
        assert!(problems[1].contains("size"));
        fs::remove_file(d.join("a.csv")).unwrap();
        assert_eq!(loaded.verify(d).len(), 2);
    }
}
