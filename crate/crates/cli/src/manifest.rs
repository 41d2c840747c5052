//! Output directory with a content-hash manifest.

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    /// Path relative to the output root, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Every artifact goes through [`OutputSink::write`], which records it; the
/// manifest is written once at the end. Scoped sinks share the record.
#[derive(Debug, Clone)]
pub struct OutputSink {
    root: PathBuf,
    prefix: String,
    entries: Arc<Mutex<Vec<ManifestEntry>>>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl OutputSink {
    pub fn create(root: impl Into<PathBuf>) -> anyhow::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self { root, prefix: String::new(), entries: Arc::new(Mutex::new(Vec::new())) })
    }

    /// A view writing below `sub/`, recorded in the same manifest.
    pub fn scoped(&self, sub: &str) -> Self {
        Self { root: self.root.clone(), prefix: self.rel(sub), entries: Arc::clone(&self.entries) }
    }

    fn rel(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}/{name}", self.prefix)
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` (relative to the root) and records its hash.
    pub fn write(&self, rel: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let rel = self.rel(rel);
        let path = self.root.join(&rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        let entry =
            ManifestEntry { path: rel.replace('\\', "/"), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 };
        let mut entries = self.entries.lock().expect("manifest lock");
        entries.retain(|e| e.path != entry.path);
        entries.push(entry);
        Ok(())
    }

    /// Builds the artifact in memory with `fill`, then writes it.
    pub fn write_with<F>(&self, rel: &str, fill: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> spinrotor_core::Result<()>,
    {
        let mut buf = Vec::new();
        fill(&mut buf).with_context(|| format!("rendering {rel}"))?;
        self.write(rel, &buf)
    }

    pub fn entries(&self) -> Vec<ManifestEntry> {
        let mut v = self.entries.lock().expect("manifest lock").clone();
        v.sort_by(|a, b| a.path.cmp(&b.path));
        v
    }

    /// Writes `manifest.json` listing every recorded artifact, sorted by path.
    pub fn finish(&self) -> anyhow::Result<Vec<ManifestEntry>> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            files: &'a [ManifestEntry],
        }
        let entries = self.entries();
        let mut text = serde_json::to_string_pretty(&Manifest { files: &entries })?;
        text.push('\n');
        let path = self.root.join(MANIFEST_NAME);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(entries)
    }
}
