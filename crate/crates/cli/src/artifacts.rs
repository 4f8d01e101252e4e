//! Output directory with a manifest of every file written.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use reshuffle::export::Provenance;
use reshuffle::{Error, Result};

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    /// Data rows for tables, absent for JSON documents.
    pub rows: Option<usize>,
    pub preset: Option<String>,
    pub caption_ref: Option<String>,
}

pub struct Artifacts {
    dir: PathBuf,
    provenance: Option<Provenance>,
    entries: Vec<ManifestEntry>,
    verbose: bool,
}

impl Artifacts {
    pub fn new(dir: impl AsRef<Path>, provenance: Option<Provenance>, verbose: bool) -> Result<Self> {
        std::fs::create_dir_all(dir.as_ref())?;
        Ok(Artifacts {
            dir: dir.as_ref().to_path_buf(),
            provenance,
            entries: Vec::new(),
            verbose,
        })
    }

    fn store(&mut self, name: &str, bytes: &[u8], rows: Option<usize>) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        let entry = ManifestEntry {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            rows,
            preset: self.provenance.as_ref().map(|p| p.preset.clone()),
            caption_ref: self.provenance.as_ref().map(|p| p.caption_ref.clone()),
        };
        if self.verbose {
            eprintln!("wrote {} ({} bytes)", self.dir.join(name).display(), bytes.len());
        }
        self.entries.retain(|e| e.file != name);
        self.entries.push(entry);
        Ok(())
    }

    /// Writes a table through `fill`, which receives the buffer and the provenance and
    /// returns the row count.
    pub fn table(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>, Option<&Provenance>) -> Result<usize>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        let rows = fill(&mut buf, self.provenance.as_ref())?;
        self.store(name, &buf, Some(rows))
    }

    pub fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        text.push('\n');
        self.store(name, text.as_bytes(), None)
    }

    /// Writes `manifest.json` and returns its path.
    pub fn finish(self) -> Result<PathBuf> {
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&self.entries).map_err(|e| Error::Io(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}
