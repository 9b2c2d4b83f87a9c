use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CleanCaption;
use crate::util::caption_sha256;
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct CacheLine {
    sha256: String,
    #[serde(flatten)]
    caption: CleanCaption,
}

/// Preprocessed captions keyed by the sha256 of the original text; persisted
/// as JSON Lines.
#[derive(Debug, Default, Clone)]
pub struct CleanCaptionCache {
    entries: HashMap<String, CleanCaption>,
}

impl CleanCaptionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, original: &str) -> Option<&CleanCaption> {
        self.entries.get(&caption_sha256(original))
    }

    pub fn insert(&mut self, caption: CleanCaption) {
        self.entries.insert(caption_sha256(&caption.original), caption);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cache = Self::new();
        for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: CacheLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            cache.entries.insert(entry.sha256, entry.caption);
        }
        Ok(cache)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        let mut out = BufWriter::new(fs::File::create(path)?);
        for k in keys {
            let line = CacheLine {
                sha256: k.clone(),
                caption: self.entries[k].clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}
