use std::collections::HashMap;
use std::path::Path;

use regex::Regex;

use super::{EntityRecognizer, RawEntity};
use crate::{AdapterError, Error, Result};

const DEFAULT_GAZETTEER: &str = include_str!("../../data/gazetteer.tsv");

const DATE_PATTERNS: &[&str] = &[
    r"\b(?:January|February|March|April|May|June|July|August|September|October|November|December)(?:\s+\d{1,2})?(?:,\s*\d{4})?\b",
    r"\b(?:Monday|Tuesday|Wednesday|Thursday|Friday|Saturday|Sunday)\b",
    r"\b(?:19|20)\d{2}\b",
];

const TIME_PATTERNS: &[&str] = &[r"\b\d{1,2}(?::\d{2})?\s?(?:a\.m\.|p\.m\.|am\b|pm\b)"];

/// Dictionary and pattern based recognizer. Phrases come from a TSV
/// gazetteer (`LABEL<TAB>phrase`); dates and clock times are matched with
/// fixed patterns.
#[derive(Debug, Clone)]
pub struct GazetteerRecognizer {
    entries: Vec<(String, String)>,
    phrases: Option<Regex>,
    labels: HashMap<String, String>,
    patterns: Vec<(Regex, &'static str)>,
}

impl Default for GazetteerRecognizer {
    fn default() -> Self {
        Self::from_tsv(DEFAULT_GAZETTEER).expect("bundled gazetteer is valid")
    }
}

impl GazetteerRecognizer {
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (label, phrase) = line.split_once('\t').ok_or_else(|| {
                Error::Invalid(format!("gazetteer line {}: expected LABEL<TAB>phrase", i + 1))
            })?;
            entries.push((label.trim().to_string(), phrase.trim().to_string()));
        }
        Self::from_entries(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    /// Default gazetteer extended with the entries of `path`.
    pub fn default_extended_with(path: impl AsRef<Path>) -> Result<Self> {
        let extra = Self::load(path)?;
        let mut entries = Self::default().entries;
        entries.extend(extra.entries);
        Self::from_entries(entries)
    }

    fn from_entries(entries: Vec<(String, String)>) -> Result<Self> {
        let mut phrases: Vec<&str> = entries.iter().map(|(_, p)| p.as_str()).collect();
        // Longest first so alternation prefers the longest phrase at a position.
        phrases.sort_by_key(|p| std::cmp::Reverse(p.chars().count()));
        phrases.dedup();
        let phrase_re = if phrases.is_empty() {
            None
        } else {
            let alt = phrases
                .iter()
                .map(|p| regex::escape(p))
                .collect::<Vec<_>>()
                .join("|");
            Some(Regex::new(&format!(r"\b(?:{alt})\b"))?)
        };
        let labels = entries
            .iter()
            .map(|(l, p)| (p.clone(), l.clone()))
            .collect();
        let mut patterns = Vec::new();
        for p in DATE_PATTERNS {
            patterns.push((Regex::new(p)?, "DATE"));
        }
        for p in TIME_PATTERNS {
            patterns.push((Regex::new(p)?, "TIME"));
        }
        Ok(Self {
            entries,
            phrases: phrase_re,
            labels,
            patterns,
        })
    }

    /// Phrases registered under `label`, in file order.
    pub fn phrases_for(&self, label: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(l, _)| l == label)
            .map(|(_, p)| p.as_str())
            .collect()
    }
}

fn char_offset(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

impl EntityRecognizer for GazetteerRecognizer {
    fn recognize(&self, text: &str) -> std::result::Result<Vec<RawEntity>, AdapterError> {
        let mut out = Vec::new();
        if let Some(re) = &self.phrases {
            for m in re.find_iter(text) {
                if let Some(label) = self.labels.get(m.as_str()) {
                    out.push(RawEntity {
                        start: char_offset(text, m.start()),
                        end: char_offset(text, m.end()),
                        label: label.clone(),
                    });
                }
            }
        }
        for (re, label) in &self.patterns {
            for m in re.find_iter(text) {
                out.push(RawEntity {
                    start: char_offset(text, m.start()),
                    end: char_offset(text, m.end()),
                    label: (*label).to_string(),
                });
            }
        }
        Ok(out)
    }
}
