use std::path::Path;

use regex::Regex;

use crate::Result;

/// Default credit patterns, one regular expression per entry.
pub const DEFAULT_CREDIT_PATTERNS: &[&str] = &[
    // "... (Photo: Reuters)", "(Image courtesy of NASA)"
    r"(?i)\s*\((?:file\s+)?(?:photo|photograph|image|picture|credit|courtesy|source)s?\b[^)]*\)\s*$",
    // "Image via AP | Protesters gather", also with an en or em dash
    r"(?i)^\s*(?:photo|image|picture)s?\s+(?:via|by|courtesy\s+of|credit:?)\s+[^\x{2014}\x{2013}|]+?\s*[\x{2014}\x{2013}|]\s*",
    // "Protesters gather | Photo by J. Doe", or a dash before "Image: AFP"
    r"(?i)\s*[|\x{2014}\x{2013}]\s*(?:photo|image|picture|credit|courtesy)s?\b.*$",
    // "... Photo: Reuters"
    r"(?i)\s+(?:photo|image|credit)s?\s*:\s*[A-Z][\w .&/-]*$",
    // "... /Getty Images"
    r"(?i)\s*/?\s*(?:AFP\s+via\s+)?Getty\s+Images\s*$",
];

/// Ordered list of credit patterns; see [`strip_credits`].
#[derive(Debug, Clone)]
pub struct CreditPatterns {
    patterns: Vec<Regex>,
}

impl Default for CreditPatterns {
    fn default() -> Self {
        Self::from_patterns(DEFAULT_CREDIT_PATTERNS.iter().copied())
            .expect("default credit patterns compile")
    }
}

impl CreditPatterns {
    pub fn from_patterns<'a>(patterns: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        Ok(Self {
            patterns: patterns
                .into_iter()
                .map(Regex::new)
                .collect::<Result<_, _>>()?,
        })
    }

    /// Plain text file, one pattern per line, `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_patterns(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

/// Removes credit boilerplate matched by any pattern, repeating until the
/// text stops changing. Text without credits is returned trimmed but
/// otherwise unchanged.
pub fn strip_credits(caption: &str, patterns: &CreditPatterns) -> String {
    let mut text = caption.trim().to_string();
    loop {
        let before = text.clone();
        for re in &patterns.patterns {
            let replaced = re.replace(&text, "").trim().to_string();
            if !replaced.is_empty() {
                text = replaced;
            }
        }
        if text == before {
            return text;
        }
    }
}
