//! Caption cleanup: credit stripping and named-entity hypernymization.
//!
//! Every caption fed to an encoder goes through [`preprocess`], which strips
//! trailing/leading source credits and then replaces each recognized entity
//! with its class token (`person`, `location`, ...).

mod cache;
mod credits;
mod gazetteer;

pub use cache::CleanCaptionCache;
pub use credits::{strip_credits, CreditPatterns};
pub use gazetteer::GazetteerRecognizer;

use serde::{Deserialize, Serialize};

use crate::{AdapterError, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityClass {
    Person,
    Group,
    Facility,
    Geopolitical,
    Location,
    Event,
    Organization,
    Artwork,
    Time,
    Date,
}

impl EntityClass {
    /// Maps a recognizer label (PERSON, NORP, GPE, ...) onto an entity class.
    /// Labels outside the table (MONEY, CARDINAL, ...) are left untouched.
    pub fn from_ner_label(label: &str) -> Option<Self> {
        Some(match label {
            "PERSON" => EntityClass::Person,
            "NORP" => EntityClass::Group,
            "FAC" => EntityClass::Facility,
            "GPE" => EntityClass::Geopolitical,
            "LOC" => EntityClass::Location,
            "EVENT" => EntityClass::Event,
            "ORG" => EntityClass::Organization,
            "WORK_OF_ART" => EntityClass::Artwork,
            "TIME" => EntityClass::Time,
            "DATE" => EntityClass::Date,
            _ => return None,
        })
    }

    pub fn hypernym(self) -> &'static str {
        match self {
            EntityClass::Person => "person",
            EntityClass::Group => "group",
            EntityClass::Facility => "facility",
            EntityClass::Geopolitical | EntityClass::Location => "location",
            EntityClass::Event => "event",
            EntityClass::Organization => "organization",
            EntityClass::Artwork => "artwork",
            EntityClass::Time => "time",
            EntityClass::Date => "date",
        }
    }
}

/// An entity mention, in character (not byte) offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub entity_class: EntityClass,
    pub surface: String,
}

/// Raw recognizer output before class mapping and overlap resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEntity {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// Named-entity recognizer adapter. Offsets are character offsets.
pub trait EntityRecognizer: Send + Sync {
    fn recognize(&self, text: &str) -> std::result::Result<Vec<RawEntity>, AdapterError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanCaption {
    pub text: String,
    pub original: String,
    pub replacements: Vec<EntitySpan>,
}

/// Runs the recognizer and returns sorted, non-overlapping spans of mapped
/// classes. Overlaps keep the longer span, then the earlier one.
pub fn detect_entities(caption: &str, ner: &dyn EntityRecognizer) -> Result<Vec<EntitySpan>> {
    if caption.trim().is_empty() {
        return Err(Error::Empty("caption"));
    }
    let chars: Vec<char> = caption.chars().collect();
    let mut candidates: Vec<(RawEntity, EntityClass)> = ner
        .recognize(caption)?
        .into_iter()
        .filter(|e| e.start < e.end && e.end <= chars.len())
        .filter_map(|e| EntityClass::from_ner_label(&e.label).map(|c| (e, c)))
        .collect();
    candidates.sort_by(|(a, _), (b, _)| {
        (b.end - b.start)
            .cmp(&(a.end - a.start))
            .then(a.start.cmp(&b.start))
    });

    let mut kept: Vec<EntitySpan> = Vec::new();
    for (e, class) in candidates {
        if kept.iter().all(|k| e.end <= k.start || e.start >= k.end) {
            kept.push(EntitySpan {
                start: e.start,
                end: e.end,
                entity_class: class,
                surface: chars[e.start..e.end].iter().collect(),
            });
        }
    }
    kept.sort_by_key(|s| s.start);
    Ok(kept)
}

fn at_sentence_start(out: &str) -> bool {
    match out.trim_end().chars().last() {
        None => true,
        Some(c) => matches!(c, '.' | '!' | '?'),
    }
}

fn capitalize(token: &str) -> String {
    let mut chars = token.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Replaces every span with its hypernym token and collapses whitespace.
pub fn hypernymize(caption: &str, spans: &[EntitySpan]) -> Result<CleanCaption> {
    let chars: Vec<char> = caption.chars().collect();
    let mut sorted = spans.to_vec();
    sorted.sort_by_key(|s| s.start);
    let mut prev_end = 0;
    for s in &sorted {
        if s.start >= s.end || s.end > chars.len() || s.start < prev_end {
            return Err(Error::SpanOutOfRange {
                start: s.start,
                end: s.end,
                len: chars.len(),
            });
        }
        prev_end = s.end;
    }

    let mut out = String::with_capacity(caption.len());
    let mut cursor = 0;
    for s in &sorted {
        out.extend(&chars[cursor..s.start]);
        let token = s.entity_class.hypernym();
        if at_sentence_start(&out) {
            out.push_str(&capitalize(token));
        } else {
            out.push_str(token);
        }
        cursor = s.end;
    }
    out.extend(&chars[cursor..]);

    Ok(CleanCaption {
        text: normalize_whitespace(&out),
        original: caption.to_string(),
        replacements: sorted,
    })
}

/// Canonical text for every encoder: credits stripped, entities replaced.
pub fn preprocess(
    caption: &str,
    ner: &dyn EntityRecognizer,
    credits: &CreditPatterns,
) -> Result<CleanCaption> {
    let stripped = strip_credits(caption, credits);
    let spans = detect_entities(&stripped, ner)?;
    let mut clean = hypernymize(&stripped, &spans)?;
    clean.original = caption.to_string();
    Ok(clean)
}
