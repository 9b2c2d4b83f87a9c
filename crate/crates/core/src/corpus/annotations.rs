use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::records::TestTriplet;
use crate::util::caption_sha256;
use crate::{Error, Result};

/// Identifies a triplet by image and the sha256 of both caption texts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletRef {
    pub image_id: String,
    pub c1_sha256: String,
    pub c2_sha256: String,
}

impl TripletRef {
    pub fn of(triplet: &TestTriplet) -> Self {
        Self::from_texts(&triplet.image_id, &triplet.caption1.text, &triplet.caption2.text)
    }

    pub fn from_texts(image_id: &str, c1: &str, c2: &str) -> Self {
        Self {
            image_id: image_id.to_string(),
            c1_sha256: caption_sha256(c1),
            c2_sha256: caption_sha256(c2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanLabel {
    Ooc,
    NotOoc,
    Skip,
}

impl std::str::FromStr for HumanLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ooc" => Ok(HumanLabel::Ooc),
            "not_ooc" => Ok(HumanLabel::NotOoc),
            "skip" => Ok(HumanLabel::Skip),
            other => Err(Error::Invalid(format!("unknown label {other:?}"))),
        }
    }
}

impl HumanLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            HumanLabel::Ooc => "ooc",
            HumanLabel::NotOoc => "not_ooc",
            HumanLabel::Skip => "skip",
        }
    }
}

/// A human judgement on one triplet. Serialized in the annotation export
/// layout (`image_id`, `c1_sha256`, `c2_sha256`, `human_label`,
/// `annotator_id`, `timestamp_iso8601`, `note`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    #[serde(flatten)]
    pub triplet_ref: TripletRef,
    pub human_label: HumanLabel,
    pub annotator_id: String,
    #[serde(rename = "timestamp_iso8601")]
    pub timestamp: DateTime<Utc>,
    pub note: Option<String>,
}

pub trait AnnotationStore {
    /// All stored annotations, in any order.
    fn annotations(&self) -> Result<Vec<AnnotationRecord>>;

    /// Persists a record. Implementations reject a second non-skip label for
    /// the same (triplet, annotator) with [`Error::Conflict`].
    fn insert(&mut self, record: AnnotationRecord) -> Result<AnnotationRecord>;
}

/// In-process store, used by tests and batch tooling.
#[derive(Debug, Default, Clone)]
pub struct MemoryAnnotationStore {
    records: Vec<AnnotationRecord>,
}

impl MemoryAnnotationStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl AnnotationStore for MemoryAnnotationStore {
    fn annotations(&self) -> Result<Vec<AnnotationRecord>> {
        Ok(self.records.clone())
    }

    fn insert(&mut self, mut record: AnnotationRecord) -> Result<AnnotationRecord> {
        if record.human_label != HumanLabel::Skip
            && self.records.iter().any(|r| {
                r.triplet_ref == record.triplet_ref
                    && r.annotator_id == record.annotator_id
                    && r.human_label != HumanLabel::Skip
            })
        {
            return Err(Error::Conflict(format!(
                "{} already labeled this triplet",
                record.annotator_id
            )));
        }
        // Keep timestamps monotone per annotator.
        if let Some(last) = self
            .records
            .iter()
            .filter(|r| r.annotator_id == record.annotator_id)
            .map(|r| r.timestamp)
            .max()
        {
            if record.timestamp <= last {
                record.timestamp = last + chrono::Duration::microseconds(1);
            }
        }
        self.records.push(record.clone());
        Ok(record)
    }
}

/// Annotation export lines, ordered by timestamp then annotator.
pub fn annotations_jsonl(mut records: Vec<AnnotationRecord>) -> Result<String> {
    records.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.annotator_id.cmp(&b.annotator_id))
    });
    let mut out = String::new();
    for r in &records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes every annotation as one JSON line, ordered by timestamp.
pub fn export_annotations(store: &dyn AnnotationStore, path: impl AsRef<Path>) -> Result<usize> {
    let records = store.annotations()?;
    let n = records.len();
    fs::write(path, annotations_jsonl(records)?)?;
    Ok(n)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
