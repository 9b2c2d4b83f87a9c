use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::records::{ImageRecord, TestTriplet};
use crate::util::sha256_hex;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split name {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitRecords {
    Images(Vec<ImageRecord>),
    Triplets(Vec<TestTriplet>),
}

impl SplitRecords {
    pub fn len(&self) -> usize {
        match self {
            SplitRecords::Images(r) => r.len(),
            SplitRecords::Triplets(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub records: SplitRecords,
    /// sha256 over the canonical JSON Lines serialization of `records`.
    pub manifest_checksum: String,
    /// Directory that relative image paths are resolved against.
    pub root: PathBuf,
    pub warnings: Vec<LoadWarning>,
}

impl DatasetSplit {
    /// Builds a split from in-memory records, validating the same invariants
    /// as [`load_split`] (image existence is not checked).
    pub fn from_images(
        name: SplitName,
        records: Vec<ImageRecord>,
        root: impl Into<PathBuf>,
    ) -> Result<Self> {
        if name == SplitName::Test {
            return Err(Error::Invalid("test split must contain triplets".into()));
        }
        let mut seen = HashSet::new();
        for r in &records {
            r.validate()?;
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::DuplicateImageId(r.image_id.clone()));
            }
        }
        let records = SplitRecords::Images(records);
        Ok(Self {
            name,
            manifest_checksum: checksum(&records)?,
            records,
            root: root.into(),
            warnings: Vec::new(),
        })
    }

    pub fn from_triplets(records: Vec<TestTriplet>, root: impl Into<PathBuf>) -> Result<Self> {
        for t in &records {
            t.validate()?;
            if t.label.is_none() {
                return Err(Error::Invalid(format!(
                    "test triplet for {:?} has no label",
                    t.image_id
                )));
            }
        }
        let records = SplitRecords::Triplets(records);
        Ok(Self {
            name: SplitName::Test,
            manifest_checksum: checksum(&records)?,
            records,
            root: root.into(),
            warnings: Vec::new(),
        })
    }

    pub fn images(&self) -> &[ImageRecord] {
        match &self.records {
            SplitRecords::Images(r) => r,
            SplitRecords::Triplets(_) => &[],
        }
    }

    pub fn triplets(&self) -> &[TestTriplet] {
        match &self.records {
            SplitRecords::Triplets(r) => r,
            SplitRecords::Images(_) => &[],
        }
    }

    pub fn resolve(&self, image_path: &str) -> PathBuf {
        self.root.join(image_path)
    }

    /// Train and validation splits must not share image ids.
    pub fn check_disjoint(&self, other: &DatasetSplit) -> Result<()> {
        let ids: HashSet<&str> = self.images().iter().map(|r| r.image_id.as_str()).collect();
        match other.images().iter().find(|r| ids.contains(r.image_id.as_str())) {
            Some(r) => Err(Error::Invalid(format!(
                "image_id {:?} appears in both {:?} and {:?}",
                r.image_id, self.name, other.name
            ))),
            None => Ok(()),
        }
    }

    /// Re-checks the test-split invariants over every triplet; evaluation
    /// refuses to run unless this passes.
    pub fn assert_evaluable(&self) -> Result<()> {
        if self.name != SplitName::Test {
            return Err(Error::Invalid(format!("{:?} is not a test split", self.name)));
        }
        for t in self.triplets() {
            t.validate()?;
            if t.label.is_none() {
                return Err(Error::Invalid(format!(
                    "test triplet for {:?} has no label",
                    t.image_id
                )));
            }
        }
        Ok(())
    }
}

fn canonical_lines(records: &SplitRecords) -> Result<Vec<String>> {
    Ok(match records {
        SplitRecords::Images(r) => r
            .iter()
            .map(serde_json::to_string)
            .collect::<Result<_, _>>()?,
        SplitRecords::Triplets(r) => r
            .iter()
            .map(serde_json::to_string)
            .collect::<Result<_, _>>()?,
    })
}

fn checksum(records: &SplitRecords) -> Result<String> {
    let mut bytes = Vec::new();
    for line in canonical_lines(records)? {
        bytes.extend_from_slice(line.as_bytes());
        bytes.push(b'\n');
    }
    Ok(sha256_hex(bytes))
}

/// Loads and validates a JSON Lines split.
///
/// Malformed lines, duplicate image ids and unlabeled test triplets are
/// errors naming the offending line. A missing image file only produces a
/// warning; the record is kept with its `missing_image` flag set.
pub fn load_split(path: impl AsRef<Path>, name: SplitName) -> Result<DatasetSplit> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut warnings = Vec::new();
    let mut images = Vec::new();
    let mut triplets = Vec::new();
    let mut seen = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        match name {
            SplitName::Train | SplitName::Val => {
                let mut rec: ImageRecord =
                    serde_json::from_str(raw).map_err(|e| parse_err(line, e.to_string()))?;
                rec.validate().map_err(|e| parse_err(line, e.to_string()))?;
                if !seen.insert(rec.image_id.clone()) {
                    return Err(parse_err(
                        line,
                        format!("duplicate image_id {:?}", rec.image_id),
                    ));
                }
                if !root.join(&rec.image_path).is_file() {
                    rec.missing_image = true;
                    warnings.push(LoadWarning {
                        line,
                        message: format!("missing image file {}", rec.image_path),
                    });
                }
                images.push(rec);
            }
            SplitName::Test => {
                let mut rec: TestTriplet =
                    serde_json::from_str(raw).map_err(|e| parse_err(line, e.to_string()))?;
                if rec.label.is_none() {
                    return Err(parse_err(line, "test record is missing \"label\"".into()));
                }
                rec.validate().map_err(|e| parse_err(line, e.to_string()))?;
                if !root.join(&rec.image_path).is_file() {
                    rec.missing_image = true;
                    warnings.push(LoadWarning {
                        line,
                        message: format!("missing image file {}", rec.image_path),
                    });
                }
                triplets.push(rec);
            }
        }
    }

    let records = match name {
        SplitName::Test => SplitRecords::Triplets(triplets),
        _ => SplitRecords::Images(images),
    };
    Ok(DatasetSplit {
        name,
        manifest_checksum: checksum(&records)?,
        records,
        root,
        warnings,
    })
}

/// Writes the split in canonical form; reloading the file yields the same
/// manifest checksum.
pub fn write_split(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for line in canonical_lines(&split.records)? {
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
