use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::records::{CaptionRecord, ImageRecord, RetrievedVia};
use super::split::{write_split, DatasetSplit, SplitName};
use crate::util::sha256_hex;
use crate::{Error, Result};

/// One line of an external ingest file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalRecord {
    /// Local path (absolute, relative to the ingest file, or `file://` URL).
    pub image: String,
    pub caption: String,
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub published_year: Option<i32>,
}

/// Destination corpus directory. Images are copied into `root/images/` and
/// records are merged into `root/<records_file>`.
#[derive(Debug, Clone)]
pub struct ImportTarget {
    pub root: PathBuf,
    pub records_file: String,
    /// Test-destined stores drop (image content, caption text) duplicates;
    /// training stores keep them.
    pub test_destined: bool,
}

impl ImportTarget {
    pub fn new(root: impl Into<PathBuf>, records_file: impl Into<String>, test_destined: bool) -> Self {
        Self {
            root: root.into(),
            records_file: records_file.into(),
            test_destined,
        }
    }

    fn records_path(&self) -> PathBuf {
        self.root.join(&self.records_file)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ImportReport {
    pub appended: usize,
    pub duplicates: usize,
    pub errors: Vec<(usize, String)>,
}

fn resolve_source(image: &str, base: &Path) -> Result<PathBuf> {
    if let Some(rest) = image.strip_prefix("file://") {
        return Ok(PathBuf::from(rest));
    }
    if image.contains("://") {
        return Err(Error::UnsupportedSource(image.to_string()));
    }
    let p = Path::new(image);
    Ok(if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    })
}

fn read_existing(path: &Path) -> Result<Vec<ImageRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
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

/// Normalizes an external ingest file into the corpus schema and returns how
/// many captions were appended. Per-line failures (unreachable image,
/// undecodable bytes, bad JSON) are collected in the report.
pub fn import_external(
    path: impl AsRef<Path>,
    source_tag: &str,
    target: &ImportTarget,
) -> Result<ImportReport> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(path)?;
    fs::create_dir_all(target.root.join("images"))?;

    let mut records = read_existing(&target.records_path())?;
    let mut by_id: HashMap<String, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.image_id.clone(), i))
        .collect();
    let mut seen: HashSet<(String, String)> = records
        .iter()
        .flat_map(|r| r.captions.iter().map(|c| (r.image_id.clone(), c.text.clone())))
        .collect();

    let mut report = ImportReport::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let ext: ExternalRecord = match serde_json::from_str(raw) {
            Ok(r) => r,
            Err(e) => {
                report.errors.push((line, e.to_string()));
                continue;
            }
        };
        let caption = ext.caption.trim().to_string();
        if caption.is_empty() {
            report.errors.push((line, "empty caption".into()));
            continue;
        }
        let src = match resolve_source(&ext.image, base) {
            Ok(p) => p,
            Err(e) => {
                report.errors.push((line, e.to_string()));
                continue;
            }
        };
        let bytes = match fs::read(&src) {
            Ok(b) => b,
            Err(e) => {
                report
                    .errors
                    .push((line, format!("unreachable image {}: {e}", src.display())));
                continue;
            }
        };
        let format = match image::guess_format(&bytes) {
            Ok(f) => f,
            Err(e) => {
                report.errors.push((line, format!("unsupported image encoding: {e}")));
                continue;
            }
        };
        if let Err(e) = image::load_from_memory_with_format(&bytes, format) {
            report.errors.push((line, format!("unsupported image encoding: {e}")));
            continue;
        }
        let hash = sha256_hex(&bytes);
        let image_id = format!("img-{}", &hash[..16]);
        let key = (image_id.clone(), caption.clone());
        if target.test_destined && seen.contains(&key) {
            report.duplicates += 1;
            continue;
        }
        let ext_name = format.extensions_str().first().copied().unwrap_or("bin");
        let rel = format!("images/{}.{}", &hash[..32], ext_name);
        let dest = target.root.join(&rel);
        if !dest.exists() {
            fs::write(&dest, &bytes)?;
        }
        let caption = CaptionRecord {
            text: caption,
            source: ext.source.unwrap_or_else(|| source_tag.to_string()),
            retrieved_via: RetrievedVia::Manual,
            published_year: ext.published_year,
        };
        match by_id.get(&image_id) {
            Some(&i) => records[i].captions.push(caption),
            None => {
                by_id.insert(image_id.clone(), records.len());
                records.push(ImageRecord {
                    image_id,
                    image_path: rel,
                    captions: vec![caption],
                    missing_image: false,
                });
            }
        }
        seen.insert(key);
        report.appended += 1;
    }

    let name = if target.test_destined {
        SplitName::Val
    } else {
        SplitName::Train
    };
    let split = DatasetSplit::from_images(name, records, &target.root)?;
    write_split(&split, target.records_path())?;
    Ok(report)
}
