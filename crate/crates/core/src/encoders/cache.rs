use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::backbone::RegionFeatures;
use super::boxes::BoundingBox;
use super::sentence::RawSentenceVector;
use crate::util::sha256_hex;
use crate::{Error, Result};

const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub key: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Digest of the stored bytes.
    pub sha256: String,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// On-disk array cache: one little-endian f32 file per key plus a JSON index.
///
/// Readers run concurrently; writes are serialized. New entries become
/// visible to other processes after [`FeatureCache::flush`].
#[derive(Debug)]
pub struct FeatureCache {
    dir: PathBuf,
    index: RwLock<BTreeMap<String, IndexEntry>>,
    write_lock: Mutex<()>,
}

fn file_for(key: &str) -> String {
    format!("{}.bin", &sha256_hex(key)[..32])
}

impl FeatureCache {
    /// Opens `dir`, creating it (and an empty index) when absent.
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        if dir.join(INDEX_FILE).exists() {
            return Self::open(dir);
        }
        Ok(Self {
            dir,
            index: RwLock::new(BTreeMap::new()),
            write_lock: Mutex::new(()),
        })
    }

    /// Opens an existing cache; a missing index is [`Error::MissingFeatures`].
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let path = dir.join(INDEX_FILE);
        let text = fs::read(&path).map_err(|_| Error::MissingFeatures(path.display().to_string()))?;
        let entries: Vec<IndexEntry> = serde_json::from_slice(&text)?;
        Ok(Self {
            dir,
            index: RwLock::new(entries.into_iter().map(|e| (e.key.clone(), e)).collect()),
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cache index poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.read().expect("cache index poisoned").contains_key(key)
    }

    pub fn entries(&self) -> Vec<IndexEntry> {
        self.index.read().expect("cache index poisoned").values().cloned().collect()
    }

    pub fn put(&self, key: &str, shape: Vec<usize>, data: &[f32], meta: serde_json::Value) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Dimension {
                expected: shape.iter().product(),
                actual: data.len(),
            });
        }
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let entry = IndexEntry {
            key: key.to_string(),
            shape,
            dtype: "f32".into(),
            sha256: sha256_hex(&bytes),
            meta,
        };
        let _guard = self.write_lock.lock().expect("cache writer poisoned");
        let name = file_for(key);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, self.dir.join(&name))?;
        self.index
            .write()
            .expect("cache index poisoned")
            .insert(entry.key.clone(), entry);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<(IndexEntry, Vec<f32>)> {
        let entry = self
            .index
            .read()
            .expect("cache index poisoned")
            .get(key)
            .cloned()
            .ok_or_else(|| Error::MissingFeatures(key.to_string()))?;
        let bytes = fs::read(self.dir.join(file_for(key)))
            .map_err(|_| Error::MissingFeatures(key.to_string()))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::MissingFeatures(format!("{key} (checksum mismatch)")));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((entry, data))
    }

    /// Persists the index atomically.
    pub fn flush(&self) -> Result<()> {
        let _guard = self.write_lock.lock().expect("cache writer poisoned");
        let entries = self.entries();
        let tmp = self.dir.join(".index.json.tmp");
        fs::write(&tmp, serde_json::to_vec(&entries)?)?;
        fs::rename(&tmp, self.dir.join(INDEX_FILE))?;
        Ok(())
    }

    /// Key for region features: `source` names how the boxes were produced.
    pub fn region_key(backbone_tag: &str, source: &str, image_id: &str) -> String {
        format!("regions/{backbone_tag}/{source}/{image_id}")
    }

    pub fn sentence_key(embedder_tag: &str, caption_sha256: &str) -> String {
        format!("sentence/{embedder_tag}/{caption_sha256}")
    }

    pub fn put_regions(&self, image_id: &str, source: &str, regions: &RegionFeatures) -> Result<()> {
        let data: Vec<f32> = regions.features.iter().map(|&v| v as f32).collect();
        let meta = serde_json::json!({ "boxes": regions.boxes, "image_id": image_id });
        self.put(
            &Self::region_key(&regions.backbone_tag, source, image_id),
            vec![regions.features.nrows(), regions.features.ncols()],
            &data,
            meta,
        )
    }

    pub fn get_regions(&self, backbone_tag: &str, source: &str, image_id: &str) -> Result<RegionFeatures> {
        let key = Self::region_key(backbone_tag, source, image_id);
        let (entry, data) = self.get(&key)?;
        let [rows, cols] = entry.shape[..] else {
            return Err(Error::MissingFeatures(format!("{key} (bad shape)")));
        };
        let boxes: Vec<BoundingBox> = serde_json::from_value(entry.meta["boxes"].clone())?;
        if boxes.len() != rows {
            return Err(Error::MissingFeatures(format!("{key} (box count)")));
        }
        let features = Array2::from_shape_vec((rows, cols), data.into_iter().map(f64::from).collect())
            .map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(RegionFeatures {
            boxes,
            features,
            backbone_tag: backbone_tag.to_string(),
        })
    }

    pub fn put_sentence(&self, caption_sha256: &str, v: &RawSentenceVector) -> Result<()> {
        self.put(
            &Self::sentence_key(&v.embedder_tag, caption_sha256),
            vec![v.values.len()],
            &v.values,
            serde_json::Value::Null,
        )
    }

    pub fn get_sentence(&self, embedder_tag: &str, caption_sha256: &str) -> Result<RawSentenceVector> {
        let (_, data) = self.get(&Self::sentence_key(embedder_tag, caption_sha256))?;
        RawSentenceVector::new(data, embedder_tag)
    }
}
