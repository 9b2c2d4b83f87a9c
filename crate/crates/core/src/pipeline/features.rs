use std::collections::HashMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Adapters;
use crate::corpus::{make_train_pairs, DatasetSplit};
use crate::encoders::{
    detect_objects, pool_regions, BoundingBox, DetectionConfig, FeatureCache, RawSentenceVector,
    RegionFeatures,
};
use crate::matcher::{CachedFeatures, EncodedPair};
use crate::util::caption_sha256;
use crate::{Error, Result};

/// Where object boxes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxSource {
    /// Detector output.
    Predicted,
    /// A single box covering the whole frame.
    FullImage,
    /// Boxes supplied with the image.
    GroundTruth,
}

impl BoxSource {
    pub fn tag(self) -> &'static str {
        match self {
            BoxSource::Predicted => "pred",
            BoxSource::FullImage => "full",
            BoxSource::GroundTruth => "gt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRef {
    pub image_id: String,
    pub path: PathBuf,
    pub boxes: Option<Vec<BoundingBox>>,
}

impl ImageRef {
    pub fn new(image_id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self {
            image_id: image_id.into(),
            path: path.into(),
            boxes: None,
        }
    }
}

#[derive(Clone, Copy)]
pub enum CacheMode<'a> {
    Off,
    /// Only cached features may be used; a miss is an error.
    ReadOnly(&'a FeatureCache),
    /// Misses are computed and stored.
    ReadWrite(&'a FeatureCache),
}

impl<'a> CacheMode<'a> {
    fn cache(self) -> Option<&'a FeatureCache> {
        match self {
            CacheMode::Off => None,
            CacheMode::ReadOnly(c) | CacheMode::ReadWrite(c) => Some(c),
        }
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    Ok(image::open(path.as_ref())?.to_rgb8())
}

fn compute_regions(
    img: &ImageRef,
    adapters: &Adapters,
    detection: &DetectionConfig,
    source: BoxSource,
) -> Result<RegionFeatures> {
    let image = load_image(&img.path).map_err(|e| e.at("load_image"))?;
    let boxes = match source {
        BoxSource::Predicted => detect_objects(&image, adapters.detector.as_ref(), detection)
            .map_err(|e| e.at("detect"))?,
        BoxSource::FullImage => vec![BoundingBox::full_image(image.width(), image.height())],
        BoxSource::GroundTruth => img
            .boxes
            .clone()
            .filter(|b| !b.is_empty())
            .ok_or_else(|| Error::Invalid(format!("{}: no ground-truth boxes", img.image_id)))?,
    };
    pool_regions(&image, &boxes, adapters.backbone.as_ref()).map_err(|e| e.at("encode_objects"))
}

/// Pooled region features for every image, in input order. Runs in
/// parallel; cached entries are reused according to `cache`.
pub fn extract_regions(
    images: &[ImageRef],
    adapters: &Adapters,
    detection: &DetectionConfig,
    source: BoxSource,
    cache: CacheMode<'_>,
) -> Result<Vec<RegionFeatures>> {
    let tag = adapters.backbone.tag();
    images
        .par_iter()
        .map(|img| {
            if let Some(c) = cache.cache() {
                if c.contains(&FeatureCache::region_key(tag, source.tag(), &img.image_id)) {
                    return c.get_regions(tag, source.tag(), &img.image_id);
                }
            }
            if let CacheMode::ReadOnly(_) = cache {
                return Err(Error::MissingFeatures(format!("regions of {}", img.image_id)));
            }
            let regions = compute_regions(img, adapters, detection, source)?;
            if let CacheMode::ReadWrite(c) = cache {
                c.put_regions(&img.image_id, source.tag(), &regions)?;
            }
            Ok(regions)
        })
        .collect()
}

/// Text handed to the sentence embedder: the full textprep form, or only
/// credit stripping when entity replacement is disabled.
pub fn sentence_inputs(captions: &[&str], adapters: &Adapters, ner: bool) -> Result<Vec<String>> {
    captions
        .par_iter()
        .map(|c| adapters.sentence_input(c, ner))
        .collect()
}

/// Raw sentence vectors (as f64) for each text, in input order.
pub fn sentence_vectors(texts: &[String], adapters: &Adapters, cache: CacheMode<'_>) -> Result<Vec<Array1<f64>>> {
    let tag = adapters.embedder.tag();
    texts
        .par_iter()
        .map(|t| {
            let sha = caption_sha256(t);
            let raw = match cache.cache() {
                Some(c) if c.contains(&FeatureCache::sentence_key(tag, &sha)) => c.get_sentence(tag, &sha)?,
                _ => {
                    if let CacheMode::ReadOnly(_) = cache {
                        return Err(Error::MissingFeatures(format!("sentence {sha}")));
                    }
                    if t.trim().is_empty() {
                        return Err(Error::Empty("sentence"));
                    }
                    let v = RawSentenceVector::new(adapters.embedder.embed(t)?, tag)
                        .map_err(|e| e.at("embed_sentence"))?;
                    if let CacheMode::ReadWrite(c) = cache {
                        c.put_sentence(&sha, &v)?;
                    }
                    v
                }
            };
            Ok(raw.values.iter().map(|&v| v as f64).collect())
        })
        .collect()
}

/// Region features for every image of `split` plus one encoded
/// (matching, random) pair per caption, negatives fixed by `seed`.
pub fn build_training_data(
    split: &DatasetSplit,
    adapters: &Adapters,
    detection: &DetectionConfig,
    source: BoxSource,
    ner: bool,
    seed: u64,
    cache: CacheMode<'_>,
) -> Result<(CachedFeatures, Vec<EncodedPair>)> {
    let refs: Vec<ImageRef> = split
        .images()
        .iter()
        .map(|r| ImageRef::new(&r.image_id, split.resolve(&r.image_path)))
        .collect();
    let regions = extract_regions(&refs, adapters, detection, source, cache)?;
    let index: HashMap<&str, usize> = split
        .images()
        .iter()
        .enumerate()
        .map(|(i, r)| (r.image_id.as_str(), i))
        .collect();
    let pairs = make_train_pairs(split, seed)?.collect::<Result<Vec<_>>>()?;

    let mut texts: Vec<&str> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for p in &pairs {
        for t in [p.matching.text.as_str(), p.random.text.as_str()] {
            slot.entry(t).or_insert_with(|| {
                texts.push(t);
                texts.len() - 1
            });
        }
    }
    let inputs = sentence_inputs(&texts, adapters, ner)?;
    let vectors = sentence_vectors(&inputs, adapters, cache)?;
    let encoded = pairs
        .iter()
        .map(|p| EncodedPair {
            image: index[p.image.image_id.as_str()],
            matching: vectors[slot[p.matching.text.as_str()]].clone(),
            random: vectors[slot[p.random.text.as_str()]].clone(),
        })
        .collect();
    Ok((CachedFeatures::from_regions(&regions), encoded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_split, SplitName};
    use crate::synth::{write_captioned_corpus, SynthConfig};

    #[test]
    fn cached_and_live_features_agree() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_train: 5,
            n_val: 2,
            n_heldout: 0,
            ..SynthConfig::default()
        };
        let c = write_captioned_corpus(dir.path(), &cfg).unwrap();
        let split = load_split(&c.train, SplitName::Train).unwrap();
        let adapters = Adapters::builtin();
        let det = DetectionConfig::default();
        let cache = FeatureCache::create(dir.path().join("cache")).unwrap();
        let live = build_training_data(&split, &adapters, &det, BoxSource::Predicted, true, 1, CacheMode::Off).unwrap();
        let miss = build_training_data(&split, &adapters, &det, BoxSource::Predicted, true, 1, CacheMode::ReadOnly(&cache));
        assert!(matches!(miss, Err(Error::MissingFeatures(_))));
        let written = build_training_data(&split, &adapters, &det, BoxSource::Predicted, true, 1, CacheMode::ReadWrite(&cache)).unwrap();
        cache.flush().unwrap();
        let reopened = FeatureCache::open(dir.path().join("cache")).unwrap();
        let cached = build_training_data(&split, &adapters, &det, BoxSource::Predicted, true, 1, CacheMode::ReadOnly(&reopened)).unwrap();
        assert_eq!(live.0 .0, cached.0 .0);
        assert_eq!(live.1, cached.1);
        assert_eq!(written.1, cached.1);
        assert_eq!(live.1.len(), 10);
        let full = extract_regions(
            &[ImageRef::new("syn-000000", dir.path().join("images/syn-000000.png"))],
            &adapters,
            &det,
            BoxSource::FullImage,
            CacheMode::Off,
        )
        .unwrap();
        assert_eq!(full[0].boxes.len(), 1);
        assert_eq!(full[0].boxes[0].confidence, 0.0);
    }
}
