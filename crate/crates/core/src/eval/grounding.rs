use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CaptionRecord, DatasetSplit, ImageRecord, SplitName};
use crate::encoders::{embed_regions, pool_regions, BoundingBox};
use crate::matcher::score;
use crate::ooc::iou;
use crate::pipeline::{load_image, BoxSource, ImageRef, OocDetector};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingAnnotation {
    pub id: u64,
    pub image_id: u64,
    /// `[x, y, width, height]`.
    pub bbox: [f64; 4],
    #[serde(default)]
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub sent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingRef {
    pub ref_id: u64,
    pub image_id: u64,
    pub ann_id: u64,
    pub sentences: Vec<Sentence>,
}

/// Referring-expression annotation file: images, boxes and expressions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundingCorpus {
    pub images: Vec<GroundingImage>,
    pub annotations: Vec<GroundingAnnotation>,
    pub refs: Vec<GroundingRef>,
}

/// One referring expression with its target box.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingItem {
    pub image_id: String,
    pub image_path: String,
    pub expression: String,
    /// `None` when the referenced annotation is missing.
    pub gt_box: Option<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingSplit {
    pub root: PathBuf,
    pub items: Vec<GroundingItem>,
    /// Every annotated box per image, keyed by image id.
    pub boxes: BTreeMap<String, Vec<BoundingBox>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub mean_iou: f64,
    pub n: usize,
    /// Expressions without a ground-truth box.
    pub skipped: usize,
}

impl GroundingSplit {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let corpus: GroundingCorpus = serde_json::from_slice(&fs::read(path)?)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Ok(Self::from_corpus(&corpus, root))
    }

    pub fn from_corpus(corpus: &GroundingCorpus, root: impl Into<PathBuf>) -> Self {
        let images: BTreeMap<u64, &GroundingImage> = corpus.images.iter().map(|i| (i.id, i)).collect();
        let anns: BTreeMap<u64, &GroundingAnnotation> = corpus.annotations.iter().map(|a| (a.id, a)).collect();
        let to_box = |a: &GroundingAnnotation| {
            let b = BoundingBox::from_xywh(a.bbox);
            match &a.category {
                Some(c) => b.with_label(c.clone()),
                None => b,
            }
        };
        let mut boxes: BTreeMap<String, Vec<BoundingBox>> = BTreeMap::new();
        for a in &corpus.annotations {
            boxes.entry(a.image_id.to_string()).or_default().push(to_box(a));
        }
        let mut items = Vec::new();
        for r in &corpus.refs {
            let Some(img) = images.get(&r.image_id) else { continue };
            let gt_box = anns
                .get(&r.ann_id)
                .filter(|a| a.image_id == r.image_id)
                .map(|a| to_box(a));
            for s in &r.sentences {
                items.push(GroundingItem {
                    image_id: img.id.to_string(),
                    image_path: img.file_name.clone(),
                    expression: s.sent.clone(),
                    gt_box: gt_box.clone(),
                });
            }
        }
        Self {
            root: root.into(),
            items,
            boxes,
        }
    }

    /// Distinct image ids in first-appearance order.
    pub fn image_ids(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.items
            .iter()
            .filter(|i| seen.insert(i.image_id.clone()))
            .map(|i| i.image_id.clone())
            .collect()
    }

    /// Splits by image: the first `n_images` distinct images and the rest.
    pub fn partition(&self, n_images: usize) -> (Self, Self) {
        let first: std::collections::HashSet<String> = self.image_ids().into_iter().take(n_images).collect();
        let (a, b): (Vec<_>, Vec<_>) = self.items.iter().cloned().partition(|i| first.contains(&i.image_id));
        let part = |items: Vec<GroundingItem>| Self {
            root: self.root.clone(),
            items,
            boxes: self.boxes.clone(),
        };
        (part(a), part(b))
    }

    /// Captioned-image view: each image's expressions become its captions.
    pub fn to_caption_split(&self, name: SplitName) -> Result<DatasetSplit> {
        let mut records: Vec<ImageRecord> = Vec::new();
        for id in self.image_ids() {
            let items: Vec<&GroundingItem> = self.items.iter().filter(|i| i.image_id == id).collect();
            let mut captions: Vec<CaptionRecord> = Vec::new();
            for i in &items {
                if captions.iter().all(|c| c.text != i.expression) {
                    captions.push(CaptionRecord::new(i.expression.clone(), "refexp"));
                }
            }
            records.push(ImageRecord {
                image_id: id,
                image_path: items[0].image_path.clone(),
                captions,
                missing_image: false,
            });
        }
        DatasetSplit::from_images(name, records, &self.root)
    }

    /// Image references carrying their annotated boxes.
    pub fn image_refs(&self) -> Vec<ImageRef> {
        self.image_ids()
            .into_iter()
            .map(|id| {
                let item = self.items.iter().find(|i| i.image_id == id).expect("listed id");
                ImageRef {
                    boxes: self.boxes.get(&id).cloned(),
                    path: self.root.join(&item.image_path),
                    image_id: id,
                }
            })
            .collect()
    }
}

/// Mean IoU between the box each expression grounds to and its target box.
pub fn object_iou(detector: &OocDetector, split: &GroundingSplit, source: BoxSource) -> Result<IouReport> {
    let skipped = split.items.iter().filter(|i| i.gt_box.is_none()).count();
    let per_image = split
        .image_refs()
        .par_iter()
        .map(|img| -> Result<Vec<f64>> {
            let items: Vec<&GroundingItem> = split
                .items
                .iter()
                .filter(|i| i.image_id == img.image_id && i.gt_box.is_some())
                .collect();
            if items.is_empty() {
                return Ok(Vec::new());
            }
            let image = load_image(&img.path).map_err(|e| e.at("load_image"))?;
            let boxes = match source {
                BoxSource::Predicted => detector.detect_boxes(&image)?,
                BoxSource::FullImage => vec![BoundingBox::full_image(image.width(), image.height())],
                BoxSource::GroundTruth => img.boxes.clone().unwrap_or_default(),
            };
            let regions = pool_regions(&image, &boxes, detector.adapters.backbone.as_ref())
                .map_err(|e| e.at("encode_objects"))?;
            let objects = embed_regions(&img.image_id, &regions, &detector.heads)?;
            items
                .iter()
                .map(|item| {
                    let (_, emb) = detector.embed_caption(&item.expression)?;
                    let s = score(&objects, &emb)?;
                    Ok(iou(&objects.boxes[s.best_box_index], item.gt_box.as_ref().expect("filtered")))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<f64> = per_image.into_iter().flatten().collect();
    if all.is_empty() {
        return Err(Error::Empty("grounding expressions with target boxes"));
    }
    Ok(IouReport {
        mean_iou: all.iter().sum::<f64>() / all.len() as f64,
        n: all.len(),
        skipped,
    })
}
