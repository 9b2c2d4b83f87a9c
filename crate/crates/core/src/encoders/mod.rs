//! Box detection, region pooling, sentence embedding and the trainable
//! projection heads mapping both sides into the shared embedding space.

mod backbone;
mod boxes;
mod cache;
mod checkpoint;
pub(crate) mod color;
mod detector;
mod heads;
mod sentence;

use image::RgbImage;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

pub use backbone::{
    pool_regions, roi_align_pool, ColorShapeBackbone, FeatureBackbone, FeatureMap, RegionFeatures,
    COLOR_SHAPE_TAG, ROI_OUTPUT, ROI_SAMPLING,
};
pub(crate) use backbone::pool_from_map;
pub use boxes::BoundingBox;
pub use cache::{FeatureCache, IndexEntry};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointConfig, ModelTags};
pub use detector::{
    classify_blob, detect_objects, BlobDetector, DetectionConfig, ObjectDetector,
    BLOB_DETECTOR_TAG, MIN_IMAGE_SIDE,
};
pub use heads::{HeadDims, ObjectActivations, ObjectHead, ProjectionHeads, TextHead};
pub use sentence::{
    content_tokens, embed_sentence, HashedBowEmbedder, RawSentenceVector, SentenceCache,
    SentenceEmbedder, HASHED_BOW_TAG,
};

use crate::util::caption_sha256;
use crate::{Error, Result};

/// Projected embeddings of the detected objects of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectEmbeddingSet {
    pub image_id: String,
    pub boxes: Vec<BoundingBox>,
    /// One row per box.
    pub embeddings: Array2<f64>,
    pub backbone_tag: String,
}

impl ObjectEmbeddingSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Projected caption embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionEmbedding {
    pub values: Array1<f64>,
    pub caption_sha256: String,
}

/// Projects already pooled region features through the object head.
pub fn embed_regions(
    image_id: &str,
    regions: &RegionFeatures,
    heads: &ProjectionHeads,
) -> Result<ObjectEmbeddingSet> {
    if regions.is_empty() {
        return Err(Error::Empty("boxes"));
    }
    let embeddings = heads.embed_regions(regions.features.view())?;
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("object embedding"));
    }
    Ok(ObjectEmbeddingSet {
        image_id: image_id.to_string(),
        boxes: regions.boxes.clone(),
        embeddings,
        backbone_tag: regions.backbone_tag.clone(),
    })
}

/// Pools each box from the frozen backbone and projects it (inference path,
/// no augmentation).
pub fn encode_objects(
    image_id: &str,
    image: &RgbImage,
    boxes: &[BoundingBox],
    heads: &ProjectionHeads,
    backbone: &dyn FeatureBackbone,
) -> Result<ObjectEmbeddingSet> {
    let regions = pool_regions(image, boxes, backbone)?;
    embed_regions(image_id, &regions, heads)
}

/// ReLU then the text head's affine map. `text` is only used for the digest.
pub fn encode_caption(
    text: &str,
    raw: &RawSentenceVector,
    heads: &ProjectionHeads,
) -> Result<CaptionEmbedding> {
    let x: Array1<f64> = raw.values.iter().map(|&v| v as f64).collect();
    let values = heads.embed_text(x.view())?;
    Ok(CaptionEmbedding {
        values,
        caption_sha256: caption_sha256(text),
    })
}
