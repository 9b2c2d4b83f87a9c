//! Adapters plus trained heads wired into one inference object, and the
//! batch feature extraction used by training and evaluation.

mod features;

use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use features::{
    build_training_data, extract_regions, load_image, sentence_inputs, sentence_vectors,
    BoxSource, CacheMode, ImageRef,
};

use crate::encoders::{
    detect_objects, embed_regions, embed_sentence, encode_caption, load_checkpoint, pool_regions,
    BlobDetector, BoundingBox, CaptionEmbedding, ColorShapeBackbone, DetectionConfig,
    FeatureBackbone, HashedBowEmbedder, HeadDims, ModelTags, ObjectDetector, ObjectEmbeddingSet,
    ProjectionHeads, SentenceCache, SentenceEmbedder,
};
use crate::matcher::{score, ScoreResult};
use crate::ooc::{semantic_similarity, LexicalOverlapSts, SentenceSimilarity, Thresholds, Verdict};
use crate::textprep::{preprocess, strip_credits, CleanCaption, CreditPatterns, EntityRecognizer, GazetteerRecognizer};
use crate::{Error, Result};

/// The external models the pipeline depends on.
pub struct Adapters {
    pub detector: Box<dyn ObjectDetector>,
    pub backbone: Box<dyn FeatureBackbone>,
    pub embedder: Box<dyn SentenceEmbedder>,
    pub sts: Box<dyn SentenceSimilarity>,
    pub ner: Box<dyn EntityRecognizer>,
    pub credits: CreditPatterns,
}

impl Adapters {
    /// The bundled adapters for the procedural scene world.
    pub fn builtin() -> Self {
        Self {
            detector: Box::new(BlobDetector::default()),
            backbone: Box::new(ColorShapeBackbone::default()),
            embedder: Box::new(HashedBowEmbedder),
            sts: Box::new(LexicalOverlapSts),
            ner: Box::new(GazetteerRecognizer::default()),
            credits: CreditPatterns::default(),
        }
    }

    pub fn tags(&self) -> ModelTags {
        ModelTags {
            detector: self.detector.tag().to_string(),
            backbone: self.backbone.tag().to_string(),
            embedder: self.embedder.tag().to_string(),
        }
    }

    /// Head dimensions compatible with these adapters.
    pub fn head_dims(&self, hidden_dim: usize) -> HeadDims {
        HeadDims {
            hidden_dim,
            text_dim: self.embedder.dim(),
            ..HeadDims::new(self.backbone.channels())
        }
    }

    /// Textprep canonical form of a caption.
    pub fn clean(&self, caption: &str) -> Result<CleanCaption> {
        if caption.trim().is_empty() {
            return Err(Error::Empty("caption"));
        }
        preprocess(caption, self.ner.as_ref(), &self.credits).map_err(|e| e.at("textprep"))
    }

    /// Text handed to the sentence embedder. Without `ner` only credit lines
    /// are stripped and whitespace normalized.
    pub fn sentence_input(&self, caption: &str, ner: bool) -> Result<String> {
        if ner {
            return self.clean(caption).map(|c| c.text);
        }
        let text = strip_credits(caption, &self.credits).split_whitespace().collect::<Vec<_>>().join(" ");
        if text.is_empty() {
            return Err(Error::Empty("caption"));
        }
        Ok(text)
    }
}

/// Boxes of one image with one caption's per-box scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    pub image_id: String,
    pub caption: String,
    pub clean_caption: String,
    pub boxes: Vec<BoundingBox>,
    pub per_box_scores: Vec<f64>,
    pub best_box_index: usize,
    pub s_ic: f64,
}

/// Trained heads plus adapters: grounds captions and decides whether an
/// image is used out of context. Safe to share across threads.
pub struct OocDetector {
    pub adapters: Arc<Adapters>,
    pub heads: ProjectionHeads,
    pub detection: DetectionConfig,
    /// Hypernymize entities before embedding captions.
    pub ner: bool,
    sentences: SentenceCache,
}

impl OocDetector {
    pub fn new(adapters: Adapters, heads: ProjectionHeads, detection: DetectionConfig) -> Result<Self> {
        Self::with_shared(Arc::new(adapters), heads, detection)
    }

    pub fn with_shared(adapters: Arc<Adapters>, heads: ProjectionHeads, detection: DetectionConfig) -> Result<Self> {
        let dims = heads.dims();
        let expected = adapters.head_dims(dims.hidden_dim);
        if dims != expected {
            return Err(Error::Checkpoint(format!(
                "heads {dims:?} do not fit adapters {expected:?}"
            )));
        }
        Ok(Self {
            adapters,
            heads,
            detection,
            ner: true,
            sentences: SentenceCache::new(),
        })
    }

    pub fn with_ner(mut self, ner: bool) -> Self {
        self.ner = ner;
        self
    }

    pub fn from_checkpoint(dir: impl AsRef<Path>, adapters: Adapters) -> Result<Self> {
        let (heads, config) = load_checkpoint(dir)?;
        config.expect_tags(&adapters.tags())?;
        Self::new(adapters, heads, config.detection())
    }

    /// Cleans, embeds and projects a caption.
    pub fn embed_caption(&self, caption: &str) -> Result<(String, CaptionEmbedding)> {
        let clean = self.adapters.sentence_input(caption, self.ner)?;
        let raw = embed_sentence(&clean, self.adapters.embedder.as_ref(), &self.sentences)
            .map_err(|e| e.at("embed_sentence"))?;
        let emb = encode_caption(&clean, &raw, &self.heads).map_err(|e| e.at("encode_caption"))?;
        Ok((clean, emb))
    }

    pub fn detect_boxes(&self, image: &RgbImage) -> Result<Vec<BoundingBox>> {
        detect_objects(image, self.adapters.detector.as_ref(), &self.detection).map_err(|e| e.at("detect"))
    }

    pub fn objects(&self, image_id: &str, image: &RgbImage) -> Result<ObjectEmbeddingSet> {
        let boxes = self.detect_boxes(image)?;
        let regions = pool_regions(image, &boxes, self.adapters.backbone.as_ref())
            .map_err(|e| e.at("encode_objects"))?;
        embed_regions(image_id, &regions, &self.heads).map_err(|e| e.at("encode_objects"))
    }

    pub fn ground(&self, image_id: &str, image: &RgbImage, caption: &str) -> Result<Grounding> {
        let objects = self.objects(image_id, image)?;
        let (clean, emb) = self.embed_caption(caption)?;
        let s = score(&objects, &emb).map_err(|e| e.at("score"))?;
        Ok(grounding(&objects, caption, &clean, s))
    }

    /// Detects once, grounds both captions, compares them and applies the
    /// out-of-context rule.
    pub fn detect(
        &self,
        image_id: &str,
        image: &RgbImage,
        caption1: &str,
        caption2: &str,
        thresholds: Thresholds,
    ) -> Result<Verdict> {
        thresholds.validate()?;
        let objects = self.objects(image_id, image)?;
        let (clean1, e1) = self.embed_caption(caption1)?;
        let (clean2, e2) = self.embed_caption(caption2)?;
        let g1 = score(&objects, &e1).map_err(|e| e.at("score"))?;
        let g2 = score(&objects, &e2).map_err(|e| e.at("score"))?;
        let s_sim = semantic_similarity(&clean1, &clean2, self.adapters.sts.as_ref())
            .map_err(|e| e.at("similarity"))?;
        Verdict::from_evidence(image_id, &objects.boxes, &g1, &g2, s_sim, thresholds)
    }
}

fn grounding(objects: &ObjectEmbeddingSet, caption: &str, clean: &str, s: ScoreResult) -> Grounding {
    Grounding {
        image_id: objects.image_id.clone(),
        caption: caption.to_string(),
        clean_caption: clean.to_string(),
        boxes: objects.boxes.clone(),
        per_box_scores: s.per_box_scores,
        best_box_index: s.best_box_index,
        s_ic: s.s_ic,
    }
}

/// Free-function form of [`OocDetector::detect`].
pub fn detect_ooc(
    detector: &OocDetector,
    image_id: &str,
    image: &RgbImage,
    caption1: &str,
    caption2: &str,
    thresholds: Thresholds,
) -> Result<Verdict> {
    detector.detect(image_id, image, caption1, caption2, thresholds)
}
