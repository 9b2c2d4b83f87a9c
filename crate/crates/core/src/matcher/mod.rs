//! Image-caption scoring and the self-supervised max-margin trainer.

mod adam;
mod augment;
mod grad;
mod train;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use augment::{augment_object_crop, AugmentFlags, AugmentingFeatures};
pub use grad::{batch_loss, batch_loss_and_grad, PairRef};
pub use train::{
    match_accuracy_of, train, CachedFeatures, EncodedPair, EpochStats, ObjectFeatures,
    TrainConfig, TrainReport, TrainingData,
};

use crate::encoders::{CaptionEmbedding, ObjectEmbeddingSet};
use crate::{Error, Result};

/// Per-box dot products of one caption against one image's objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub per_box_scores: Vec<f64>,
    pub best_box_index: usize,
    pub s_ic: f64,
}

/// Index of the maximum, first occurrence on ties.
pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

/// Scores raw embedding rows against a caption vector.
pub fn score_rows(objects: ArrayView2<f64>, caption: ArrayView1<f64>) -> Result<ScoreResult> {
    if objects.nrows() == 0 {
        return Err(Error::Empty("object embeddings"));
    }
    if objects.ncols() != caption.len() {
        return Err(Error::Dimension {
            expected: objects.ncols(),
            actual: caption.len(),
        });
    }
    if caption.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("caption embedding"));
    }
    if objects.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("object embedding"));
    }
    let per_box_scores: Vec<f64> = objects.rows().into_iter().map(|r| r.dot(&caption)).collect();
    let (best_box_index, s_ic) = argmax(per_box_scores.iter().copied()).expect("non-empty");
    Ok(ScoreResult {
        per_box_scores,
        best_box_index,
        s_ic,
    })
}

/// `S_IC = max_i b_i . c`.
pub fn score(objects: &ObjectEmbeddingSet, caption: &CaptionEmbedding) -> Result<ScoreResult> {
    score_rows(objects.embeddings.view(), caption.values.view())
}

/// Hinge on the score gap: `max(0, s_rand - s_match + margin)`.
pub fn margin_loss(s_match: f64, s_rand: f64, margin: f64) -> f64 {
    (s_rand - s_match + margin).max(0.0)
}
