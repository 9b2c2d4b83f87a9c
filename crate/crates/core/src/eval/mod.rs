//! Match accuracy, object IoU and context accuracy, plus the ablation
//! driver and the synthetic out-of-context benchmark.

mod ablation;
mod grounding;
mod synthetic;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ablation::{ablation_run, reports_to_csv, AblationConfig, AblationData, REFERENCE_FOOTER};
pub use grounding::{
    object_iou, GroundingAnnotation, GroundingCorpus, GroundingImage, GroundingItem, GroundingRef,
    GroundingSplit, IouReport, Sentence,
};
pub use synthetic::{build_synthetic_ooc, Paraphraser, SyntheticOoc};

use crate::corpus::{DatasetSplit, OocLabel, TestTriplet};
use crate::encoders::ProjectionHeads;
use crate::matcher::{match_accuracy_of, TrainingData};
use crate::ooc::{Thresholds, Verdict};
use crate::pipeline::{load_image, OocDetector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.total() > 0).then(|| (self.tp + self.tn) as f64 / self.total() as f64)
    }

    /// Counts with every prediction flipped.
    pub fn inverted(&self) -> Self {
        Self {
            tp: self.fn_,
            fn_: self.tp,
            tn: self.fp,
            fp: self.tn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub config_tag: String,
    pub n_samples: usize,
    pub match_accuracy: Option<f64>,
    pub object_iou: Option<f64>,
    pub context_accuracy: Option<f64>,
    pub confusion: Confusion,
}

/// Fraction of pairs where the matching caption strictly outscores the
/// random one.
pub fn match_accuracy(heads: &ProjectionHeads, data: TrainingData<'_>) -> Result<f64> {
    if data.pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    match_accuracy_of(heads, data)
}

/// Accuracy and confusion of boolean predictions against labels
/// (positive class: out of context).
pub fn context_report(config_tag: &str, predictions: &[bool], labels: &[OocLabel]) -> Result<MetricReport> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            actual: predictions.len(),
        });
    }
    let mut c = Confusion::default();
    for (&p, l) in predictions.iter().zip(labels) {
        match (p, l.is_ooc()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(MetricReport {
        config_tag: config_tag.to_string(),
        n_samples: labels.len(),
        match_accuracy: None,
        object_iou: None,
        context_accuracy: c.accuracy(),
        confusion: c,
    })
}

/// Runs the detector on every labeled triplet.
pub fn triplet_verdicts(detector: &OocDetector, split: &DatasetSplit, thresholds: Thresholds) -> Result<Vec<Verdict>> {
    split.assert_evaluable()?;
    split
        .triplets()
        .par_iter()
        .map(|t: &TestTriplet| {
            let image = load_image(split.resolve(&t.image_path)).map_err(|e| e.at("load_image"))?;
            detector.detect(&t.image_id, &image, &t.caption1.text, &t.caption2.text, thresholds)
        })
        .collect()
}

/// Out-of-context classification accuracy over a labeled test split.
pub fn context_accuracy(
    detector: &OocDetector,
    split: &DatasetSplit,
    thresholds: Thresholds,
    config_tag: &str,
) -> Result<MetricReport> {
    let verdicts = triplet_verdicts(detector, split, thresholds)?;
    let labels: Vec<OocLabel> = split
        .triplets()
        .iter()
        .map(|t| t.label.ok_or_else(|| Error::Invalid(format!("unlabeled triplet {}", t.image_id))))
        .collect::<Result<_>>()?;
    let preds: Vec<bool> = verdicts.iter().map(|v| v.ooc).collect();
    context_report(config_tag, &preds, &labels)
}
