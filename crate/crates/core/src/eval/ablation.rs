use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::grounding::{object_iou, GroundingSplit};
use super::{context_accuracy, MetricReport};
use crate::corpus::{DatasetSplit, SplitName};
use crate::encoders::{DetectionConfig, ProjectionHeads};
use crate::matcher::{match_accuracy_of, train, TrainConfig, TrainReport, TrainingData};
use crate::ooc::Thresholds;
use crate::pipeline::{build_training_data, Adapters, BoxSource, CacheMode, OocDetector};
use crate::{Error, Result};

/// Published full-scale figures, written under every ablation table for
/// comparison only.
pub const REFERENCE_FOOTER: &[&str] = &[
    "reference (full scale): bbox_pred object_iou=0.27 match_acc=0.88; full_image object_iou=0.11 match_acc=0.63; bbox_gt object_iou=0.36 match_acc=0.89",
    "reference (full scale): train fraction 10%/20%/50%/100% match_acc=0.64/0.65/0.68/0.72 context_acc=0.72/0.74/0.77/0.85",
    "reference (full scale): augmentation J/J+R/NER/J+R+NER context_acc=0.73/0.74/0.78/0.85",
    "reference (full scale): random box selection object_iou=0.07",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub tag: String,
    pub box_source: BoxSource,
    /// Leading fraction of the training images used.
    pub train_fraction: f64,
    pub train: TrainConfig,
    /// Required adapter tags; a mismatch means the features do not exist.
    #[serde(default)]
    pub backbone_tag: Option<String>,
    #[serde(default)]
    pub embedder_tag: Option<String>,
}

pub struct AblationData<'a> {
    pub adapters: Arc<Adapters>,
    pub detection: DetectionConfig,
    pub train: &'a DatasetSplit,
    /// Early-stopping and checkpoint selection.
    pub val: &'a DatasetSplit,
    /// Split the reported match accuracy is measured on.
    pub eval: &'a DatasetSplit,
    /// Seed fixing the negatives of the validation and evaluation pairs.
    pub eval_seed: u64,
    pub grounding: Option<&'a GroundingSplit>,
    pub triplets: Option<&'a DatasetSplit>,
    pub thresholds: Thresholds,
    pub cache: CacheMode<'a>,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub report: MetricReport,
    pub train_report: TrainReport,
    pub heads: ProjectionHeads,
}

fn subset(split: &DatasetSplit, fraction: f64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("train_fraction {fraction} outside (0, 1]")));
    }
    let n = ((split.images().len() as f64 * fraction).ceil() as usize).max(2);
    let records = split.images().iter().take(n).cloned().collect();
    DatasetSplit::from_images(SplitName::Train, records, &split.root)
}

/// Trains and evaluates one model per configuration.
pub fn ablation_run(configs: &[AblationConfig], data: &AblationData<'_>) -> Result<Vec<AblationResult>> {
    let adapters = &data.adapters;
    let mut out = Vec::with_capacity(configs.len());
    for cfg in configs {
        for (want, have) in [
            (&cfg.backbone_tag, adapters.backbone.tag()),
            (&cfg.embedder_tag, adapters.embedder.tag()),
        ] {
            if let Some(w) = want {
                if w != have {
                    return Err(Error::MissingFeatures(format!("{}: no features for adapter {w}", cfg.tag)));
                }
            }
        }
        let ner = cfg.train.augment.ner;
        let train_split = subset(data.train, cfg.train_fraction)?;
        let (train_feats, train_pairs) = build_training_data(
            &train_split,
            adapters,
            &data.detection,
            cfg.box_source,
            ner,
            cfg.train.seed,
            data.cache,
        )?;
        let (val_feats, val_pairs) = build_training_data(
            data.val,
            adapters,
            &data.detection,
            cfg.box_source,
            ner,
            data.eval_seed,
            data.cache,
        )?;
        let train_data = TrainingData {
            objects: &train_feats,
            pairs: &train_pairs,
        };
        let val_data = TrainingData {
            objects: &val_feats,
            pairs: &val_pairs,
        };
        let init = ProjectionHeads::init(adapters.head_dims(cfg.train.hidden_dim), cfg.train.seed);
        let (heads, train_report) = train(&cfg.train, train_data, val_data, init, None)?;
        let (eval_feats, eval_pairs) = build_training_data(
            data.eval,
            adapters,
            &data.detection,
            cfg.box_source,
            ner,
            data.eval_seed,
            data.cache,
        )?;
        let match_accuracy = match_accuracy_of(
            &heads,
            TrainingData {
                objects: &eval_feats,
                pairs: &eval_pairs,
            },
        )?;
        let detector = OocDetector::with_shared(Arc::clone(adapters), heads.clone(), data.detection)?.with_ner(ner);
        let object_iou = match data.grounding {
            Some(g) => Some(object_iou(&detector, g, cfg.box_source)?.mean_iou),
            None => None,
        };
        let mut report = match data.triplets {
            Some(t) => context_accuracy(&detector, t, data.thresholds, &cfg.tag)?,
            None => MetricReport {
                config_tag: cfg.tag.clone(),
                ..MetricReport::default()
            },
        };
        if data.triplets.is_none() {
            report.n_samples = eval_pairs.len();
        }
        report.match_accuracy = Some(match_accuracy);
        report.object_iou = object_iou;
        tracing::info!(config = %cfg.tag, match_accuracy, "ablation config done");
        out.push(AblationResult {
            report,
            train_report,
            heads,
        });
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// CSV table (`config_tag,n,match_acc,object_iou,context_acc,tp,fp,tn,fn`)
/// followed by `#`-prefixed reference lines.
pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("config_tag,n,match_acc,object_iou,context_acc,tp,fp,tn,fn\n");
    for r in reports {
        let c = r.confusion;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.config_tag,
            r.n_samples,
            opt(r.match_accuracy),
            opt(r.object_iou),
            opt(r.context_accuracy),
            c.tp,
            c.fp,
            c.tn,
            c.fn_
        ));
    }
    for line in REFERENCE_FOOTER {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out
}
