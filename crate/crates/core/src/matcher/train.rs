use std::borrow::Cow;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::augment::AugmentFlags;
use super::grad::{batch_loss_and_grad, PairRef};
use super::{margin_loss, score_rows};
use crate::corpus::epoch_order;
use crate::encoders::{save_checkpoint, CheckpointConfig, ProjectionHeads, RegionFeatures};
use crate::{Error, Result};

/// Source of pooled region features for the images referenced by pairs.
pub trait ObjectFeatures: Sync {
    fn len(&self) -> usize;
    /// Features of image `image` as seen in `epoch` (augmenting sources may
    /// vary per epoch; cached ones ignore it).
    fn features(&self, image: usize, epoch: usize) -> Result<Cow<'_, Array2<f64>>>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Precomputed features, one matrix per image.
#[derive(Debug, Clone, Default)]
pub struct CachedFeatures(pub Vec<Array2<f64>>);

impl CachedFeatures {
    pub fn from_regions(regions: &[RegionFeatures]) -> Self {
        Self(regions.iter().map(|r| r.features.clone()).collect())
    }
}

impl ObjectFeatures for CachedFeatures {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn features(&self, image: usize, _epoch: usize) -> Result<Cow<'_, Array2<f64>>> {
        self.0
            .get(image)
            .map(Cow::Borrowed)
            .ok_or_else(|| Error::MissingFeatures(format!("image #{image}")))
    }
}

/// A (matching, random) pair with raw sentence vectors already computed.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair {
    /// Index into the [`ObjectFeatures`] source.
    pub image: usize,
    pub matching: Array1<f64>,
    pub random: Array1<f64>,
}

#[derive(Clone, Copy)]
pub struct TrainingData<'a> {
    pub objects: &'a dyn ObjectFeatures,
    pub pairs: &'a [EncodedPair],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub margin: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau_patience: usize,
    pub decay_factor: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    pub augment: AugmentFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            margin: 1.0,
            batch_size: 64,
            max_epochs: 30,
            plateau_patience: 5,
            decay_factor: 0.1,
            early_stop_patience: 10,
            seed: 0,
            hidden_dim: 1024,
            augment: AugmentFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.hidden_dim == 0 {
            return bad("batch_size, max_epochs and hidden_dim must be positive");
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return bad("decay_factor must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_match_acc: f64,
    /// Lowest validation loss seen up to and including this epoch.
    pub best_val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_match_acc: f64,
    pub stopped_early: bool,
    pub checkpoint_path: Option<PathBuf>,
}

impl TrainReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_match_acc\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_match_acc
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn pair_scores(heads: &ProjectionHeads, data: TrainingData<'_>, p: &EncodedPair) -> Result<(f64, f64)> {
    let feats = data.objects.features(p.image, 0)?;
    let objects = heads.embed_regions(feats.view())?;
    let c_m = heads.embed_text(p.matching.view())?;
    let c_r = heads.embed_text(p.random.view())?;
    Ok((
        score_rows(objects.view(), c_m.view())?.s_ic,
        score_rows(objects.view(), c_r.view())?.s_ic,
    ))
}

/// Mean hinge loss and match accuracy (ties count as wrong) over `data`.
pub fn evaluate(heads: &ProjectionHeads, data: TrainingData<'_>, margin: f64) -> Result<(f64, f64)> {
    if data.pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let scores = data
        .pairs
        .par_iter()
        .map(|p| pair_scores(heads, data, p))
        .collect::<Result<Vec<_>>>()?;
    let n = scores.len() as f64;
    let loss = scores.iter().map(|&(m, r)| margin_loss(m, r, margin)).sum::<f64>() / n;
    let correct = scores.iter().filter(|&&(m, r)| m > r).count();
    Ok((loss, correct as f64 / n))
}

/// Fraction of pairs whose matching caption outscores the random one.
pub fn match_accuracy_of(heads: &ProjectionHeads, data: TrainingData<'_>) -> Result<f64> {
    evaluate(heads, data, 1.0).map(|(_, acc)| acc)
}

/// Optimizes the projection heads with Adam on the mean hinge loss.
///
/// The pair list is fixed; its order is reshuffled every epoch from
/// `(seed, epoch)`. The learning rate is multiplied by `decay_factor` after
/// `plateau_patience` epochs without validation-loss improvement, training
/// stops after `early_stop_patience` such epochs, and the returned heads are
/// those of the epoch with the best validation match accuracy, rounded to
/// checkpoint precision. When `checkpoint` is given they are also written
/// there.
pub fn train(
    config: &TrainConfig,
    train_data: TrainingData<'_>,
    val_data: TrainingData<'_>,
    mut heads: ProjectionHeads,
    checkpoint: Option<(&Path, &CheckpointConfig)>,
) -> Result<(ProjectionHeads, TrainReport)> {
    config.validate()?;
    if train_data.pairs.is_empty() {
        return Err(Error::Empty("training pairs"));
    }
    let mut opt = Adam::new(heads.dims(), config.learning_rate);
    let mut epochs = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut since_loss_improved = 0;
    let mut plateau = 0;
    let mut best: Option<(usize, f64, ProjectionHeads)> = None;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let order = epoch_order(train_data.pairs.len(), config.seed, epoch);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let feats = chunk
                .par_iter()
                .map(|&i| train_data.objects.features(train_data.pairs[i].image, epoch))
                .collect::<Result<Vec<_>>>()?;
            let batch: Vec<PairRef<'_>> = chunk
                .iter()
                .zip(&feats)
                .map(|(&i, f)| PairRef {
                    features: f.view(),
                    matching: train_data.pairs[i].matching.view(),
                    random: train_data.pairs[i].random.view(),
                })
                .collect();
            let (loss, grad) = batch_loss_and_grad(&heads, &batch, config.margin)?;
            loss_sum += loss * chunk.len() as f64;
            opt.step(&mut heads, &grad);
        }
        if !heads.is_finite() {
            return Err(Error::NonFinite("head parameters"));
        }
        let train_loss = loss_sum / train_data.pairs.len() as f64;
        let (val_loss, val_acc) = evaluate(&heads, val_data, config.margin)?;

        if val_loss < best_loss {
            best_loss = val_loss;
            since_loss_improved = 0;
            plateau = 0;
        } else {
            since_loss_improved += 1;
            plateau += 1;
            if plateau >= config.plateau_patience {
                opt.learning_rate *= config.decay_factor;
                plateau = 0;
            }
        }
        if best.as_ref().is_none_or(|(_, acc, _)| val_acc > *acc) {
            let snapshot = heads.rounded_to_f32();
            if let Some((dir, cfg)) = checkpoint {
                save_checkpoint(dir, &snapshot, cfg)?;
            }
            best = Some((epoch, val_acc, snapshot));
        }
        tracing::info!(epoch, train_loss, val_loss, val_acc, lr = opt.learning_rate, "epoch done");
        epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_match_acc: val_acc,
            best_val_loss: best_loss,
            learning_rate: opt.learning_rate,
        });
        if since_loss_improved >= config.early_stop_patience {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best_val_match_acc, best_heads) = best.expect("at least one epoch");
    Ok((
        best_heads,
        TrainReport {
            epochs,
            best_epoch,
            best_val_match_acc,
            stopped_early,
            checkpoint_path: checkpoint.map(|(d, _)| d.to_path_buf()),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::HeadDims;

    fn dims() -> HeadDims {
        HeadDims {
            feature_dim: 4,
            hidden_dim: 16,
            embed_dim: 8,
            text_dim: 4,
        }
    }

    /// Image k carries one-hot feature k; its caption is the same one-hot
    /// vector, so matching and random captions are separable.
    fn separable() -> (CachedFeatures, Vec<EncodedPair>) {
        let feats = (0..4)
            .map(|k| {
                let mut m = Array2::zeros((2, 4));
                m[[0, k]] = 1.0;
                m
            })
            .collect();
        let onehot = |k: usize| {
            let mut v = Array1::zeros(4);
            v[k] = 1.0;
            v
        };
        let pairs = (0..4)
            .map(|k| EncodedPair {
                image: k,
                matching: onehot(k),
                random: onehot((k + 1) % 4),
            })
            .collect();
        (CachedFeatures(feats), pairs)
    }

    fn config() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 2,
            max_epochs: 300,
            early_stop_patience: 300,
            plateau_patience: 300,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_task_reaches_zero_loss() {
        let (feats, pairs) = separable();
        let data = TrainingData {
            objects: &feats,
            pairs: &pairs,
        };
        let (heads, report) = train(&config(), data, data, ProjectionHeads::init(dims(), 1), None).unwrap();
        let last = report.epochs.last().unwrap();
        assert_eq!(last.train_loss, 0.0);
        assert_eq!(report.best_val_match_acc, 1.0);
        assert_eq!(match_accuracy_of(&heads, data).unwrap(), 1.0);
        assert!(report.to_csv().starts_with("epoch,train_loss,val_loss,val_match_acc\n1,"));
    }

    #[test]
    fn reproducible_and_best_loss_monotone() {
        let (feats, pairs) = separable();
        let data = TrainingData {
            objects: &feats,
            pairs: &pairs,
        };
        let cfg = TrainConfig {
            max_epochs: 40,
            plateau_patience: 2,
            early_stop_patience: 4,
            learning_rate: 0.05,
            ..config()
        };
        let run = || train(&cfg, data, data, ProjectionHeads::init(dims(), 2), None).unwrap();
        let (h1, r1) = run();
        let (h2, r2) = run();
        assert_eq!(h1, h2);
        assert_eq!(r1, r2);
        for w in r1.epochs.windows(2) {
            assert!(w[1].best_val_loss <= w[0].best_val_loss);
        }
        let best = &r1.epochs[r1.best_epoch - 1];
        assert!(r1.epochs.iter().all(|e| e.val_match_acc <= best.val_match_acc));
    }

    #[test]
    fn writes_checkpoint_of_best_epoch() {
        let (feats, pairs) = separable();
        let data = TrainingData {
            objects: &feats,
            pairs: &pairs,
        };
        let dir = tempfile::tempdir().unwrap();
        let cfg = CheckpointConfig::new(
            dims(),
            crate::encoders::ModelTags {
                detector: "d".into(),
                backbone: "b".into(),
                embedder: "e".into(),
            },
            Default::default(),
        );
        let tc = TrainConfig {
            max_epochs: 5,
            ..config()
        };
        let (heads, report) =
            train(&tc, data, data, ProjectionHeads::init(dims(), 1), Some((dir.path(), &cfg))).unwrap();
        let (loaded, _) = crate::encoders::load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded, heads);
        assert_eq!(report.checkpoint_path.as_deref(), Some(dir.path()));
    }

    #[test]
    fn rejects_bad_input() {
        let (feats, _) = separable();
        let data = TrainingData {
            objects: &feats,
            pairs: &[],
        };
        assert!(matches!(
            train(&config(), data, data, ProjectionHeads::init(dims(), 1), None),
            Err(Error::Empty(_))
        ));
        let bad = TrainConfig {
            margin: 0.0,
            ..config()
        };
        assert!(bad.validate().is_err());
        let parsed: TrainConfig = toml::from_str("learning_rate = 0.01\n[augment]\njitter = true\n").unwrap();
        assert_eq!(parsed.learning_rate, 0.01);
        assert!(parsed.augment.jitter);
        assert_eq!(parsed.batch_size, 64);
    }
}
