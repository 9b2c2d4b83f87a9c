use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cosmos_core::encoders::DetectionConfig;
use cosmos_core::matcher::TrainConfig;
use cosmos_core::pipeline::BoxSource;
use serde::Deserialize;

/// `cosmos train --config` file. Relative paths resolve against the file's
/// directory.
///
/// ```toml
/// train_split = "train.jsonl"
/// val_split = "val.jsonl"
/// box_source = "predicted"
///
/// [detection]
/// c_min = 0.5
/// n_max = 10
///
/// [train]
/// learning_rate = 1e-3
/// max_epochs = 30
/// ```
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub train_split: Option<PathBuf>,
    pub val_split: Option<PathBuf>,
    pub box_source: Option<BoxSource>,
    pub detection: Option<DetectionConfig>,
    pub train: TrainConfig,
}

impl TrainFile {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut f: TrainFile = toml::from_str(text)?;
        for p in [&mut f.train_split, &mut f.val_split].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Command-line values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub train_split: Option<PathBuf>,
    pub val_split: Option<PathBuf>,
    pub box_source: Option<BoxSource>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub hidden_dim: Option<usize>,
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub train_split: PathBuf,
    pub val_split: PathBuf,
    pub box_source: BoxSource,
    pub detection: DetectionConfig,
    pub train: TrainConfig,
}

/// Flag, then config file, then built-in default.
pub fn resolve(file: TrainFile, flags: TrainOverrides) -> Result<TrainSettings> {
    let mut train = file.train;
    if let Some(v) = flags.epochs {
        train.max_epochs = v;
    }
    if let Some(v) = flags.learning_rate {
        train.learning_rate = v;
    }
    if let Some(v) = flags.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = flags.seed {
        train.seed = v;
    }
    if let Some(v) = flags.hidden_dim {
        train.hidden_dim = v;
    }
    if let Some(v) = flags.margin {
        train.margin = v;
    }
    train.validate()?;
    let missing = |what: &str| {
        cosmos_core::Error::Config(format!("{what} split not set; pass --{what} or set {what}_split in the config file"))
    };
    Ok(TrainSettings {
        train_split: flags.train_split.or(file.train_split).ok_or_else(|| missing("train"))?,
        val_split: flags.val_split.or(file.val_split).ok_or_else(|| missing("val"))?,
        box_source: flags.box_source.or(file.box_source).unwrap_or(BoxSource::Predicted),
        detection: file.detection.unwrap_or_default(),
        train,
    })
}
