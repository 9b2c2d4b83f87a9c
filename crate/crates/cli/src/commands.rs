use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cosmos_core::corpus::{load_split, write_split, DatasetSplit, ImageRecord, SplitName, TestTriplet};
use cosmos_core::encoders::{load_checkpoint, BlobDetector, CheckpointConfig, DetectionConfig, FeatureCache, ProjectionHeads};
use cosmos_core::eval::{
    build_synthetic_ooc, context_accuracy, match_accuracy, object_iou, reports_to_csv, GroundingSplit,
    MetricReport, Paraphraser,
};
use cosmos_core::matcher::{train, TrainConfig, TrainingData};
use cosmos_core::ooc::{Thresholds, Verdict};
use cosmos_core::pipeline::{build_training_data, load_image, Adapters, BoxSource, CacheMode, OocDetector};
use cosmos_core::synth::{write_captioned_corpus, write_grounding_corpus, SynthConfig};
use cosmos_core::textprep::{preprocess, CreditPatterns, GazetteerRecognizer};
use cosmos_service::{read_triplets, router, seed_queue, serve, AppState, ServiceConfig, SqliteStore};
use serde::Serialize;

use crate::config::{resolve, TrainFile, TrainOverrides};

/// Exit status for "verdict: out of context".
pub const EXIT_OOC: u8 = 10;

/// Any record line of a dataset file.
#[derive(Debug, Serialize)]
#[serde(untagged)]
enum Record {
    Image(ImageRecord),
    Triplet(TestTriplet),
}

#[derive(Debug, Default, Serialize)]
pub struct PreprocessSummary {
    pub records: usize,
    pub captions: usize,
    pub replacements: usize,
    pub changed_captions: usize,
}

fn parse_error(path: &Path, line: usize, message: impl std::fmt::Display) -> cosmos_core::Error {
    cosmos_core::Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

pub fn preprocess_file(
    input: &Path,
    output: &Path,
    credits: Option<&Path>,
    gazetteer: Option<&Path>,
) -> Result<PreprocessSummary> {
    let credits = match credits {
        Some(p) => CreditPatterns::load(p)?,
        None => CreditPatterns::default(),
    };
    let ner = match gazetteer {
        Some(p) => GazetteerRecognizer::default_extended_with(p)?,
        None => GazetteerRecognizer::default(),
    };
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let mut summary = PreprocessSummary::default();
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| parse_error(input, i + 1, e))?;
        let mut record = if value.get("caption1").is_some() {
            serde_json::from_value(value).map(Record::Triplet)
        } else {
            serde_json::from_value(value).map(Record::Image)
        }
        .map_err(|e| parse_error(input, i + 1, e))?;
        let captions: Vec<&mut String> = match &mut record {
            Record::Image(r) => {
                r.validate().map_err(|e| parse_error(input, i + 1, e))?;
                r.captions.iter_mut().map(|c| &mut c.text).collect()
            }
            Record::Triplet(t) => {
                t.caption1.validate().map_err(|e| parse_error(input, i + 1, e))?;
                t.caption2.validate().map_err(|e| parse_error(input, i + 1, e))?;
                vec![&mut t.caption1.text, &mut t.caption2.text]
            }
        };
        for text in captions {
            let clean = preprocess(text, &ner, &credits)?;
            summary.captions += 1;
            summary.replacements += clean.replacements.len();
            if clean.text != *text {
                summary.changed_captions += 1;
                *text = clean.text;
            }
        }
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
        summary.records += 1;
    }
    fs::write(output, out).with_context(|| format!("writing {}", output.display()))?;
    Ok(summary)
}

/// Loads a dataset file as a triplet split when its first record is a
/// triplet, otherwise as an image split.
pub fn load_any_split(path: &Path) -> Result<DatasetSplit> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().find(|l| !l.trim().is_empty());
    let is_triplets = first
        .and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .is_some_and(|v| v.get("caption1").is_some());
    let name = if is_triplets { SplitName::Test } else { SplitName::Val };
    Ok(load_split(path, name)?)
}

fn image_split(path: &Path) -> Result<DatasetSplit> {
    let split = load_any_split(path)?;
    if split.images().is_empty() && !split.triplets().is_empty() {
        return Err(cosmos_core::Error::Invalid(format!("{} holds triplets; an image split is required", path.display())).into());
    }
    Ok(split)
}

#[derive(Debug, Serialize)]
pub struct ExtractSummary {
    pub images: usize,
    pub pairs: usize,
    pub cache_entries: usize,
}

pub struct ExtractArgs<'a> {
    pub splits: &'a [PathBuf],
    pub cache: &'a Path,
    pub box_source: BoxSource,
    pub ner: bool,
    pub c_min: Option<f64>,
    pub n_max: Option<usize>,
}

pub fn extract_features(a: ExtractArgs<'_>) -> Result<ExtractSummary> {
    let adapters = Adapters::builtin();
    let mut detection = DetectionConfig::default();
    detection.c_min = a.c_min.unwrap_or(detection.c_min);
    detection.n_max = a.n_max.unwrap_or(detection.n_max);
    let cache = if a.cache.join("index.json").exists() {
        FeatureCache::open(a.cache)?
    } else {
        FeatureCache::create(a.cache)?
    };
    let mut summary = ExtractSummary {
        images: 0,
        pairs: 0,
        cache_entries: 0,
    };
    for path in a.splits {
        let split = image_split(path)?;
        let (_, pairs) = build_training_data(&split, &adapters, &detection, a.box_source, a.ner, 0, CacheMode::ReadWrite(&cache))?;
        summary.images += split.images().len();
        summary.pairs += pairs.len();
        tracing::info!(split = %path.display(), images = split.images().len(), "extracted");
    }
    cache.flush()?;
    summary.cache_entries = cache.len();
    Ok(summary)
}

fn open_cache(dir: &Path) -> Result<FeatureCache> {
    if !dir.join("index.json").exists() {
        return Err(cosmos_core::Error::MissingFeatures(format!(
            "{} (run `cosmos extract-features` first)",
            dir.display()
        ))
        .into());
    }
    Ok(FeatureCache::open(dir)?)
}

/// Negative sampling seed for evaluation pairs.
pub const EVAL_SEED: u64 = 99;

pub fn train_command(config: Option<&Path>, flags: TrainOverrides, cache: &Path, out: &Path) -> Result<serde_json::Value> {
    let file = match config {
        Some(p) => TrainFile::load(p).map_err(|e| cosmos_core::Error::Config(format!("{e:#}")))?,
        None => TrainFile::default(),
    };
    let s = resolve(file, flags)?;
    let cache = open_cache(cache)?;
    let adapters = Adapters::builtin();
    let ner = s.train.augment.ner;
    let train_split = image_split(&s.train_split)?;
    let val_split = image_split(&s.val_split)?;
    train_split.check_disjoint(&val_split)?;
    let ro = CacheMode::ReadOnly(&cache);
    let (tf, tp) = build_training_data(&train_split, &adapters, &s.detection, s.box_source, ner, s.train.seed, ro)?;
    let (vf, vp) = build_training_data(&val_split, &adapters, &s.detection, s.box_source, ner, EVAL_SEED, ro)?;
    let init = ProjectionHeads::init(adapters.head_dims(s.train.hidden_dim), s.train.seed);
    let ckpt = CheckpointConfig::new(init.dims(), adapters.tags(), s.detection);
    let (_, report) = train(
        &s.train,
        TrainingData { objects: &tf, pairs: &tp },
        TrainingData { objects: &vf, pairs: &vp },
        init,
        Some((out, &ckpt)),
    )?;
    let report = serde_json::to_value(&report)?;
    fs::write(out.join("train_report.json"), serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Metric {
    Match,
    Iou,
    Context,
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub split: &'a Path,
    pub metric: Metric,
    pub cache: Option<&'a Path>,
    pub thresholds: Thresholds,
    pub tag: &'a str,
}

pub fn eval_command(a: EvalArgs<'_>) -> Result<MetricReport> {
    let adapters = Adapters::builtin();
    let (heads, config) = load_checkpoint(a.checkpoint)?;
    config.expect_tags(&adapters.tags())?;
    let report = |n_samples, match_accuracy, object_iou| MetricReport {
        config_tag: a.tag.to_string(),
        n_samples,
        match_accuracy,
        object_iou,
        context_accuracy: None,
        confusion: Default::default(),
    };
    match a.metric {
        Metric::Match => {
            let split = image_split(a.split)?;
            let cache = a.cache.map(open_cache).transpose()?;
            let mode = cache.as_ref().map_or(CacheMode::Off, CacheMode::ReadOnly);
            let ner = TrainConfig::default().augment.ner;
            let (f, p) = build_training_data(&split, &adapters, &config.detection(), BoxSource::Predicted, ner, EVAL_SEED, mode)?;
            let acc = match_accuracy(&heads, TrainingData { objects: &f, pairs: &p })?;
            Ok(report(p.len(), Some(acc), None))
        }
        Metric::Iou => {
            let split = GroundingSplit::load(a.split)?;
            let detector = OocDetector::new(adapters, heads, config.detection())?;
            let r = object_iou(&detector, &split, BoxSource::Predicted)?;
            Ok(report(r.n, None, Some(r.mean_iou)))
        }
        Metric::Context => {
            let split = load_any_split(a.split)?;
            if split.triplets().is_empty() {
                bail!(cosmos_core::Error::Invalid(format!("{} holds no labeled triplets", a.split.display())));
            }
            let detector = OocDetector::new(adapters, heads, config.detection())?;
            Ok(context_accuracy(&detector, &split, a.thresholds, a.tag)?)
        }
    }
}

pub fn eval_output(report: &MetricReport, json: bool) -> Result<String> {
    Ok(if json {
        serde_json::to_string_pretty(report)? + "\n"
    } else {
        reports_to_csv(std::slice::from_ref(report))
    })
}

pub fn predict_command(checkpoint: &Path, image: &Path, c1: &str, c2: &str, thresholds: Thresholds) -> Result<Verdict> {
    let detector = OocDetector::from_checkpoint(checkpoint, Adapters::builtin())?;
    let image_id = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
    let img = load_image(image)?;
    Ok(cosmos_core::pipeline::detect_ooc(&detector, &image_id, &img, c1, c2, thresholds)?)
}

pub struct SynthArgs<'a> {
    pub out: &'a Path,
    pub config: SynthConfig,
    pub ooc_images: Option<usize>,
    pub grounding_images: usize,
}

pub fn synth_command(a: SynthArgs<'_>) -> Result<serde_json::Value> {
    let corpus = write_captioned_corpus(a.out, &a.config)?;
    let mut summary = serde_json::json!({
        "train": corpus.train,
        "val": corpus.val,
        "heldout": corpus.heldout,
    });
    if a.config.n_heldout > 0 {
        let heldout = load_split(&corpus.heldout, SplitName::Val)?;
        let built = build_synthetic_ooc(
            &heldout,
            &BlobDetector::default(),
            &DetectionConfig::default(),
            &GazetteerRecognizer::default(),
            &Paraphraser::default(),
            a.config.seed,
            a.ooc_images,
        )?;
        let path = a.out.join("ooc.jsonl");
        let n = built.triplets.len();
        if n > 0 {
            write_split(&DatasetSplit::from_triplets(built.triplets, heldout.root.clone())?, &path)?;
            summary["ooc"] = serde_json::json!(path);
        }
        summary["ooc_triplets"] = n.into();
    }
    if a.grounding_images > 0 {
        let refs = write_grounding_corpus(a.out.join("grounding"), a.grounding_images, a.config.seed)?;
        summary["grounding"] = serde_json::json!(refs);
    }
    Ok(summary)
}

pub fn seed_command(triplets: &Path, db: &Path, checkpoint: Option<&Path>, root: Option<&Path>) -> Result<serde_json::Value> {
    let records = read_triplets(triplets)?;
    let detector = checkpoint
        .map(|c| OocDetector::from_checkpoint(c, Adapters::builtin()))
        .transpose()?;
    let root = match root {
        Some(r) => r.to_path_buf(),
        None => triplets.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let store = SqliteStore::open(db)?;
    let report = seed_queue(&store, detector.as_ref(), &records, &root)?;
    Ok(serde_json::json!({
        "added": report.added,
        "already_queued": report.already_queued,
        "with_verdict": report.with_verdict,
        "db": db,
    }))
}

pub fn serve_command(config: ServiceConfig, host: &str) -> Result<()> {
    let detector = match &config.checkpoint {
        Some(c) => Some(OocDetector::from_checkpoint(c, Adapters::builtin())?),
        None => {
            tracing::warn!("no checkpoint configured; /predict and /grounding return 503");
            None
        }
    };
    let store = SqliteStore::open(&config.db_path)?;
    let state = AppState::new(detector, store, config.token.clone(), config.max_image_bytes);
    let app = router(state, config.ui_dir.as_deref());
    let addr: SocketAddr = format!("{host}:{}", config.port).parse().context("bind address")?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        serve(listener, app).await
    })?;
    Ok(())
}

pub fn print_json(v: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, v)?;
    out.write_all(b"\n")?;
    Ok(())
}
