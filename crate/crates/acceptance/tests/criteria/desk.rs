use std::sync::{Arc, Mutex};

use cosmos_core::corpus::{load_split, DatasetSplit, OocLabel, SplitName};
use cosmos_core::encoders::{BlobDetector, CheckpointConfig, DetectionConfig, FeatureCache, ProjectionHeads};
use cosmos_core::eval::{
    ablation_run, build_synthetic_ooc, context_report, triplet_verdicts, match_accuracy, AblationConfig,
    AblationData, GroundingSplit, Paraphraser,
};
use cosmos_core::matcher::{train, TrainConfig, TrainingData};
use cosmos_core::ooc::Thresholds;
use cosmos_core::pipeline::{build_training_data, Adapters, BoxSource, CacheMode, OocDetector};
use cosmos_core::synth::{write_captioned_corpus, write_grounding_corpus, SynthConfig};
use cosmos_core::textprep::GazetteerRecognizer;

use super::{err, Outcome};

/// Trained desk-scale model shared by the training and benchmark criteria.
struct Desk {
    _dir: tempfile::TempDir,
    heldout: DatasetSplit,
    heads: ProjectionHeads,
    detection: DetectionConfig,
}

static DESK: Mutex<Option<Desk>> = Mutex::new(None);

const EVAL_SEED: u64 = 99;

pub fn p5_grounding_ablation() -> Result<Outcome, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let refs = write_grounding_corpus(dir.path(), 560, 5).map_err(err)?;
    let all = GroundingSplit::load(&refs).map_err(err)?;
    let (train_g, rest) = all.partition(400);
    let (val_g, test_g) = rest.partition(60);
    let train_split = train_g.to_caption_split(SplitName::Train).map_err(err)?;
    let val_split = val_g.to_caption_split(SplitName::Val).map_err(err)?;
    let test_split = test_g.to_caption_split(SplitName::Val).map_err(err)?;
    let cache = FeatureCache::create(dir.path().join("cache")).map_err(err)?;
    let data = AblationData {
        adapters: Arc::new(Adapters::builtin()),
        detection: DetectionConfig::default(),
        train: &train_split,
        val: &val_split,
        eval: &test_split,
        eval_seed: EVAL_SEED,
        grounding: Some(&test_g),
        triplets: None,
        thresholds: Thresholds::default(),
        cache: CacheMode::ReadWrite(&cache),
    };
    let config = |tag: &str, box_source| AblationConfig {
        tag: tag.into(),
        box_source,
        train_fraction: 1.0,
        train: TrainConfig {
            max_epochs: 20,
            seed: 3,
            ..TrainConfig::default()
        },
        backbone_tag: None,
        embedder_tag: None,
    };
    let results = ablation_run(
        &[config("bbox_pred", BoxSource::Predicted), config("full_image", BoxSource::FullImage)],
        &data,
    )
    .map_err(err)?;
    cache.flush().map_err(err)?;
    let acc = |i: usize| results[i].report.match_accuracy.unwrap_or(0.0);
    let iou = |i: usize| results[i].report.object_iou.unwrap_or(0.0);
    let gap = acc(0) - acc(1);
    Ok(Outcome::new(
        gap >= 0.05,
        format!(
            "grounding ablation: {} expressions ({} train / {} test); match acc bbox {:.3} vs full image {:.3}, gap {gap:.3} (need >= 0.05); object iou {:.3} vs {:.3}",
            all.items.len(),
            train_g.items.len(),
            test_g.items.len(),
            acc(0),
            acc(1),
            iou(0),
            iou(1)
        ),
    )
    .within(3600.0))
}

fn desk_training() -> Result<(Desk, String, bool), String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = SynthConfig {
        n_train: 5000,
        n_val: 500,
        n_heldout: 300,
        captions_per_image: 2,
        seed: 2024,
        ..SynthConfig::default()
    };
    let corpus = write_captioned_corpus(dir.path(), &cfg).map_err(err)?;
    let train_split = load_split(&corpus.train, SplitName::Train).map_err(err)?;
    let val_split = load_split(&corpus.val, SplitName::Val).map_err(err)?;
    let heldout = load_split(&corpus.heldout, SplitName::Val).map_err(err)?;
    let adapters = Adapters::builtin();
    let detection = DetectionConfig::default();
    let train_cfg = TrainConfig {
        max_epochs: 20,
        seed: 11,
        ..TrainConfig::default()
    };
    let ner = train_cfg.augment.ner;

    // One extraction pass fills the cache; training then reads it only.
    let cache_dir = dir.path().join("cache");
    let cache = FeatureCache::create(&cache_dir).map_err(err)?;
    for split in [&train_split, &val_split] {
        build_training_data(split, &adapters, &detection, BoxSource::Predicted, ner, 0, CacheMode::ReadWrite(&cache))
            .map_err(err)?;
    }
    cache.flush().map_err(err)?;
    let cache = FeatureCache::open(&cache_dir).map_err(err)?;
    let ro = CacheMode::ReadOnly(&cache);
    let (tf, tp) = build_training_data(&train_split, &adapters, &detection, BoxSource::Predicted, ner, train_cfg.seed, ro)
        .map_err(err)?;
    let (vf, vp) =
        build_training_data(&val_split, &adapters, &detection, BoxSource::Predicted, ner, EVAL_SEED, ro).map_err(err)?;

    let init = ProjectionHeads::init(adapters.head_dims(train_cfg.hidden_dim), train_cfg.seed);
    let ckpt = CheckpointConfig::new(init.dims(), adapters.tags(), detection);
    let (heads, report) = train(
        &train_cfg,
        TrainingData {
            objects: &tf,
            pairs: &tp,
        },
        TrainingData {
            objects: &vf,
            pairs: &vp,
        },
        init,
        Some((&dir.path().join("checkpoint"), &ckpt)),
    )
    .map_err(err)?;

    let (hf, hp) = build_training_data(&heldout, &adapters, &detection, BoxSource::Predicted, ner, EVAL_SEED, CacheMode::Off)
        .map_err(err)?;
    let acc = match_accuracy(
        &heads,
        TrainingData {
            objects: &hf,
            pairs: &hp,
        },
    )
    .map_err(err)?;
    let best: Vec<f64> = report.epochs.iter().map(|e| e.best_val_loss).collect();
    let monotone = best.windows(2).all(|w| w[1] <= w[0]);
    let epochs = report.epochs.len();
    let pass = acc >= 0.65 && monotone && epochs <= 20;
    let detail = format!(
        "desk training: {} train pairs, {epochs} epochs (best {}), held-out match acc {acc:.3} over {} pairs (need >= 0.65), best-so-far val loss monotone {monotone}, lr {:.0e} -> {:.0e}",
        tp.len(),
        report.best_epoch,
        hp.len(),
        report.epochs.first().map(|e| e.learning_rate).unwrap_or(0.0),
        report.epochs.last().map(|e| e.learning_rate).unwrap_or(0.0),
    );
    Ok((
        Desk {
            _dir: dir,
            heldout,
            heads,
            detection,
        },
        detail,
        pass,
    ))
}

pub fn p6_desk_training() -> Result<Outcome, String> {
    let (desk, detail, pass) = desk_training()?;
    *DESK.lock().map_err(err)? = Some(desk);
    Ok(Outcome::new(pass, detail).within(7200.0))
}

pub fn p7_synthetic_ooc() -> Result<Outcome, String> {
    let desk = match DESK.lock().map_err(err)?.take() {
        Some(d) => d,
        None => desk_training()?.0,
    };
    let ner = GazetteerRecognizer::default();
    let built = build_synthetic_ooc(
        &desk.heldout,
        &BlobDetector::default(),
        &desk.detection,
        &ner,
        &Paraphraser::default(),
        17,
        Some(100),
    )
    .map_err(err)?;
    let n = built.triplets.len();
    let n_ooc = built.triplets.iter().filter(|t| t.label.is_some_and(|l| l.is_ooc())).count();
    let split = DatasetSplit::from_triplets(built.triplets, desk.heldout.root.clone()).map_err(err)?;
    let detector = OocDetector::new(Adapters::builtin(), desk.heads, desk.detection).map_err(err)?;
    let verdicts = triplet_verdicts(&detector, &split, Thresholds::default()).map_err(err)?;
    let labels: Vec<OocLabel> = split.triplets().iter().map(|t| t.label.expect("labeled")).collect();
    let preds: Vec<bool> = verdicts.iter().map(|v| v.ooc).collect();
    let flipped: Vec<bool> = preds.iter().map(|p| !p).collect();
    let report = context_report("synthetic", &preds, &labels).map_err(err)?;
    let inverted = context_report("inverted", &flipped, &labels).map_err(err)?;
    let c = report.confusion;
    let acc = report.context_accuracy.unwrap_or(0.0);
    let acc_inv = inverted.context_accuracy.unwrap_or(0.0);
    let identity = acc + acc_inv == 1.0;
    Ok(Outcome::new(
        n == 200 && n_ooc == 100 && acc >= 0.70 && identity,
        format!(
            "synthetic benchmark: {n} triplets ({n_ooc} out of context), context acc {acc:.3} (need >= 0.70), tp {} fp {} tn {} fn {}, acc + inverted = {}",
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            acc + acc_inv
        ),
    ))
}

/// Drops state kept between criteria.
pub fn cleanup() {
    if let Ok(mut d) = DESK.lock() {
        d.take();
    }
}
