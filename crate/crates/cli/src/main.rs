//! `cosmos`: operator entry points for the out-of-context detection
//! pipeline.
//!
//! Exit codes: 0 success (and "not out of context" for `predict`), 1 other
//! failures, 2 dataset schema violation, 3 missing feature cache, 4
//! checkpoint or config mismatch, 10 `predict` verdict out of context, 64
//! usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use cosmos_core::ooc::Thresholds;
use cosmos_core::pipeline::BoxSource;
use cosmos_core::synth::SynthConfig;
use cosmos_service::{ApiError, ServiceConfig};

use commands::*;
use config::TrainOverrides;

const EXIT_USAGE: u8 = 64;
const EXIT_SCHEMA: u8 = 2;
const EXIT_MISSING_CACHE: u8 = 3;
const EXIT_MISMATCH: u8 = 4;

#[derive(Parser)]
#[command(name = "cosmos", version, about = "Object-level caption grounding and out-of-context detection")]
struct Cli {
    /// Log filter, e.g. `info` or `cosmos_core=debug` (also RUST_LOG).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum BoxSourceArg {
    Predicted,
    FullImage,
    GroundTruth,
}

impl From<BoxSourceArg> for BoxSource {
    fn from(b: BoxSourceArg) -> Self {
        match b {
            BoxSourceArg::Predicted => BoxSource::Predicted,
            BoxSourceArg::FullImage => BoxSource::FullImage,
            BoxSourceArg::GroundTruth => BoxSource::GroundTruth,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Strip credits and replace named entities in every caption of a dataset file.
    Preprocess {
        /// Input dataset JSON Lines (image records or triplets).
        #[arg(long = "in")]
        input: PathBuf,
        /// Output path; records keep their order, captions become clean text.
        #[arg(long)]
        out: PathBuf,
        /// Credit patterns file, one regex per line.
        #[arg(long)]
        credits_patterns: Option<PathBuf>,
        /// Extra gazetteer entries (TSV `phrase<TAB>label`).
        #[arg(long)]
        gazetteer: Option<PathBuf>,
    },
    /// Detect boxes, pool region features and embed captions into a feature cache.
    ExtractFeatures {
        /// Image split(s) to extract; repeatable.
        #[arg(long = "split", required = true)]
        splits: Vec<PathBuf>,
        /// Cache directory (created if absent).
        #[arg(long)]
        cache: PathBuf,
        /// Parallel extraction threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_enum, default_value = "predicted")]
        box_source: BoxSourceArg,
        /// Embed raw captions instead of entity-replaced ones.
        #[arg(long)]
        no_ner: bool,
        /// Detection confidence floor.
        #[arg(long)]
        c_min: Option<f64>,
        /// Boxes kept per image.
        #[arg(long)]
        n_max: Option<usize>,
    },
    /// Train the projection heads from cached features.
    Train {
        /// TOML config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Feature cache filled by `extract-features`.
        #[arg(long)]
        cache: PathBuf,
        /// Checkpoint output directory.
        #[arg(long)]
        out: PathBuf,
        /// Training split (overrides `train_split`).
        #[arg(long)]
        train: Option<PathBuf>,
        /// Validation split (overrides `val_split`).
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long, value_enum)]
        box_source: Option<BoxSourceArg>,
        /// Maximum epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Initial learning rate.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Hidden width of the object head.
        #[arg(long)]
        hidden_dim: Option<usize>,
        /// Ranking margin.
        #[arg(long)]
        margin: Option<f64>,
    },
    /// Compute one metric and print a CSV report (or JSON with --json).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image split (match), grounding refs file (iou) or labeled triplets (context).
        #[arg(long)]
        split: PathBuf,
        #[arg(long, value_enum)]
        metric: Metric,
        /// Feature cache to read for `match`.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Row label in the report.
        #[arg(long, default_value = "eval")]
        tag: String,
        /// IoU threshold for `context`.
        #[arg(long, default_value_t = 0.5)]
        t_iou: f64,
        /// Similarity threshold for `context`.
        #[arg(long, default_value_t = 0.5)]
        t_sim: f64,
    },
    /// Print the verdict for one image and two captions; exit 10 if out of context.
    Predict {
        #[arg(long, env = "COSMOS_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        c1: String,
        #[arg(long)]
        c2: String,
        /// IoU threshold.
        #[arg(long, default_value_t = 0.5)]
        t_iou: f64,
        /// Similarity threshold.
        #[arg(long, default_value_t = 0.5)]
        t_sim: f64,
    },
    /// Run the HTTP service. Unset flags fall back to COSMOS_* variables.
    Serve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// SQLite database path.
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Review UI bundle directory served under /ui.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Queue triplets for review, precomputing verdicts when a checkpoint is given.
    SeedQueue {
        /// Triplet JSON Lines; labels optional.
        #[arg(long)]
        triplets: PathBuf,
        #[arg(long, env = "COSMOS_DB_PATH", default_value = "cosmos.sqlite")]
        db: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory image paths are relative to (default: the triplets file's).
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Render a procedural demo corpus: splits, labeled triplets, grounding refs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 40)]
        val: usize,
        #[arg(long, default_value_t = 40)]
        heldout: usize,
        #[arg(long, default_value_t = 2)]
        captions_per_image: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Images used for labeled triplets (default: all held-out).
        #[arg(long)]
        ooc_images: Option<usize>,
        /// Images in an additional grounding corpus.
        #[arg(long, default_value_t = 0)]
        grounding_images: usize,
    },
}

fn thresholds(t_iou: f64, t_sim: f64) -> Result<Thresholds> {
    Ok(Thresholds::new(t_iou, t_sim).map_err(|e| cosmos_core::Error::Config(e.to_string()))?)
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Preprocess {
            input,
            out,
            credits_patterns,
            gazetteer,
        } => {
            let s = preprocess_file(&input, &out, credits_patterns.as_deref(), gazetteer.as_deref())?;
            print_json(&s)?;
        }
        Command::ExtractFeatures {
            splits,
            cache,
            workers,
            box_source,
            no_ner,
            c_min,
            n_max,
        } => {
            if let Some(n) = workers {
                rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
            }
            let s = extract_features(ExtractArgs {
                splits: &splits,
                cache: &cache,
                box_source: box_source.into(),
                ner: !no_ner,
                c_min,
                n_max,
            })?;
            print_json(&s)?;
        }
        Command::Train {
            config,
            cache,
            out,
            train,
            val,
            box_source,
            epochs,
            lr,
            batch_size,
            seed,
            hidden_dim,
            margin,
        } => {
            let flags = TrainOverrides {
                train_split: train,
                val_split: val,
                box_source: box_source.map(Into::into),
                epochs,
                learning_rate: lr,
                batch_size,
                seed,
                hidden_dim,
                margin,
            };
            let report = train_command(config.as_deref(), flags, &cache, &out)?;
            print_json(&report)?;
        }
        Command::Eval {
            checkpoint,
            split,
            metric,
            cache,
            json,
            report,
            tag,
            t_iou,
            t_sim,
        } => {
            let r = eval_command(EvalArgs {
                checkpoint: &checkpoint,
                split: &split,
                metric,
                cache: cache.as_deref(),
                thresholds: thresholds(t_iou, t_sim)?,
                tag: &tag,
            })?;
            let text = eval_output(&r, json)?;
            if let Some(path) = report {
                std::fs::write(path, &text)?;
            }
            print!("{text}");
        }
        Command::Predict {
            checkpoint,
            image,
            c1,
            c2,
            t_iou,
            t_sim,
        } => {
            let v = predict_command(&checkpoint, &image, &c1, &c2, thresholds(t_iou, t_sim)?)?;
            print_json(&v)?;
            return Ok(if v.ooc { EXIT_OOC } else { 0 });
        }
        Command::Serve {
            checkpoint,
            db,
            port,
            host,
            ui_dir,
        } => {
            let mut cfg = ServiceConfig::from_env().map_err(cosmos_core::Error::Config)?;
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            cfg.db_path = db.unwrap_or(cfg.db_path);
            cfg.port = port.unwrap_or(cfg.port);
            cfg.ui_dir = ui_dir.or(cfg.ui_dir);
            serve_command(cfg, &host)?;
        }
        Command::SeedQueue {
            triplets,
            db,
            checkpoint,
            root,
        } => {
            let r = seed_command(&triplets, &db, checkpoint.as_deref(), root.as_deref())?;
            print_json(&r)?;
        }
        Command::Synth {
            out,
            train,
            val,
            heldout,
            captions_per_image,
            seed,
            ooc_images,
            grounding_images,
        } => {
            let s = synth_command(SynthArgs {
                out: &out,
                config: SynthConfig {
                    n_train: train,
                    n_val: val,
                    n_heldout: heldout,
                    captions_per_image,
                    seed,
                    ..SynthConfig::default()
                },
                ooc_images,
                grounding_images,
            })?;
            print_json(&s)?;
        }
    }
    Ok(0)
}

/// Maps the first recognised error in the chain to its exit code.
fn exit_code(e: &anyhow::Error) -> u8 {
    use cosmos_core::Error as E;
    for cause in e.chain() {
        if let Some(mut core) = cause.downcast_ref::<E>() {
            while let E::Stage { source, .. } = core {
                core = source;
            }
            return match core {
                E::Parse { .. } | E::Invalid(_) | E::DuplicateImageId(_) | E::Json(_) => EXIT_SCHEMA,
                E::MissingFeatures(_) => EXIT_MISSING_CACHE,
                E::Checkpoint(_) | E::Config(_) => EXIT_MISMATCH,
                _ => 1,
            };
        }
        if let Some(api) = cause.downcast_ref::<ApiError>() {
            return if api.status.as_u16() == 400 { EXIT_SCHEMA } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(&cli.log));
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_env_filter(filter).init();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
