//! Dataset schema, split loading, self-supervised pair sampling and
//! annotation persistence.
//!
//! Splits are JSON Lines files, one record per line. Train and validation
//! lines are [`ImageRecord`]s; test lines are [`TestTriplet`]s. Image files
//! are referenced by a path relative to the split file.

mod annotations;
mod import;
mod pairs;
mod records;
mod split;

pub use annotations::{
    annotations_jsonl, export_annotations, load_annotations, AnnotationRecord, AnnotationStore, HumanLabel,
    MemoryAnnotationStore, TripletRef,
};
pub use import::{import_external, ExternalRecord, ImportReport, ImportTarget};
pub use pairs::{epoch_order, make_train_pairs, TrainPair, TrainPairs};
pub use records::{CaptionRecord, ImageRecord, OocLabel, RetrievedVia, TestTriplet};
pub use split::{load_split, write_split, DatasetSplit, LoadWarning, SplitName, SplitRecords};
