//! Object-level image-caption grounding and out-of-context caption detection.
//!
//! The crate is organised the way the pipeline runs:
//!
//! * [`corpus`] loads and validates dataset splits, samples self-supervised
//!   (matching, random) caption pairs and stores human annotations.
//! * [`textprep`] strips source credits and replaces named entities with
//!   hypernym tokens.
//! * [`encoders`] detects object boxes, pools region features from a frozen
//!   backbone, embeds captions and projects both sides into a shared space.
//! * [`matcher`] scores captions against boxes and trains the projection
//!   heads with a max-margin objective.
//! * [`ooc`] turns two groundings plus caption similarity into a verdict.
//! * [`eval`] computes match accuracy, object IoU and context accuracy, and
//!   builds the synthetic benchmark used for desk-scale runs.
//! * [`synth`] renders the procedural scene world used by tests and demos.
//! * [`pipeline`] wires the adapters and trained heads into one detector.

pub mod corpus;
pub mod encoders;
mod error;
pub mod eval;
pub mod matcher;
pub mod ooc;
pub mod pipeline;
pub mod synth;
pub mod textprep;
pub mod util;

pub use error::{AdapterError, Error, Result};

/// Dimensionality of the shared object/caption embedding space.
pub const EMBED_DIM: usize = 300;
/// Dimensionality of raw sentence vectors produced by the sentence embedder.
pub const SENTENCE_DIM: usize = 512;
/// Maximum number of object boxes kept per image.
pub const MAX_BOXES: usize = 10;
