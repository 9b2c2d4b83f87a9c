//! HTTP front end for the out-of-context detector: verdicts, a triage
//! queue with precomputed verdicts, durable annotations and the static
//! review UI.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/predict` | JSON or multipart; returns a verdict |
//! | GET | `/queue?status=&limit=&t_i=&t_s=` | queued triplets in insertion order |
//! | POST | `/annotations` | stores a label, 201 |
//! | GET | `/export` | annotations as JSON Lines |
//! | GET | `/grounding/{image_id}?caption=` | boxes and per-box scores |
//! | GET | `/images/{image_id}` | image bytes |
//! | GET | `/health` | no auth |
//! | GET | `/ui` | static bundle from `COSMOS_UI_DIR`, no auth |

mod api;
mod config;
mod error;
mod seed;
mod store;

pub use api::{router, serve, AppState, PredictRequest};
pub use config::ServiceConfig;
pub use error::{ApiError, ApiResult};
pub use seed::{read_triplets, seed_queue, SeedReport};
pub use store::{CrashPoint, QueueItem, QueueStatus, SqliteStore};
