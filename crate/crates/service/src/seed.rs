use std::fs;
use std::path::Path;

use cosmos_core::corpus::TestTriplet;
use cosmos_core::ooc::Thresholds;
use cosmos_core::pipeline::{load_image, OocDetector};

use crate::error::{ApiError, ApiResult};
use crate::store::SqliteStore;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SeedReport {
    pub added: usize,
    pub already_queued: usize,
    pub with_verdict: usize,
}

/// Reads triplet JSON Lines; unlike a test split, labels are optional.
pub fn read_triplets(path: impl AsRef<Path>) -> ApiResult<Vec<TestTriplet>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ApiError::bad_request(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let t: TestTriplet = serde_json::from_str(l)
                .map_err(|e| ApiError::bad_request(format!("{}:{}: {e}", path.display(), i + 1)))?;
            t.validate()
                .map_err(|e| ApiError::bad_request(format!("{}:{}: {e}", path.display(), i + 1)))?;
            Ok(t)
        })
        .collect()
}

/// Queues triplets, precomputing each verdict at default thresholds when a
/// detector is given. Image paths resolve against `root`.
pub fn seed_queue(
    store: &SqliteStore,
    detector: Option<&OocDetector>,
    triplets: &[TestTriplet],
    root: &Path,
) -> ApiResult<SeedReport> {
    let mut report = SeedReport::default();
    for t in triplets {
        let path = root.join(&t.image_path);
        let path = path.canonicalize().unwrap_or(path);
        let verdict = match detector {
            Some(d) => {
                let image = load_image(&path)?;
                Some(d.detect(&t.image_id, &image, &t.caption1.text, &t.caption2.text, Thresholds::default())?)
            }
            None => None,
        };
        report.with_verdict += verdict.is_some() as usize;
        if store.enqueue(t, &path, verdict.as_ref())? {
            report.added += 1;
        } else {
            report.already_queued += 1;
        }
    }
    Ok(report)
}
