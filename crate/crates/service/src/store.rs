use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use cosmos_core::corpus::{AnnotationRecord, AnnotationStore, HumanLabel, TestTriplet, TripletRef};
use cosmos_core::ooc::Verdict;
use rusqlite::{params, Connection, OptionalExtension, TransactionBehavior};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS images (
    image_id TEXT PRIMARY KEY,
    path TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS queue (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    image_id TEXT NOT NULL,
    c1_sha256 TEXT NOT NULL,
    c2_sha256 TEXT NOT NULL,
    triplet TEXT NOT NULL,
    verdict TEXT,
    status TEXT NOT NULL DEFAULT 'pending',
    assigned_to TEXT,
    annotation_id INTEGER REFERENCES annotations(id),
    UNIQUE (image_id, c1_sha256, c2_sha256)
);
CREATE TABLE IF NOT EXISTS annotations (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    image_id TEXT NOT NULL,
    c1_sha256 TEXT NOT NULL,
    c2_sha256 TEXT NOT NULL,
    human_label TEXT NOT NULL,
    annotator_id TEXT NOT NULL,
    timestamp TEXT NOT NULL,
    note TEXT
);
CREATE UNIQUE INDEX IF NOT EXISTS one_label_per_annotator
    ON annotations (image_id, c1_sha256, c2_sha256, annotator_id)
    WHERE human_label != 'skip';
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueStatus {
    Pending,
    Reviewed,
    Skipped,
}

impl QueueStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QueueStatus::Pending => "pending",
            QueueStatus::Reviewed => "reviewed",
            QueueStatus::Skipped => "skipped",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pending" => Some(QueueStatus::Pending),
            "reviewed" => Some(QueueStatus::Reviewed),
            "skipped" => Some(QueueStatus::Skipped),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub seq: i64,
    pub triplet_ref: TripletRef,
    pub triplet: TestTriplet,
    pub verdict: Option<Verdict>,
    pub status: QueueStatus,
    pub assigned_to: Option<String>,
    pub annotation_id: Option<i64>,
}

/// Where [`SqliteStore::annotate`] aborts the process, for crash-recovery
/// tests.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    BeforeCommit,
    AfterCommit,
}

/// Queue and annotation storage in one SQLite database (WAL, full sync).
/// A label and the queue status change it causes commit in one
/// transaction.
pub struct SqliteStore {
    conn: Mutex<Connection>,
    path: PathBuf,
    crash: Option<CrashPoint>,
}

fn db_err(e: rusqlite::Error) -> ApiError {
    ApiError::internal(format!("database: {e}"))
}

fn json_err(e: serde_json::Error) -> ApiError {
    ApiError::internal(format!("stored json: {e}"))
}

impl SqliteStore {
    pub fn open(path: impl AsRef<Path>) -> ApiResult<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| ApiError::internal(e.to_string()))?;
        }
        let conn = Connection::open(&path).map_err(db_err)?;
        conn.pragma_update(None, "journal_mode", "WAL").map_err(db_err)?;
        conn.pragma_update(None, "synchronous", "FULL").map_err(db_err)?;
        conn.pragma_update(None, "foreign_keys", "ON").map_err(db_err)?;
        conn.busy_timeout(std::time::Duration::from_secs(5)).map_err(db_err)?;
        conn.execute_batch(SCHEMA).map_err(db_err)?;
        Ok(Self {
            conn: Mutex::new(conn),
            path,
            crash: None,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    #[doc(hidden)]
    pub fn inject_crash(&mut self, point: CrashPoint) {
        self.crash = Some(point);
    }

    fn conn(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn register_image(&self, image_id: &str, path: &Path) -> ApiResult<()> {
        self.conn()
            .execute(
                "INSERT INTO images (image_id, path) VALUES (?1, ?2)
                 ON CONFLICT (image_id) DO UPDATE SET path = excluded.path",
                params![image_id, path.to_string_lossy()],
            )
            .map_err(db_err)?;
        Ok(())
    }

    pub fn image_path(&self, image_id: &str) -> ApiResult<Option<PathBuf>> {
        self.conn()
            .query_row("SELECT path FROM images WHERE image_id = ?1", [image_id], |r| r.get::<_, String>(0))
            .optional()
            .map(|p| p.map(PathBuf::from))
            .map_err(db_err)
    }

    /// Appends a triplet; an already queued triplet is left untouched.
    /// Returns whether a row was added.
    pub fn enqueue(&self, triplet: &TestTriplet, image_path: &Path, verdict: Option<&Verdict>) -> ApiResult<bool> {
        let r = TripletRef::of(triplet);
        let mut conn = self.conn();
        let tx = conn.transaction().map_err(db_err)?;
        tx.execute(
            "INSERT INTO images (image_id, path) VALUES (?1, ?2)
             ON CONFLICT (image_id) DO UPDATE SET path = excluded.path",
            params![triplet.image_id, image_path.to_string_lossy()],
        )
        .map_err(db_err)?;
        let added = tx
            .execute(
                "INSERT OR IGNORE INTO queue (image_id, c1_sha256, c2_sha256, triplet, verdict)
                 VALUES (?1, ?2, ?3, ?4, ?5)",
                params![
                    r.image_id,
                    r.c1_sha256,
                    r.c2_sha256,
                    serde_json::to_string(triplet).map_err(json_err)?,
                    verdict.map(serde_json::to_string).transpose().map_err(json_err)?,
                ],
            )
            .map_err(db_err)?;
        tx.commit().map_err(db_err)?;
        Ok(added == 1)
    }

    pub fn queue(&self, status: Option<QueueStatus>, limit: usize) -> ApiResult<Vec<QueueItem>> {
        let conn = self.conn();
        let mut stmt = conn
            .prepare(
                "SELECT seq, image_id, c1_sha256, c2_sha256, triplet, verdict, status, assigned_to, annotation_id
                 FROM queue WHERE (?1 IS NULL OR status = ?1) ORDER BY seq LIMIT ?2",
            )
            .map_err(db_err)?;
        let rows = stmt
            .query_map(params![status.map(QueueStatus::as_str), limit as i64], |row| {
                Ok((
                    row.get::<_, i64>(0)?,
                    TripletRef {
                        image_id: row.get(1)?,
                        c1_sha256: row.get(2)?,
                        c2_sha256: row.get(3)?,
                    },
                    row.get::<_, String>(4)?,
                    row.get::<_, Option<String>>(5)?,
                    row.get::<_, String>(6)?,
                    row.get::<_, Option<String>>(7)?,
                    row.get::<_, Option<i64>>(8)?,
                ))
            })
            .map_err(db_err)?;
        let mut out = Vec::new();
        for row in rows {
            let (seq, triplet_ref, triplet, verdict, status, assigned_to, annotation_id) = row.map_err(db_err)?;
            out.push(QueueItem {
                seq,
                triplet_ref,
                triplet: serde_json::from_str(&triplet).map_err(json_err)?,
                verdict: verdict.as_deref().map(serde_json::from_str).transpose().map_err(json_err)?,
                status: QueueStatus::parse(&status)
                    .ok_or_else(|| ApiError::internal(format!("unknown stored status {status:?}")))?,
                assigned_to,
                annotation_id,
            });
        }
        Ok(out)
    }

    pub fn count(&self, status: QueueStatus) -> ApiResult<usize> {
        self.conn()
            .query_row("SELECT COUNT(*) FROM queue WHERE status = ?1", [status.as_str()], |r| r.get::<_, i64>(0))
            .map(|n| n as usize)
            .map_err(db_err)
    }

    /// Stores a label and moves the queue item out of `pending` in the
    /// same transaction. 404 for an unknown triplet, 409 for a second
    /// non-skip label by the same annotator.
    pub fn annotate(&self, mut record: AnnotationRecord) -> ApiResult<AnnotationRecord> {
        let r = &record.triplet_ref;
        let mut conn = self.conn();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate).map_err(db_err)?;
        let seq: Option<(i64, String)> = tx
            .query_row(
                "SELECT seq, status FROM queue WHERE image_id = ?1 AND c1_sha256 = ?2 AND c2_sha256 = ?3",
                params![r.image_id, r.c1_sha256, r.c2_sha256],
                |row| Ok((row.get(0)?, row.get(1)?)),
            )
            .optional()
            .map_err(db_err)?;
        let Some((seq, status)) = seq else {
            return Err(ApiError::not_found("triplet not in queue"));
        };
        if record.human_label != HumanLabel::Skip {
            let taken: bool = tx
                .query_row(
                    "SELECT EXISTS (SELECT 1 FROM annotations WHERE image_id = ?1 AND c1_sha256 = ?2
                     AND c2_sha256 = ?3 AND annotator_id = ?4 AND human_label != 'skip')",
                    params![r.image_id, r.c1_sha256, r.c2_sha256, record.annotator_id],
                    |row| row.get(0),
                )
                .map_err(db_err)?;
            if taken {
                return Err(ApiError::conflict(format!(
                    "{} already labeled this triplet",
                    record.annotator_id
                )));
            }
        }
        // Timestamps stay strictly increasing per annotator.
        let last: Option<String> = tx
            .query_row(
                "SELECT MAX(timestamp) FROM annotations WHERE annotator_id = ?1",
                [&record.annotator_id],
                |row| row.get(0),
            )
            .map_err(db_err)?;
        if let Some(last) = last.as_deref().and_then(|t| t.parse::<DateTime<Utc>>().ok()) {
            if record.timestamp <= last {
                record.timestamp = last + chrono::Duration::microseconds(1);
            }
        }
        tx.execute(
            "INSERT INTO annotations (image_id, c1_sha256, c2_sha256, human_label, annotator_id, timestamp, note)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
            params![
                r.image_id,
                r.c1_sha256,
                r.c2_sha256,
                record.human_label.as_str(),
                record.annotator_id,
                timestamp_text(&record.timestamp),
                record.note,
            ],
        )
        .map_err(db_err)?;
        let id = tx.last_insert_rowid();
        if status == QueueStatus::Pending.as_str() {
            let next = match record.human_label {
                HumanLabel::Skip => QueueStatus::Skipped,
                _ => QueueStatus::Reviewed,
            };
            let annotation = (next == QueueStatus::Reviewed).then_some(id);
            tx.execute(
                "UPDATE queue SET status = ?1, annotation_id = ?2 WHERE seq = ?3",
                params![next.as_str(), annotation, seq],
            )
            .map_err(db_err)?;
        } else if status == QueueStatus::Skipped.as_str() && record.human_label != HumanLabel::Skip {
            tx.execute(
                "UPDATE queue SET status = 'reviewed', annotation_id = ?1 WHERE seq = ?2",
                params![id, seq],
            )
            .map_err(db_err)?;
        }
        if self.crash == Some(CrashPoint::BeforeCommit) {
            std::process::abort();
        }
        tx.commit().map_err(db_err)?;
        if self.crash == Some(CrashPoint::AfterCommit) {
            std::process::abort();
        }
        Ok(record)
    }

    pub fn all_annotations(&self) -> ApiResult<Vec<AnnotationRecord>> {
        let conn = self.conn();
        let mut stmt = conn
            .prepare(
                "SELECT image_id, c1_sha256, c2_sha256, human_label, annotator_id, timestamp, note
                 FROM annotations ORDER BY id",
            )
            .map_err(db_err)?;
        let rows = stmt
            .query_map([], |row| {
                Ok((
                    TripletRef {
                        image_id: row.get(0)?,
                        c1_sha256: row.get(1)?,
                        c2_sha256: row.get(2)?,
                    },
                    row.get::<_, String>(3)?,
                    row.get::<_, String>(4)?,
                    row.get::<_, String>(5)?,
                    row.get::<_, Option<String>>(6)?,
                ))
            })
            .map_err(db_err)?;
        let mut out = Vec::new();
        for row in rows {
            let (triplet_ref, label, annotator_id, ts, note) = row.map_err(db_err)?;
            out.push(AnnotationRecord {
                triplet_ref,
                human_label: label.parse().map_err(|e: cosmos_core::Error| ApiError::internal(e.to_string()))?,
                annotator_id,
                timestamp: ts
                    .parse()
                    .map_err(|e: chrono::ParseError| ApiError::internal(format!("stored timestamp: {e}")))?,
                note,
            });
        }
        Ok(out)
    }
}

/// Fixed-width RFC 3339 so that text order equals time order.
fn timestamp_text(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::Nanos, true)
}

impl AnnotationStore for SqliteStore {
    fn annotations(&self) -> cosmos_core::Result<Vec<AnnotationRecord>> {
        self.all_annotations().map_err(|e| cosmos_core::Error::Invalid(e.message))
    }

    fn insert(&mut self, record: AnnotationRecord) -> cosmos_core::Result<AnnotationRecord> {
        self.annotate(record).map_err(|e| match e.status.as_u16() {
            409 => cosmos_core::Error::Conflict(e.message),
            _ => cosmos_core::Error::Invalid(e.message),
        })
    }
}
