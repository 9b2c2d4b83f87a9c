use std::path::Path;
use std::process::Command;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use chrono::Utc;
use cosmos_core::corpus::{
    annotations_jsonl, load_annotations, load_split, AnnotationRecord, CaptionRecord, HumanLabel, SplitName,
    TestTriplet, TripletRef,
};
use cosmos_core::encoders::{save_checkpoint, CheckpointConfig, DetectionConfig, ProjectionHeads};
use cosmos_core::ooc::Thresholds;
use cosmos_core::pipeline::{detect_ooc, load_image, Adapters, OocDetector};
use cosmos_core::synth::{write_captioned_corpus, SynthConfig};
use cosmos_service::{router, seed_queue, AppState, CrashPoint, QueueStatus, SqliteStore};
use http_body_util::BodyExt;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tower::ServiceExt;

use super::{err, Outcome};

/// Set in a re-executed copy of this binary that should die mid-write.
pub const CRASH_ENV: &str = "COSMOS_ACCEPTANCE_CRASH";
const TOKEN: &str = "acceptance";
const N_FIXTURES: usize = 50;

fn crash_record(r: TripletRef) -> AnnotationRecord {
    AnnotationRecord {
        triplet_ref: r,
        human_label: HumanLabel::Ooc,
        annotator_id: "crash-test".into(),
        timestamp: Utc::now(),
        note: Some("written by a process that aborts".into()),
    }
}

/// Entry point of the child process: opens the store with a crash point
/// armed and writes one label. Never returns normally.
pub fn crash_child(arg: &str) -> ! {
    let run = || -> Result<(), String> {
        let mut parts = arg.splitn(3, '|');
        let (point, db, r) = (
            parts.next().ok_or("point")?,
            parts.next().ok_or("db")?,
            parts.next().ok_or("ref")?,
        );
        let mut store = SqliteStore::open(db).map_err(err)?;
        store.inject_crash(if point == "before" { CrashPoint::BeforeCommit } else { CrashPoint::AfterCommit });
        store
            .annotate(crash_record(serde_json::from_str(r).map_err(err)?))
            .map_err(err)?;
        Ok(())
    };
    match run() {
        Ok(()) => eprintln!("crash point did not fire"),
        Err(e) => eprintln!("crash child: {e}"),
    }
    std::process::exit(0)
}

fn run_crash_child(point: &str, db: &Path, r: &TripletRef) -> Result<bool, String> {
    let status = Command::new(std::env::current_exe().map_err(err)?)
        .env(CRASH_ENV, format!("{point}|{}|{}", db.display(), serde_json::to_string(r).map_err(err)?))
        .status()
        .map_err(err)?;
    // abort() ends in a signal, never a clean exit.
    Ok(!status.success())
}

fn integrity_ok(db: &Path) -> Result<bool, String> {
    let conn = rusqlite::Connection::open(db).map_err(err)?;
    let check: String = conn
        .query_row("PRAGMA integrity_check", [], |row| row.get(0))
        .map_err(err)?;
    Ok(check == "ok")
}

fn authed(req: axum::http::request::Builder) -> axum::http::request::Builder {
    req.header(header::AUTHORIZATION, format!("Bearer {TOKEN}"))
}

fn json_request(uri: &str, body: &serde_json::Value) -> Result<Request<Body>, String> {
    authed(Request::post(uri))
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(serde_json::to_vec(body).map_err(err)?))
        .map_err(err)
}

fn multipart_request(fields: &[(&str, String)], image: &[u8]) -> Result<Request<Body>, String> {
    let boundary = "acceptance-boundary";
    let mut body = Vec::new();
    for (k, v) in fields {
        body.extend_from_slice(format!("--{boundary}\r\nContent-Disposition: form-data; name=\"{k}\"\r\n\r\n{v}\r\n").as_bytes());
    }
    body.extend_from_slice(
        format!("--{boundary}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"f.png\"\r\nContent-Type: image/png\r\n\r\n")
            .as_bytes(),
    );
    body.extend_from_slice(image);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    authed(Request::post("/predict"))
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .map_err(err)
}

async fn send(app: &Router, req: Request<Body>) -> Result<(StatusCode, Vec<u8>), String> {
    let res = app.clone().oneshot(req).await.map_err(err)?;
    let status = res.status();
    let body = res.into_body().collect().await.map_err(err)?.to_bytes().to_vec();
    Ok((status, body))
}

fn fixtures(dir: &Path) -> Result<(Vec<TestTriplet>, std::path::PathBuf), String> {
    let corpus = write_captioned_corpus(
        dir,
        &SynthConfig {
            n_train: 1,
            n_val: 1,
            n_heldout: N_FIXTURES,
            captions_per_image: 2,
            seed: 909,
            ..SynthConfig::default()
        },
    )
    .map_err(err)?;
    let split = load_split(&corpus.heldout, SplitName::Val).map_err(err)?;
    let images = split.images();
    let triplets = images
        .iter()
        .enumerate()
        .map(|(i, r)| TestTriplet {
            image_id: r.image_id.clone(),
            image_path: r.image_path.clone(),
            caption1: r.captions[0].clone(),
            caption2: if i % 2 == 0 {
                r.captions[1].clone()
            } else {
                CaptionRecord::new(images[(i + 7) % images.len()].captions[0].text.clone(), "wire")
            },
            label: None,
            missing_image: false,
        })
        .collect();
    Ok((triplets, split.root.clone()))
}

pub fn p9_service() -> Result<Outcome, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let (triplets, root) = fixtures(dir.path())?;

    let adapters = Adapters::builtin();
    let heads = ProjectionHeads::init(adapters.head_dims(1024), 41);
    let ckpt = dir.path().join("ckpt");
    let cfg = CheckpointConfig::new(heads.dims(), adapters.tags(), DetectionConfig::default());
    save_checkpoint(&ckpt, &heads, &cfg).map_err(err)?;
    let library = OocDetector::from_checkpoint(&ckpt, Adapters::builtin()).map_err(err)?;
    let served = OocDetector::from_checkpoint(&ckpt, Adapters::builtin()).map_err(err)?;

    let db = dir.path().join("service.sqlite");
    let store = SqliteStore::open(&db).map_err(err)?;
    seed_queue(&store, Some(&library), &triplets, &root).map_err(err)?;
    drop(store);

    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(err)?;

    // Parity: every fifth fixture goes through the multipart upload path.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut identical = 0;
    let mut n_ooc = 0;
    let mut first_mismatch = None;
    {
        let store = SqliteStore::open(&db).map_err(err)?;
        let app = router(AppState::new(Some(served), store, Some(TOKEN.into()), 1 << 20), None);
        for (i, t) in triplets.iter().enumerate() {
            let thresholds = if i % 3 == 0 {
                Thresholds::default()
            } else {
                Thresholds::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)).map_err(err)?
            };
            let path = root.join(&t.image_path);
            let want = detect_ooc(
                &library,
                &t.image_id,
                &load_image(&path).map_err(err)?,
                &t.caption1.text,
                &t.caption2.text,
                thresholds,
            )
            .map_err(err)?;
            let req = if i % 5 == 4 {
                multipart_request(
                    &[
                        ("image_id", t.image_id.clone()),
                        ("caption1", t.caption1.text.clone()),
                        ("caption2", t.caption2.text.clone()),
                        ("t_i", format!("{}", thresholds.t_i)),
                        ("t_s", format!("{}", thresholds.t_s)),
                    ],
                    &std::fs::read(&path).map_err(err)?,
                )?
            } else {
                json_request(
                    "/predict",
                    &json!({
                        "image_id": t.image_id,
                        "caption1": t.caption1.text,
                        "caption2": t.caption2.text,
                        "thresholds": thresholds,
                    }),
                )?
            };
            let (status, body) = rt.block_on(send(&app, req))?;
            let expected = serde_json::to_vec(&want).map_err(err)?;
            if status == StatusCode::OK && body == expected {
                identical += 1;
            } else if first_mismatch.is_none() {
                first_mismatch = Some(format!("{}: {status} {}", t.image_id, String::from_utf8_lossy(&body)));
            }
            n_ooc += want.ooc as usize;
        }
    }

    // Crash-restart: one abort before commit, one after.
    let before_ref = TripletRef::of(&triplets[0]);
    let after_ref = TripletRef::of(&triplets[1]);
    let aborted_before = run_crash_child("before", &db, &before_ref)?;
    let ok_before = integrity_ok(&db)?;
    let (rolled_back, pending_before) = {
        let store = SqliteStore::open(&db).map_err(err)?;
        (store.all_annotations().map_err(err)?.is_empty(), store.count(QueueStatus::Pending).map_err(err)?)
    };
    let aborted_after = run_crash_child("after", &db, &after_ref)?;
    let ok_after = integrity_ok(&db)?;
    let store = SqliteStore::open(&db).map_err(err)?;
    let kept = store.all_annotations().map_err(err)?;
    let reviewed = store.queue(Some(QueueStatus::Reviewed), 10).map_err(err)?;
    let durable = kept.len() == 1
        && kept[0].triplet_ref == after_ref
        && reviewed.len() == 1
        && reviewed[0].triplet_ref == after_ref
        && reviewed[0].annotation_id.is_some();
    let crash_ok = aborted_before
        && aborted_after
        && ok_before
        && ok_after
        && rolled_back
        && pending_before == N_FIXTURES
        && durable
        && store.count(QueueStatus::Pending).map_err(err)? == N_FIXTURES - 1;

    // After restart the service accepts the rolled-back label and refuses
    // a repeat of the committed one.
    let app = router(AppState::new(None, store, Some(TOKEN.into()), 1 << 20), None);
    let label = |r: &TripletRef, label: &str, who: &str, note: Option<&str>| {
        json!({"triplet_ref": r, "human_label": label, "annotator_id": who, "note": note})
    };
    let (retry_status, _) = rt.block_on(send(&app, json_request("/annotations", &label(&before_ref, "ooc", "crash-test", None))?))?;
    let (repeat_status, _) = rt.block_on(send(&app, json_request("/annotations", &label(&after_ref, "ooc", "crash-test", None))?))?;
    let restart_ok = retry_status == StatusCode::CREATED && repeat_status == StatusCode::CONFLICT;

    // Export round trip.
    let notes = [None, Some("caption names a different city"), Some("unicode: Zürich, 東京"), Some("quote \" and\nnewline")];
    let labels = ["ooc", "not_ooc", "skip"];
    let mut posted = 0;
    for (i, t) in triplets.iter().enumerate().skip(2).take(24) {
        let body = label(&TripletRef::of(t), labels[i % 3], ["ann-1", "ann-2"][i % 2], notes[i % 4]);
        let (status, _) = rt.block_on(send(&app, json_request("/annotations", &body)?))?;
        posted += (status == StatusCode::CREATED) as usize;
    }
    let export_req = authed(Request::get("/export")).body(Body::empty()).map_err(err)?;
    let (export_status, exported) = rt.block_on(send(&app, export_req))?;
    let export_path = dir.path().join("export.jsonl");
    std::fs::write(&export_path, &exported).map_err(err)?;
    let loaded = load_annotations(&export_path).map_err(err)?;
    let stored = app_annotations(&db)?;
    let rewritten = annotations_jsonl(loaded.clone()).map_err(err)?;
    let export_ok = export_status == StatusCode::OK
        && posted == 24
        && loaded.len() == 26
        && sorted(loaded) == sorted(stored)
        && rewritten.as_bytes() == exported.as_slice();

    Ok(Outcome::new(
        identical == N_FIXTURES && crash_ok && restart_ok && export_ok,
        format!(
            "service: /predict byte-identical to detect_ooc on {identical}/{N_FIXTURES} fixtures ({n_ooc} ooc){}; crash before commit rolled back {}, after commit durable {}, integrity ok {}, restart retry {} repeat {}; export {} records round-trip {}",
            first_mismatch.map(|m| format!(", first mismatch {m}")).unwrap_or_default(),
            rolled_back,
            durable,
            ok_before && ok_after,
            retry_status.as_u16(),
            repeat_status.as_u16(),
            exported.split(|b| *b == b'\n').filter(|l| !l.is_empty()).count(),
            export_ok,
        ),
    ))
}

fn app_annotations(db: &Path) -> Result<Vec<AnnotationRecord>, String> {
    SqliteStore::open(db).map_err(err)?.all_annotations().map_err(err)
}

fn sorted(mut v: Vec<AnnotationRecord>) -> Vec<AnnotationRecord> {
    v.sort_by(|a, b| (a.timestamp, &a.annotator_id, &a.triplet_ref).cmp(&(b.timestamp, &b.annotator_id, &b.triplet_ref)));
    v
}
