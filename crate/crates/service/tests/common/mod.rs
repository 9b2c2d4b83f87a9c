#![allow(dead_code)]

use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use cosmos_core::corpus::{load_split, CaptionRecord, SplitName, TestTriplet};
use cosmos_core::encoders::{DetectionConfig, ProjectionHeads};
use cosmos_core::pipeline::{Adapters, OocDetector};
use cosmos_core::synth::{write_captioned_corpus, SynthConfig};
use cosmos_service::{router, seed_queue, AppState, SqliteStore};
use http_body_util::BodyExt;
use tower::ServiceExt;

pub const TOKEN: &str = "test-token";

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub triplets: Vec<TestTriplet>,
    pub root: PathBuf,
}

impl Fixture {
    /// Small rendered corpus; triplets pair each held-out caption with the
    /// next image's caption.
    pub fn new(n: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let corpus = write_captioned_corpus(
            dir.path(),
            &SynthConfig {
                n_train: 1,
                n_val: 1,
                n_heldout: n,
                captions_per_image: 2,
                seed: 5,
                ..SynthConfig::default()
            },
        )
        .unwrap();
        let heldout = load_split(&corpus.heldout, SplitName::Val).unwrap();
        let images = heldout.images();
        let triplets = images
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let other = &images[(i + 1) % images.len()];
                TestTriplet {
                    image_id: r.image_id.clone(),
                    image_path: r.image_path.clone(),
                    caption1: r.captions[0].clone(),
                    caption2: if i % 2 == 0 {
                        r.captions[1].clone()
                    } else {
                        CaptionRecord::new(other.captions[0].text.clone(), "wire")
                    },
                    label: None,
                    missing_image: false,
                }
            })
            .collect();
        Self {
            root: heldout.root.clone(),
            dir,
            triplets,
        }
    }

    pub fn db(&self) -> PathBuf {
        self.dir.path().join("queue.sqlite")
    }

    pub fn image(&self, t: &TestTriplet) -> PathBuf {
        self.root.join(&t.image_path)
    }

    pub fn seeded_store(&self, detector: Option<&OocDetector>) -> SqliteStore {
        let store = SqliteStore::open(self.db()).unwrap();
        seed_queue(&store, detector, &self.triplets, &self.root).unwrap();
        store
    }
}

pub fn detector() -> OocDetector {
    let adapters = Adapters::builtin();
    let heads = ProjectionHeads::init(adapters.head_dims(64), 7);
    OocDetector::new(adapters, heads, DetectionConfig::default()).unwrap()
}

pub fn app(store: SqliteStore, detector: Option<OocDetector>, ui: Option<&Path>) -> Router {
    router(AppState::new(detector, store, Some(TOKEN.into()), 64 * 1024), ui)
}

pub fn get(uri: &str) -> Request<Body> {
    Request::get(uri)
        .header(header::AUTHORIZATION, format!("Bearer {TOKEN}"))
        .body(Body::empty())
        .unwrap()
}

pub fn post_json(uri: &str, body: &serde_json::Value) -> Request<Body> {
    Request::post(uri)
        .header(header::AUTHORIZATION, format!("Bearer {TOKEN}"))
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(serde_json::to_vec(body).unwrap()))
        .unwrap()
}

/// Builds a multipart body from text parts and an optional image part.
pub fn post_multipart(uri: &str, fields: &[(&str, &str)], image: Option<&[u8]>) -> Request<Body> {
    let boundary = "XyZbOuNdArY";
    let mut body = Vec::new();
    for (k, v) in fields {
        body.extend_from_slice(
            format!("--{boundary}\r\nContent-Disposition: form-data; name=\"{k}\"\r\n\r\n{v}\r\n").as_bytes(),
        );
    }
    if let Some(bytes) = image {
        body.extend_from_slice(
            format!(
                "--{boundary}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"x.png\"\r\nContent-Type: image/png\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    Request::post(uri)
        .header(header::AUTHORIZATION, format!("Bearer {TOKEN}"))
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap()
}

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn send_json(app: &Router, req: Request<Body>) -> (StatusCode, serde_json::Value) {
    let (status, bytes) = send(app, req).await;
    let v = serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null);
    (status, v)
}
