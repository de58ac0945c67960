use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{DateTime, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use skinaug_core::curation::service::{router, ServiceConfig};
use skinaug_core::curation::{CurationStore, RequestEntry, SeedEntry, ACCEPT_QUOTA};
use skinaug_core::genclient::{
    stub_backend, CropRegion, GenerationClient, GenerationRequest, Mask, Noun, Preposition, PromptParts, SkinDescriptor,
};
use skinaug_core::FstGroup;

const CONDITION: &str = "psoriasis";

fn t0() -> DateTime<Utc> {
    DateTime::from_timestamp(1_700_000_000, 0).unwrap()
}

/// Two seeds with six candidates each, stored under `root`.
fn seeded_store(root: &Path) -> (CurationStore, Vec<String>) {
    let mut store = CurationStore::open(&root.join("curation")).unwrap().with_clock(t0);
    let client = GenerationClient::new(Arc::new(stub_backend(5).with_size(32)), root).with_clock(t0);
    let parts = PromptParts::new(CONDITION, "arm", SkinDescriptor::Dark, Noun::Woman, Preposition::OnThe);
    let mut seeds = Vec::new();
    for seed in ["seed-a", "seed-b"] {
        store
            .register_seed(SeedEntry {
                seed_id: seed.into(),
                condition: CONDITION.into(),
                group: FstGroup::V_VI,
                uri: format!("images/{seed}.png"),
            })
            .unwrap();
        let req = GenerationRequest::new(seed, CropRegion { x: 0, y: 0, side: 32 }, Mask::centered_disc(32), &parts, 6).unwrap();
        store
            .record_request(RequestEntry {
                request_id: req.request_id.clone(),
                seed_id: seed.into(),
                prompt: req.prompt.clone(),
            })
            .unwrap();
        let cands = client.generate(&req, b"").unwrap();
        assert_eq!(cands.len(), 6);
        store.add_candidates(cands).unwrap();
        seeds.push(seed.to_string());
    }
    (store, seeds)
}

struct Harness {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
    app: Router,
    store: Arc<RwLock<CurationStore>>,
    seeds: Vec<String>,
}

fn harness() -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let (store, seeds) = seeded_store(&root);
    let store = Arc::new(RwLock::new(store));
    let ui = root.join("ui");
    std::fs::create_dir_all(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<html>review</html>").unwrap();
    let app = router(
        store.clone(),
        ServiceConfig {
            selection_dir: root.join("selections"),
            payload_root: root.clone(),
            ui_dir: Some(ui),
        },
    );
    Harness {
        _dir: dir,
        root,
        app,
        store,
        seeds,
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn candidate_ids(app: &Router, seed: &str) -> Vec<String> {
    let (s, v) = call_json(app, "GET", &format!("/api/candidates?seed_id={seed}"), None).await;
    assert_eq!(s, StatusCode::OK);
    v.as_array()
        .unwrap()
        .iter()
        .map(|c| c["candidate_id"].as_str().unwrap().to_string())
        .collect()
}

fn accept(id: &str) -> Value {
    json!({ "candidate_id": id, "decision": "accept", "reviewer": "r1" })
}

#[tokio::test]
async fn lists_seeds_and_candidates() {
    let h = harness();
    let (s, v) = call_json(&h.app, "GET", "/api/seeds?condition=psoriasis&group=V_VI", None).await;
    assert_eq!(s, StatusCode::OK);
    let seeds = v.as_array().unwrap();
    assert_eq!(seeds.len(), 2);
    assert!(seeds.iter().all(|s| s["candidates"] == 6 && s["accepted"] == 0));

    let (_, v) = call_json(&h.app, "GET", "/api/seeds?group=I_II", None).await;
    assert_eq!(v.as_array().unwrap().len(), 0);

    let (s, v) = call_json(&h.app, "GET", &format!("/api/candidates?seed_id={}", h.seeds[0]), None).await;
    assert_eq!(s, StatusCode::OK);
    let cands = v.as_array().unwrap();
    assert_eq!(cands.len(), 6);
    let first = &cands[0];
    assert_eq!(first["review"], "pending");
    let url = first["image_url"].as_str().unwrap();
    let (s, bytes) = call(&h.app, "GET", url, None).await;
    assert_eq!(s, StatusCode::OK);
    let on_disk = std::fs::read(h.root.join(first["payload_uri"].as_str().unwrap())).unwrap();
    assert_eq!(bytes, on_disk);
}

#[tokio::test]
async fn unknown_ids_are_404() {
    let h = harness();
    let (s, v) = call_json(&h.app, "GET", "/api/candidates?seed_id=nope", None).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    let (s, _) = call(&h.app, "GET", "/img/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call_json(&h.app, "POST", "/api/review", Some(accept("nope"))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn reject_needs_reason() {
    let h = harness();
    let id = candidate_ids(&h.app, &h.seeds[0]).await.remove(0);
    let body = json!({ "candidate_id": id, "decision": "reject", "reviewer": "r1" });
    let (s, v) = call_json(&h.app, "POST", "/api/review", Some(body)).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("missing_reason")));

    let body = json!({ "candidate_id": id, "decision": "reject", "reason": "artifact", "reviewer": "r1" });
    let (s, v) = call_json(&h.app, "POST", "/api/review", Some(body)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["review"], "rejected");
    assert_eq!(v["reject_reason"], "artifact");
}

#[tokio::test]
async fn quota_is_enforced() {
    let h = harness();
    let ids = candidate_ids(&h.app, &h.seeds[0]).await;
    for id in &ids[..ACCEPT_QUOTA] {
        let (s, v) = call_json(&h.app, "POST", "/api/review", Some(accept(id))).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        assert_eq!(v["review"], "accepted");
    }
    let (s, v) = call_json(&h.app, "POST", "/api/review", Some(accept(&ids[ACCEPT_QUOTA]))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::CONFLICT, Some("quota_exceeded")));

    // repeating an accepted decision is not a new acceptance
    let (s, _) = call_json(&h.app, "POST", "/api/review", Some(accept(&ids[0]))).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn export_lifecycle() {
    let h = harness();
    let export = json!({ "condition": CONDITION, "group": "V_VI" });

    let a = candidate_ids(&h.app, &h.seeds[0]).await;
    for id in &a[..ACCEPT_QUOTA] {
        call_json(&h.app, "POST", "/api/review", Some(accept(id))).await;
    }
    let b = candidate_ids(&h.app, &h.seeds[1]).await;
    call_json(&h.app, "POST", "/api/review", Some(accept(&b[0]))).await;

    let (s, v) = call_json(&h.app, "POST", "/api/export", Some(export.clone())).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("incomplete_selection")));
    let short = v["seeds"].as_array().unwrap();
    assert_eq!(short.len(), 1);
    assert_eq!(short[0]["seed_id"], h.seeds[1]);
    assert_eq!(short[0]["accepted"], 1);

    for id in &b[1..ACCEPT_QUOTA] {
        call_json(&h.app, "POST", "/api/review", Some(accept(id))).await;
    }
    let (s, first) = call_json(&h.app, "POST", "/api/export", Some(export.clone())).await;
    assert_eq!(s, StatusCode::OK, "{first}");
    assert_eq!(first["manifest"]["finalized"], true);
    let path = first["path"].as_str().unwrap();
    assert!(path.ends_with("selection.psoriasis.V_VI.json"));
    let written: Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    assert_eq!(written, first["manifest"]);
    for seed in &h.seeds {
        assert_eq!(written["entries"][seed].as_array().unwrap().len(), ACCEPT_QUOTA);
    }

    let (s, again) = call_json(&h.app, "POST", "/api/export", Some(export)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(again["manifest"], first["manifest"]);

    let body = json!({ "candidate_id": a[5], "decision": "reject", "reason": "other", "reviewer": "r1" });
    let (s, v) = call_json(&h.app, "POST", "/api/review", Some(body)).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::CONFLICT, Some("manifest_finalized")));
}

#[tokio::test]
async fn export_without_seeds_and_bad_group() {
    let h = harness();
    let (s, v) = call_json(&h.app, "POST", "/api/export", Some(json!({ "condition": "psoriasis", "group": "I_II" }))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("no_seeds")));
    let (s, v) = call_json(&h.app, "POST", "/api/export", Some(json!({ "condition": "psoriasis", "group": "VII" }))).await;
    assert_eq!((s, v["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_request")));
}

#[tokio::test]
async fn decisions_survive_reopen() {
    let h = harness();
    let ids = candidate_ids(&h.app, &h.seeds[0]).await;
    call_json(&h.app, "POST", "/api/review", Some(accept(&ids[0]))).await;
    let body = json!({ "candidate_id": ids[1], "decision": "reject", "reason": "anatomy_change", "reviewer": "r1" });
    call_json(&h.app, "POST", "/api/review", Some(body)).await;

    let live = h.store.read().unwrap().state().clone();
    let reopened = CurationStore::open(&h.root.join("curation")).unwrap();
    assert_eq!(reopened.state(), &live);
    assert_eq!(CurationStore::replay(&h.root.join("curation")).unwrap(), live);
}

#[tokio::test]
async fn serves_review_ui() {
    let h = harness();
    let (s, body) = call(&h.app, "GET", "/", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, b"<html>review</html>");
    let (s, _) = call(&h.app, "GET", "/missing.js", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
