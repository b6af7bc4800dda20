use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use clinreason_cli::serve::{router, ReviewState};
use clinreason_core::evaluation::{export_review, import_ratings, ReviewBundle, ReviewQuestion};
use clinreason_core::provenance::OutputMeta;
use tower::ServiceExt;

fn sample_bundle() -> ReviewBundle {
    let questions: Vec<ReviewQuestion> = (1..=2)
        .map(|i| ReviewQuestion { item_id: format!("q{i}"), question: format!("What is the next step for patient {i}?") })
        .collect();
    let responses: BTreeMap<String, BTreeMap<String, String>> = (1..=4)
        .map(|m| (format!("method-{m}"), questions.iter().map(|q| (q.item_id.clone(), format!("response {m}"))).collect()))
        .collect();
    export_review(&questions, &responses, 3).unwrap().0
}

fn state(dir: &tempfile::TempDir) -> Arc<ReviewState> {
    Arc::new(ReviewState::new(&sample_bundle(), dir.path().join("ratings.jsonl"), OutputMeta::new("h", [("shuffle_seed", 3)])))
}

async fn body_text(response: axum::response::Response) -> String {
    String::from_utf8(to_bytes(response.into_body(), usize::MAX).await.unwrap().to_vec()).unwrap()
}

fn post(json: String) -> Request<Body> {
    Request::post("/ratings").header("content-type", "application/json").body(Body::from(json)).unwrap()
}

fn all_ratings(rater: &str) -> String {
    let records: Vec<_> = (1..=2)
        .flat_map(|i| (1..=4).map(move |slot| (i, slot)))
        .map(|(i, slot)| serde_json::json!({"rater_id": rater, "item_id": format!("q{i}"), "slot": slot, "likert": "Agree"}))
        .collect();
    serde_json::to_string(&records).unwrap()
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

#[test]
fn get_bundle_returns_the_blinded_sheet() {
    let dir = tempfile::tempdir().unwrap();
    runtime().block_on(async {
        let response = router(state(&dir)).oneshot(Request::get("/bundle").body(Body::empty()).unwrap()).await.unwrap();
        assert_eq!(response.status(), StatusCode::OK);
        let text = body_text(response).await;
        let bundle = ReviewBundle::from_json(&text).unwrap();
        assert_eq!(bundle, sample_bundle());
        assert_eq!(bundle.slot_count(), 8);
        assert!(!text.contains("method-"));
    });
}

#[test]
fn post_ratings_acknowledges_and_appends() {
    let dir = tempfile::tempdir().unwrap();
    runtime().block_on(async {
        let app = router(state(&dir));
        let response = app.clone().oneshot(post(all_ratings("r1"))).await.unwrap();
        assert_eq!(response.status(), StatusCode::OK);
        assert_eq!(body_text(response).await, r#"{"accepted":8}"#);
        let response = app.oneshot(post(all_ratings("r2"))).await.unwrap();
        assert_eq!(body_text(response).await, r#"{"accepted":8}"#);
    });
    let text = std::fs::read_to_string(dir.path().join("ratings.jsonl")).unwrap();
    assert_eq!(OutputMeta::from_jsonl(&text).unwrap().seeds["shuffle_seed"], 3);
    assert_eq!(text.lines().count(), 17, "one header and 16 records");
    assert_eq!(import_ratings(&text).unwrap().len(), 16);
}

#[test]
fn invalid_payloads_are_rejected_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    runtime().block_on(async {
        let app = router(state(&dir));
        let bad_level = r#"[{"rater_id":"r","item_id":"q1","slot":1,"likert":"Strongly Agree"}]"#;
        let bad_slot = r#"[{"rater_id":"r","item_id":"q1","slot":9,"likert":"Agree"}]"#;
        let bad_item = r#"[{"rater_id":"r","item_id":"q7","slot":1,"likert":"Agree"}]"#;
        for body in [bad_level, bad_slot, bad_item, "not json", "[]", "rater_id,item_id,slot,likert\nr,q1,1,Agree\n"] {
            let response = app.clone().oneshot(post(body.to_string())).await.unwrap();
            assert_eq!(response.status(), StatusCode::UNPROCESSABLE_ENTITY, "{body}");
            assert!(body_text(response).await.contains("error"));
        }
    });
    assert!(!dir.path().join("ratings.jsonl").exists());
}

#[test]
fn concurrent_raters_never_interleave_records() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state(&dir));
    runtime().block_on(async {
        let tasks: Vec<_> = (0..16)
            .map(|r| {
                let app = app.clone();
                tokio::spawn(async move { app.oneshot(post(all_ratings(&format!("rater{r}")))).await.unwrap().status() })
            })
            .collect();
        for t in tasks {
            assert_eq!(t.await.unwrap(), StatusCode::OK);
        }
    });
    let text = std::fs::read_to_string(dir.path().join("ratings.jsonl")).unwrap();
    assert_eq!(text.matches("\"_meta\"").count(), 1);
    let ratings = import_ratings(&text).unwrap();
    assert_eq!(ratings.len(), 16 * 8);
    // Each request's records stay contiguous.
    for chunk in ratings.chunks(8) {
        assert!(chunk.iter().all(|r| r.rater_id == chunk[0].rater_id));
    }
}

#[test]
fn cors_preflight_is_answered() {
    let dir = tempfile::tempdir().unwrap();
    runtime().block_on(async {
        let request = Request::builder()
            .method("OPTIONS")
            .uri("/ratings")
            .header("origin", "http://localhost:5173")
            .header("access-control-request-method", "POST")
            .body(Body::empty())
            .unwrap();
        let response = router(state(&dir)).oneshot(request).await.unwrap();
        assert!(response.status().is_success());
        assert!(response.headers().contains_key("access-control-allow-origin"));
    });
}
