//! Review server: hands the blinded bundle to raters and appends their
//! ratings to a JSONL file.

use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clinreason_core::evaluation::{import_ratings, write_ratings_jsonl, RatingRecord, ReviewBundle};
use clinreason_core::provenance::OutputMeta;
use serde_json::json;
use tower_http::cors::CorsLayer;

use crate::error::CliError;

pub struct ReviewState {
    bundle_json: String,
    slots: BTreeSet<(String, u32)>,
    ratings_path: PathBuf,
    meta: OutputMeta,
}

impl ReviewState {
    pub fn new(bundle: &ReviewBundle, ratings_path: PathBuf, meta: OutputMeta) -> Self {
        let slots = bundle
            .items
            .iter()
            .flat_map(|item| item.responses.iter().map(|r| (item.item_id.clone(), r.slot)))
            .collect();
        ReviewState { bundle_json: bundle.to_json(), slots, ratings_path, meta }
    }

    fn check_slots(&self, ratings: &[RatingRecord]) -> Result<(), String> {
        for (i, r) in ratings.iter().enumerate() {
            if !self.slots.contains(&(r.item_id.clone(), r.slot)) {
                return Err(format!("record {}: item {} has no slot {}", i + 1, r.item_id, r.slot));
            }
        }
        Ok(())
    }

    /// Appends `ratings` under an exclusive lock; a new file starts with the
    /// provenance header.
    fn append(&self, ratings: &[RatingRecord]) -> std::io::Result<()> {
        let mut file = OpenOptions::new().create(true).append(true).read(true).open(&self.ratings_path)?;
        file.lock()?;
        let mut out = String::new();
        if file.metadata()?.len() == 0 {
            out.push_str(&self.meta.to_line());
        }
        out.push_str(&write_ratings_jsonl(ratings));
        let result = file.write_all(out.as_bytes()).and_then(|_| file.sync_data());
        file.unlock()?;
        result
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn get_bundle(State(state): State<Arc<ReviewState>>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], state.bundle_json.clone()).into_response()
}

async fn post_ratings(State(state): State<Arc<ReviewState>>, body: String) -> Response {
    if !body.trim_start().starts_with(['[', '{']) {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "expected a JSON array of ratings");
    }
    let ratings = match import_ratings(&body) {
        Ok(r) if r.is_empty() => return error(StatusCode::UNPROCESSABLE_ENTITY, "no ratings in request"),
        Ok(r) => r,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    };
    if let Err(e) = state.check_slots(&ratings) {
        return error(StatusCode::UNPROCESSABLE_ENTITY, e);
    }
    let n = ratings.len();
    let writer = Arc::clone(&state);
    match tokio::task::spawn_blocking(move || writer.append(&ratings)).await {
        Ok(Ok(())) => Json(json!({ "accepted": n })).into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("writing ratings: {e}")),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(state: Arc<ReviewState>) -> Router {
    Router::new()
        .route("/bundle", get(get_bundle))
        .route("/ratings", post(post_ratings))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until interrupted.
pub fn serve(state: ReviewState, addr: SocketAddr) -> Result<(), CliError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::data(format!("runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::data(format!("bind {addr}: {e}")))?;
        eprintln!("serving review bundle on http://{}", listener.local_addr().unwrap_or(addr));
        axum::serve(listener, router(Arc::new(state)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::data(format!("server: {e}")))
    })
}
