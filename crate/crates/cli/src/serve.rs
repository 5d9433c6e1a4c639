//! Review HTTP API over an existing map, extracted elements and a proposal.

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mapweld_core::io;
use mapweld_core::raster::{self, AccumulationGrid};
use mapweld_core::updater::{self, Decision, UpdateProposal};
use mapweld_core::{Error, MapClass, VectorMap};
use serde::Deserialize;
use serde_json::json;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::{Logger, ServeArgs};

pub struct AppState {
    pub existing: VectorMap,
    pub new_elements: VectorMap,
    pub grid: Option<AccumulationGrid>,
    proposal: RwLock<Arc<UpdateProposal>>,
    proposal_path: PathBuf,
    // Decision writes go through this lock one at a time.
    writer: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(
        existing: VectorMap,
        new_elements: VectorMap,
        proposal: UpdateProposal,
        proposal_path: PathBuf,
        grid: Option<AccumulationGrid>,
    ) -> Self {
        AppState {
            existing,
            new_elements,
            grid,
            proposal: RwLock::new(Arc::new(proposal)),
            proposal_path,
            writer: tokio::sync::Mutex::new(()),
        }
    }

    /// Loads and cross-checks the served files.
    pub fn load(map: &Path, new_elements: &Path, proposal: &Path, grid: Option<&Path>) -> Result<Self, Error> {
        let existing = io::load_map(map)?;
        let new_elements = io::load_map(new_elements)?;
        let p = updater::load_proposal(proposal, &existing)?;
        let grid = grid.map(raster::load_grid).transpose()?;
        Ok(AppState::new(existing, new_elements, p, proposal.to_path_buf(), grid))
    }

    pub fn proposal(&self) -> Arc<UpdateProposal> {
        self.proposal.read().expect("proposal lock").clone()
    }
}

fn json_body(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

fn error_response(status: StatusCode, kind: &str, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": kind, "message": message.into()}))).into_response()
}

fn domain_error(e: &Error) -> Response {
    let status = match e {
        Error::UnknownCell(_) => StatusCode::NOT_FOUND,
        Error::UndecidedCell(_) => StatusCode::CONFLICT,
        Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    };
    error_response(status, e.kind(), e.to_string())
}

pub fn router(state: Arc<AppState>, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/map", get(get_map))
        .route("/api/new", get(get_new))
        .route("/api/proposal", get(get_proposal))
        .route("/api/heatmap/{class}", get(get_heatmap))
        .route("/api/decision", post(post_decision))
        .route("/api/merge", post(post_merge))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(state);
    let api = match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    api.layer(CorsLayer::permissive())
}

async fn get_map(State(s): State<Arc<AppState>>) -> Response {
    json_body(io::map_to_json(&s.existing))
}

async fn get_new(State(s): State<Arc<AppState>>) -> Response {
    json_body(io::map_to_json(&s.new_elements))
}

async fn get_proposal(State(s): State<Arc<AppState>>) -> Response {
    json_body(updater::proposal_to_json(&s.proposal()))
}

#[derive(Debug, Deserialize)]
struct HeatmapQuery {
    downsample: Option<usize>,
}

async fn get_heatmap(
    State(s): State<Arc<AppState>>,
    UrlPath(class): UrlPath<String>,
    Query(q): Query<HeatmapQuery>,
) -> Response {
    let Some(grid) = &s.grid else {
        return error_response(StatusCode::NOT_FOUND, "NoGrid", "no grid loaded");
    };
    let class: MapClass = match class.parse() {
        Ok(c) => c,
        Err(e) => return error_response(StatusCode::NOT_FOUND, "UnknownClass", e.to_string()),
    };
    let n = q.downsample.unwrap_or(1);
    if n == 0 {
        return error_response(StatusCode::BAD_REQUEST, "InvalidParameter", "downsample must be >= 1");
    }
    let (spec, counts) = grid.downsampled(class, n);
    let spec: serde_json::Value = serde_json::from_str(&spec.to_json()).expect("spec json");
    Json(json!({"spec": spec, "counts": counts})).into_response()
}

#[derive(Debug, Deserialize)]
struct DecisionBody {
    cell_id: String,
    decision: Decision,
}

async fn post_decision(State(s): State<Arc<AppState>>, body: Result<Json<DecisionBody>, JsonRejection>) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return error_response(e.status(), "BadRequest", e.body_text()),
    };
    if body.decision == Decision::Pending {
        return error_response(
            StatusCode::BAD_REQUEST,
            "BadRequest",
            "decision must be \"accepted\" or \"rejected\"",
        );
    }
    let _guard = s.writer.lock().await;
    let mut next = (*s.proposal()).clone();
    if let Err(e) = next.decide(&body.cell_id, body.decision) {
        return domain_error(&e);
    }
    if let Err(e) = updater::save_proposal(&s.proposal_path, &next) {
        return domain_error(&e);
    }
    let cell = updater::cell_to_json(next.cell(&body.cell_id).expect("cell just decided"));
    *s.proposal.write().expect("proposal lock") = Arc::new(next);
    json_body(cell)
}

async fn post_merge(State(s): State<Arc<AppState>>) -> Response {
    let proposal = s.proposal();
    let pending: Vec<&str> = proposal.pending().map(|c| c.cell_id.as_str()).collect();
    if !pending.is_empty() {
        return (
            StatusCode::CONFLICT,
            Json(json!({
                "error": "UndecidedCell",
                "message": format!("{} cells still pending", pending.len()),
                "pending": pending,
            })),
        )
            .into_response();
    }
    match updater::merge(&s.existing, &s.new_elements, &proposal) {
        Ok(m) => json_body(io::map_to_json(&m.map)),
        Err(e) => domain_error(&e),
    }
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

pub fn serve_cmd(a: ServeArgs, log: Logger) -> Result<(), Error> {
    let state = Arc::new(AppState::load(&a.map, &a.new, &a.proposal, a.grid.as_deref())?);
    let app = router(state, a.ui_dir.as_deref());
    let addr = format!("{}:{}", a.host, a.port);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
        path: PathBuf::from(&addr),
        source: e,
    })?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| Error::Io {
            path: PathBuf::from(&addr),
            source: e,
        })?;
        let bound = listener.local_addr().map(|a| a.to_string()).unwrap_or(addr.clone());
        log.info("serve", &format!("listening on http://{bound}"), json!({"addr": bound}));
        axum::serve(listener, app)
            .with_graceful_shutdown(shutdown_signal())
            .await
            .map_err(|e| Error::Io {
                path: PathBuf::from(&bound),
                source: e,
            })?;
        log.info("serve", "shut down", json!({}));
        Ok(())
    })
}
