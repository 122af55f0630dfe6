//! HTTP front end for a trained incident duration model.
//!
//! Endpoints: `POST /v1/predict`, `GET /v1/health`, `GET /v1/schema`.
//! The model sits behind an atomic pointer, so it can be replaced between
//! requests while handlers keep the snapshot they started with.

pub mod actions;
pub mod request;
pub mod schema;

use std::net::SocketAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use arc_swap::ArcSwapOption;
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use incident_duration::pipeline::{predict_incident, FrameworkModel, Prediction};
use incident_duration::Error;
use serde::{Deserialize, Serialize};

pub use actions::ActionPolicy;
pub use request::{parse_request, PredictRequest, RequestError};
pub use schema::{schema, FieldSpec, Schema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandProbabilities {
    pub short: f64,
    pub medium: f64,
    pub long: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    pub band: String,
    pub band_probabilities: BandProbabilities,
    pub duration_minutes: f64,
    pub model_version: String,
    pub feature_set_used: String,
    pub recommended_actions: Vec<String>,
}

impl PredictResponse {
    pub fn new(request_id: Option<String>, p: &Prediction, policy: &ActionPolicy) -> Self {
        let [short, medium, long] = p.band_probabilities;
        PredictResponse {
            request_id,
            band: p.band.label().to_string(),
            band_probabilities: BandProbabilities { short, medium, long },
            duration_minutes: p.duration_minutes,
            model_version: p.model_version.clone(),
            feature_set_used: p.feature_set_used.label().to_string(),
            recommended_actions: policy.recommend(p.band, p.duration_minutes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    /// `ready` or `not_ready`.
    pub status: String,
    pub model_version: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// `invalid_request`, `unsupported_media_type`, `not_ready` or `internal`.
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_id: Option<String>,
}

fn error(status: StatusCode, kind: &str, message: impl Into<String>, fields: Vec<String>) -> Response {
    let body = ErrorBody { error: kind.to_string(), message: message.into(), fields, error_id: None };
    (status, Json(body)).into_response()
}

/// Logs the detail under a fresh id and returns only the id to the caller.
fn internal(detail: &str) -> Response {
    let id = uuid::Uuid::new_v4().to_string();
    eprintln!("idur-service: internal error {id}: {detail}");
    let body = ErrorBody {
        error: "internal".into(),
        message: "internal error".into(),
        fields: Vec::new(),
        error_id: Some(id),
    };
    (StatusCode::INTERNAL_SERVER_ERROR, Json(body)).into_response()
}

/// Shared handler state: the current model and the action rules.
#[derive(Clone, Default)]
pub struct AppState {
    model: Arc<ArcSwapOption<FrameworkModel>>,
    policy: ActionPolicy,
}

impl AppState {
    pub fn new(model: Option<FrameworkModel>, policy: ActionPolicy) -> Self {
        AppState { model: Arc::new(ArcSwapOption::from(model.map(Arc::new))), policy }
    }

    /// Installs a new model; requests already running finish on the old one.
    pub fn swap_model(&self, model: FrameworkModel) {
        self.model.store(Some(Arc::new(model)));
    }

    pub fn unload_model(&self) {
        self.model.store(None);
    }

    pub fn model(&self) -> Option<Arc<FrameworkModel>> {
        self.model.load_full()
    }

    pub fn policy(&self) -> &ActionPolicy {
        &self.policy
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/predict", post(predict))
        .route("/v1/health", get(health))
        .route("/v1/schema", get(schema_handler))
        .with_state(state)
}

fn is_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.split(';').next())
        .is_some_and(|v| v.trim().eq_ignore_ascii_case("application/json"))
}

async fn predict(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    if !is_json(&headers) {
        return error(StatusCode::UNSUPPORTED_MEDIA_TYPE, "unsupported_media_type", "expected application/json", Vec::new());
    }
    let Some(model) = state.model() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "not_ready", "no model is loaded", Vec::new());
    };
    let req = match parse_request(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_request", e.message, e.fields),
    };
    match catch_unwind(AssertUnwindSafe(|| predict_incident(&model, &req.record))) {
        Ok(Ok(p)) => Json(PredictResponse::new(req.request_id, &p, &state.policy)).into_response(),
        Ok(Err(Error::Validation { fields, message })) => {
            error(StatusCode::BAD_REQUEST, "invalid_request", message, fields)
        }
        Ok(Err(e)) => internal(&e.to_string()),
        Err(_) => internal("prediction panicked"),
    }
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let model = state.model();
    Json(Health {
        status: if model.is_some() { "ready" } else { "not_ready" }.to_string(),
        model_version: model.map(|m| m.version.clone()),
    })
}

async fn schema_handler() -> Json<Schema> {
    Json(schema())
}

/// Serves until the listener fails.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
