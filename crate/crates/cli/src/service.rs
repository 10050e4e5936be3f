//! HTTP API over one trained cohort. Models are immutable after startup;
//! every request runs its own optimization.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use longic::cohort::Cohort;
use longic::inverse_opt::Recommendation;
use longic::pipeline::run::Overrides;
use longic::pipeline::{patient_summary, recommend_patient, sweep_patient, CarryMode, TrainedModels};
use longic::Error;
use serde::{Deserialize, Serialize};

pub struct AppState {
    pub cohort: Cohort,
    pub models: TrainedModels,
    pub carry: CarryMode,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UnknownId(_) => StatusCode::NOT_FOUND,
            Error::Config(_)
            | Error::InvalidParameter(_)
            | Error::Infeasible(_)
            | Error::Dimension { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PatientEntry {
    pub id: String,
    pub test_split: bool,
    pub visits: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PatientList {
    pub total: usize,
    pub offset: usize,
    pub patients: Vec<PatientEntry>,
}

#[derive(Debug, Default, Deserialize)]
pub struct Page {
    pub offset: Option<usize>,
    pub limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecommendRequest {
    pub id: String,
    pub budget: f64,
    #[serde(default, flatten)]
    pub overrides: Overrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carry: Option<CarryMode>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepRequest {
    pub id: String,
    pub budgets: Vec<f64>,
    #[serde(default, flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepResponse {
    pub id: String,
    pub budgets: Vec<f64>,
    pub recommendations: Vec<Recommendation>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/patients", get(patients))
        .route("/patient/{id}", get(patient))
        .route("/recommend", post(recommend))
        .route("/sweep", post(sweep))
        .with_state(state)
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into() })
}

async fn patients(State(state): State<Arc<AppState>>, Query(page): Query<Page>) -> Json<PatientList> {
    let v1 = &state.cohort.visits[0];
    let offset = page.offset.unwrap_or(0).min(v1.n());
    let limit = page.limit.unwrap_or(usize::MAX);
    let patients = v1.ids[offset..]
        .iter()
        .take(limit)
        .map(|id| PatientEntry {
            id: id.clone(),
            test_split: state.models.split.is_test(id),
            visits: state.cohort.visits.iter().filter(|v| v.row_of(id).is_some()).count(),
        })
        .collect();
    Json(PatientList {
        total: v1.n(),
        offset,
        patients,
    })
}

async fn patient(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let summary = blocking(move || patient_summary(&state.models, &state.cohort, &id)).await?;
    Ok(Json(summary).into_response())
}

async fn recommend(
    State(state): State<Arc<AppState>>,
    Json(req): Json<RecommendRequest>,
) -> Result<Json<Recommendation>, ApiError> {
    if !(req.budget >= 0.0) || !req.budget.is_finite() {
        return Err(bad_request(format!("budget must be a non-negative number, got {}", req.budget)));
    }
    let rec = blocking(move || {
        let (costs, bounds) = req.overrides.apply(&state.cohort)?;
        recommend_patient(
            &state.models,
            &state.cohort,
            &req.id,
            req.budget,
            &costs,
            &bounds,
            req.carry.unwrap_or(state.carry),
            &state.models.config.solver,
        )
    })
    .await?;
    Ok(Json(rec))
}

async fn sweep(
    State(state): State<Arc<AppState>>,
    Json(req): Json<SweepRequest>,
) -> Result<Json<SweepResponse>, ApiError> {
    if req.budgets.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
        return Err(bad_request("budgets must be non-negative numbers"));
    }
    if req.budgets.windows(2).any(|w| w[1] < w[0]) {
        return Err(bad_request("budgets must be ascending"));
    }
    let resp = blocking(move || {
        let (costs, bounds) = req.overrides.apply(&state.cohort)?;
        let recommendations = if req.budgets.is_empty() {
            Vec::new()
        } else {
            sweep_patient(
                &state.models,
                &state.cohort,
                &req.id,
                &req.budgets,
                &costs,
                &bounds,
                &state.models.config.solver,
            )?
        };
        Ok(SweepResponse {
            id: req.id,
            budgets: req.budgets,
            recommendations,
        })
    })
    .await?;
    Ok(Json(resp))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> longic::Result<T> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}
