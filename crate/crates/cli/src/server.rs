//! HTTP API over a read-only model registry.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use evscen_core::profile::LoadProfile;
use evscen_core::rates::RateSchedule;
use evscen_core::registry::ModelRegistry;
use evscen_core::scenario::{
    rate_design_workflow, run_scenario, ModelSet, RateDesignOptions, ScenarioConfig, ScenarioResult,
};
use evscen_core::surrogate::SurrogateKind;
use evscen_core::{Error, Result};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error_json;

/// Display profiles never exceed this many points.
pub const DISPLAY_POINTS: usize = 288;

#[derive(Debug, Clone)]
enum Job {
    Running,
    Done(Value),
    Failed(u16, Value),
}

pub struct AppState {
    registry: ModelRegistry,
    models: ModelSet,
    async_threshold: f64,
    jobs: Mutex<HashMap<String, Job>>,
    next_job: AtomicU64,
}

impl AppState {
    pub fn new(registry: ModelRegistry, models: ModelSet, async_threshold: f64) -> Arc<Self> {
        Arc::new(AppState {
            registry,
            models,
            async_threshold,
            jobs: Mutex::new(HashMap::new()),
            next_job: AtomicU64::new(1),
        })
    }
}

fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::MissingModel(_) => StatusCode::NOT_FOUND,
        Error::Invalid { .. }
        | Error::Parse { .. }
        | Error::Json { .. }
        | Error::DtMismatch { .. }
        | Error::Session { .. }
        | Error::Version { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_for(&self.0), Json(error_json(&self.0))).into_response()
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes, what: &str) -> Result<T> {
    serde_json::from_slice(body).map_err(|source| Error::Json {
        path: what.into(),
        source,
    })
}

fn display(p: &LoadProfile) -> Result<LoadProfile> {
    p.for_display(DISPLAY_POINTS)
}

/// Scenario result with display-resolution profiles and no wall-clock data,
/// so identical requests give identical bodies.
pub fn scenario_body(r: &ScenarioResult) -> Result<Value> {
    let segments = r
        .segments
        .iter()
        .map(|s| {
            Ok(json!({
                "segment": s.segment.key(),
                "sessions": s.sessions,
                "controlled_by": s.controlled_by,
                "profile": display(&s.profile)?,
                "timers": s.timers,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({
        "seed": r.seed,
        "day_type": r.day_type,
        "metrics": r.metrics,
        "total": display(&r.total)?,
        "segments": segments,
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/models", get(models))
        .route("/rates", get(rates))
        .route("/scenarios", post(post_scenario))
        .route("/scenarios/{token}", get(poll))
        .route("/control/apply", post(control_apply))
        .route("/rate-design", post(post_rate_design))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, bind: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| Error::io(bind, e))?;
    log::info!("listening on {bind}");
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::io(bind, e))
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn models(State(st): State<Arc<AppState>>) -> Json<Value> {
    let mut listing = serde_json::to_value(st.registry.listing()).expect("serializable");
    listing["segments"] = json!(st.models.segments().map(|s| s.key()).collect::<Vec<_>>());
    Json(listing)
}

async fn rates(State(st): State<Arc<AppState>>) -> Json<Value> {
    Json(json!(st.registry.rates()))
}

fn spawn_job<F>(st: &Arc<AppState>, work: F) -> String
where
    F: FnOnce(&AppState) -> Result<Value> + Send + 'static,
{
    let token = format!("job-{}", st.next_job.fetch_add(1, Ordering::Relaxed));
    st.jobs.lock().unwrap().insert(token.clone(), Job::Running);
    let st2 = Arc::clone(st);
    let t = token.clone();
    tokio::task::spawn_blocking(move || {
        let job = match work(&st2) {
            Ok(v) => Job::Done(v),
            Err(e) => Job::Failed(status_for(&e).as_u16(), error_json(&e)),
        };
        st2.jobs.lock().unwrap().insert(t, job);
    });
    token
}

fn accepted(token: &str) -> Response {
    (
        StatusCode::ACCEPTED,
        Json(json!({ "token": token, "status": "running", "poll": format!("/scenarios/{token}") })),
    )
        .into_response()
}

async fn post_scenario(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let config: ScenarioConfig = parse_body(&body, "scenario config")?;
    config.validate()?;
    for (loc, id) in &config.control_assignment {
        if st.registry.surrogate(id).is_none() {
            return Err(Error::MissingModel(format!("surrogate `{id}` for {loc}")).into());
        }
    }
    let work = move |st: &AppState| {
        let r = run_scenario(&config, &st.models, st.registry.surrogates())?;
        scenario_body(&r)
    };
    if st_estimate(&body) > st.async_threshold {
        return Ok(accepted(&spawn_job(&st, work)));
    }
    let st2 = Arc::clone(&st);
    let v = tokio::task::spawn_blocking(move || work(&st2))
        .await
        .map_err(|e| Error::Numerical(format!("worker failed: {e}")))??;
    Ok(Json(v).into_response())
}

fn st_estimate(body: &Bytes) -> f64 {
    parse_body::<ScenarioConfig>(body, "scenario config")
        .map(|c| c.estimated_seconds())
        .unwrap_or(0.0)
}

async fn poll(State(st): State<Arc<AppState>>, Path(token): Path<String>) -> Response {
    let job = st.jobs.lock().unwrap().get(&token).cloned();
    match job {
        None => (
            StatusCode::NOT_FOUND,
            Json(json!({ "error": { "kind": "missing_model", "message": format!("unknown token `{token}`") } })),
        )
            .into_response(),
        Some(Job::Running) => accepted(&token),
        Some(Job::Done(v)) => Json(v).into_response(),
        Some(Job::Failed(code, v)) => {
            (StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR), Json(v)).into_response()
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ApplyRequest {
    profile: LoadProfile,
    surrogate: String,
}

async fn control_apply(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: ApplyRequest = parse_body(&body, "apply request")?;
    let m = st
        .registry
        .surrogate(&req.surrogate)
        .ok_or_else(|| Error::MissingModel(format!("surrogate `{}`", req.surrogate)))?;
    let out = m.apply(&req.profile)?;
    Ok(Json(json!({ "surrogate": req.surrogate, "profile": out })).into_response())
}

fn default_instances() -> usize {
    1000
}

fn default_vehicles() -> usize {
    250
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RateDesignRequest {
    rate: RateSchedule,
    config: ScenarioConfig,
    #[serde(default = "default_instances")]
    n_instances: usize,
    #[serde(default = "default_vehicles")]
    n_vehicles: usize,
    #[serde(default)]
    kind: Option<SurrogateKind>,
    #[serde(default)]
    seed: u64,
}

/// Always asynchronous: the LP training set dominates and takes minutes.
async fn post_rate_design(
    State(st): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: RateDesignRequest = parse_body(&body, "rate design request")?;
    req.rate.validate().map_err(|e| match e {
        Error::Invalid { field, message } => Error::invalid(format!("rate.{field}"), message),
        other => other,
    })?;
    req.config.validate().map_err(|e| match e {
        Error::Invalid { field, message } => Error::invalid(format!("config.{field}"), message),
        other => other,
    })?;
    let token = spawn_job(&st, move |st| {
        let options = RateDesignOptions {
            n_instances: req.n_instances,
            n_vehicles: req.n_vehicles,
            kind: req.kind.unwrap_or(SurrogateKind::Ridge),
            ..RateDesignOptions::default()
        };
        let out = rate_design_workflow(&req.rate, &st.models, &req.config, &options, req.seed)?;
        let r = &out.report;
        Ok(json!({
            "rate_name": r.rate_name,
            "rmse": r.rmse,
            "segment": r.segment.key(),
            "segment_before": display(&r.segment_before)?,
            "segment_after": display(&r.segment_after)?,
            "total_before": display(&r.total_before)?,
            "total_after": display(&r.total_after)?,
            "segment_peak_before_kw": r.segment_peak_before_kw,
            "segment_peak_after_kw": r.segment_peak_after_kw,
            "total_peak_before_kw": r.total_peak_before_kw,
            "total_peak_after_kw": r.total_peak_after_kw,
            "timings": r.timings,
            "speedup": r.speedup,
        }))
    });
    Ok(accepted(&token))
}
