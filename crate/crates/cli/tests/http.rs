use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use evscen::server::{router, AppState, DISPLAY_POINTS};
use evscen_core::chargeopt::ClipReport;
use evscen_core::groundtruth::GroundTruthSpec;
use evscen_core::profile::LoadProfile;
use evscen_core::rates::RateSchedule;
use evscen_core::registry::ModelRegistry;
use evscen_core::scenario::{ModelSet, ScenarioConfig};
use evscen_core::surrogate::{
    fit, split_labels, Hyper, SurrogateKind, TrainingSet, TRAINING_FORMAT_VERSION,
};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const DT: u32 = 60;

/// Pairs whose target equals the input, so a linear fit is the identity map.
fn identity_set(rate: &RateSchedule) -> TrainingSet {
    let n = 80;
    let t = (1440 / DT) as usize;
    // Full-rank inputs from a small xorshift stream.
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..t).map(|_| 0.05 + next()).collect();
            let m = raw.iter().copied().fold(f64::MIN, f64::max);
            raw.iter().map(|v| v / m).collect()
        })
        .collect();
    TrainingSet {
        format_version: TRAINING_FORMAT_VERSION,
        rate_name: rate.name.clone(),
        rate_sha256: rate.content_hash(),
        dt: DT,
        n_vehicles: 10,
        seed: 0,
        y: x.clone(),
        x,
        scales: vec![1.0; n],
        split: split_labels(n, 0),
        lp_seconds: vec![0.0; n],
        clip: ClipReport::default(),
        redrawn: 0,
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    state: Arc<AppState>,
}

fn fixture(async_threshold: f64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut reg = ModelRegistry::open(dir.path()).unwrap();
    let rate = RateSchedule::peak_min("peak_min");
    let ts = identity_set(&rate);
    let model = fit(SurrogateKind::Linear, &ts, 3, &[Hyper::Linear], 1).unwrap();
    reg.put_rate(rate).unwrap();
    reg.put_surrogate("identity", model).unwrap();
    let reg = ModelRegistry::open(dir.path()).unwrap();
    let models = ModelSet::from_ground_truth(&GroundTruthSpec::shipped()).unwrap();
    Fixture {
        _dir: dir,
        state: AppState::new(reg, models, async_threshold),
    }
}

async fn send(
    state: &Arc<AppState>,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(Arc::clone(state)).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

fn small_config(drivers: u64) -> Value {
    serde_json::to_value(ScenarioConfig::base_case(drivers)).unwrap()
}

#[tokio::test]
async fn health_is_ok() {
    let f = fixture(100.0);
    let (s, v) = send(&f.state, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn models_and_rates_are_listed() {
    let f = fixture(100.0);
    let (s, v) = send(&f.state, "GET", "/models", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["surrogates"].to_string().contains("identity"));
    assert!(v["segments"].as_array().unwrap().len() >= 4);
    let (s, v) = send(&f.state, "GET", "/rates", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v.to_string().contains("peak_min"));
}

#[tokio::test]
async fn bad_shares_are_rejected_with_field() {
    let f = fixture(100.0);
    let mut cfg = small_config(10_000);
    cfg["segment_shares"]["residential"] = json!(0.6);
    let (s, v) = send(&f.state, "POST", "/scenarios", Some(cfg)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["kind"], "invalid");
    assert!(v["error"]["field"]
        .as_str()
        .unwrap()
        .contains("segment_shares"));
}

#[tokio::test]
async fn malformed_body_is_422() {
    let f = fixture(100.0);
    let (s, v) = send(
        &f.state,
        "POST",
        "/scenarios",
        Some(json!({"total_drivers": "many"})),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["kind"], "json");
}

#[tokio::test]
async fn small_scenario_runs_synchronously() {
    let f = fixture(100.0);
    let cfg = small_config(20_000);
    let (s, v) = send(&f.state, "POST", "/scenarios", Some(cfg.clone())).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["total"]["values"].as_array().unwrap().len() <= DISPLAY_POINTS);
    assert!(v["metrics"]["peak_kw"].as_f64().unwrap() > 0.0);
    assert!(v.get("timings").is_none());
    let (_, again) = send(&f.state, "POST", "/scenarios", Some(cfg)).await;
    assert_eq!(v, again);
}

#[tokio::test]
async fn large_scenario_returns_token_then_result() {
    let f = fixture(0.0);
    let (s, v) = send(&f.state, "POST", "/scenarios", Some(small_config(20_000))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let token = v["token"].as_str().unwrap().to_string();
    let uri = format!("/scenarios/{token}");
    for _ in 0..600 {
        let (s, v) = send(&f.state, "GET", &uri, None).await;
        if s == StatusCode::OK {
            assert!(v["metrics"]["peak_kw"].as_f64().unwrap() > 0.0);
            return;
        }
        assert_eq!(s, StatusCode::ACCEPTED);
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job never finished");
}

#[tokio::test]
async fn unknown_token_is_404() {
    let f = fixture(100.0);
    let (s, _) = send(&f.state, "GET", "/scenarios/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn identity_surrogate_echoes_profile() {
    let f = fixture(100.0);
    let values: Vec<f64> = (0..24)
        .map(|h| 100.0 + 50.0 * (h as f64 / 3.0).cos())
        .collect();
    let profile = LoadProfile::new(DT, values.clone()).unwrap();
    let (s, v) = send(
        &f.state,
        "POST",
        "/control/apply",
        Some(json!({ "profile": profile, "surrogate": "identity" })),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let out = v["profile"]["values"].as_array().unwrap();
    for (a, b) in out.iter().zip(&values) {
        assert!((a.as_f64().unwrap() - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[tokio::test]
async fn unknown_surrogate_is_404() {
    let f = fixture(100.0);
    let profile = LoadProfile::zeros(DT).unwrap();
    let (s, v) = send(
        &f.state,
        "POST",
        "/control/apply",
        Some(json!({ "profile": profile, "surrogate": "missing" })),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["kind"], "missing_model");
}

#[tokio::test]
async fn wrong_resolution_is_422() {
    let f = fixture(100.0);
    let profile = LoadProfile::zeros(15).unwrap();
    let (s, v) = send(
        &f.state,
        "POST",
        "/control/apply",
        Some(json!({ "profile": profile, "surrogate": "identity" })),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["kind"], "dt_mismatch");
}

#[tokio::test]
async fn scenario_with_unknown_controller_is_404() {
    let f = fixture(100.0);
    let mut cfg = small_config(10_000);
    cfg["control_assignment"] = json!({ "workplace": "missing" });
    let (s, _) = send(&f.state, "POST", "/scenarios", Some(cfg)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn rate_design_validates_before_queueing() {
    let f = fixture(100.0);
    let mut rate = serde_json::to_value(RateSchedule::peak_min("peak_min")).unwrap();
    rate["name"] = json!("");
    let body = json!({ "rate": rate, "config": small_config(10_000) });
    let (s, v) = send(&f.state, "POST", "/rate-design", Some(body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert!(v["error"]["field"].as_str().unwrap().starts_with("rate."));
}
