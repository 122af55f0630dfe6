use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use idur_service::*;
use incident_duration::domain::{
    CountBucket, CountyRegion, DetectionMethod, Direction, EventType, FeatureSetKind, IncidentRecord, Responder,
    Terrain,
};
use incident_duration::pipeline::{predict_incident, train_framework, FrameworkConfig, FrameworkModel, RegressorSpec};
use incident_duration::synthgen::{generate, GeneratorConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn config(seed: u64) -> FrameworkConfig {
    FrameworkConfig {
        seed,
        classifier: vec!["rf".into(), "logistic".into()],
        regressors: [RegressorSpec::single("ols"), RegressorSpec::single("huber"), RegressorSpec::single("rf")],
        ..Default::default()
    }
}

fn model() -> &'static FrameworkModel {
    static M: OnceLock<FrameworkModel> = OnceLock::new();
    M.get_or_init(|| {
        let ds = generate(&GeneratorConfig { n_records: 1500, seed: 3, ..Default::default() }).unwrap();
        train_framework(&ds.records, &ds.enrichment, &config(42)).unwrap().0
    })
}

fn loaded() -> AppState {
    AppState::new(Some(model().clone()), ActionPolicy::default())
}

fn fs1_body() -> Value {
    json!({
        "request_id": "op-7",
        "start_time": "2019-11-02T17:10:00",
        "direction": "E",
        "county_region": "SW",
        "city_number": 12,
        "event_type": "crash3",
        "lanes": 3,
        "only_shoulders_closed": false,
        "vehicles": "3+",
        "trucks": "1",
        "injuries": true,
        "fatalities": false,
        "detection_method": "police",
        "route_id": "I-35",
        "measure": 88.0
    })
}

async fn call(state: AppState, method: &str, uri: &str, body: Option<(&str, String)>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some((ct, b)) => {
            req = req.header("content-type", ct);
            Body::from(b)
        }
        None => Body::empty(),
    };
    let resp = router(state).oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn predict(state: AppState, body: &Value) -> (StatusCode, Value) {
    call(state, "POST", "/v1/predict", Some(("application/json", body.to_string()))).await
}

#[tokio::test]
async fn health_reports_readiness_and_follows_swaps() {
    let state = AppState::new(None, ActionPolicy::default());
    let (s, v) = call(state.clone(), "GET", "/v1/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "not_ready");
    assert!(v["model_version"].is_null());
    state.swap_model(model().clone());
    let (_, v) = call(state.clone(), "GET", "/v1/health", None).await;
    assert_eq!(v["status"], "ready");
    assert_eq!(v["model_version"], model().version.as_str());
}

#[tokio::test]
async fn predict_without_a_model_is_unavailable() {
    let (s, v) = predict(AppState::new(None, ActionPolicy::default()), &fs1_body()).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"], "not_ready");
}

#[tokio::test]
async fn content_type_is_enforced() {
    let (s, _) = call(loaded(), "POST", "/v1/predict", Some(("text/plain", fs1_body().to_string()))).await;
    assert_eq!(s, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let (s, _) = call(loaded(), "POST", "/v1/predict", Some(("application/json; charset=utf-8", fs1_body().to_string()))).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn bad_requests_name_their_fields() {
    let mut b = fs1_body();
    b["colour"] = "red".into();
    let (s, v) = predict(loaded(), &b).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["fields"], json!(["colour"]));

    let mut b = fs1_body();
    b["lanes"] = 0.into();
    b["direction"] = "up".into();
    let (s, v) = predict(loaded(), &b).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let fields: Vec<&str> = v["fields"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    assert!(fields.contains(&"direction"), "{v}");

    let mut b = fs1_body();
    b.as_object_mut().unwrap().remove("event_type");
    let (s, v) = predict(loaded(), &b).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["fields"], json!(["event_type"]));

    let (s, _) = call(loaded(), "POST", "/v1/predict", Some(("application/json", "{not json".into()))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn response_matches_the_pipeline_and_refines_with_responders() {
    let (s, v) = predict(loaded(), &fs1_body()).await;
    assert_eq!(s, StatusCode::OK);
    let resp: PredictResponse = serde_json::from_value(v).unwrap();
    let record = parse_request(fs1_body().to_string().as_bytes()).unwrap().record;
    let direct = predict_incident(model(), &record).unwrap();
    assert_eq!(resp, PredictResponse::new(Some("op-7".into()), &direct, &ActionPolicy::default()));
    assert_eq!(resp.feature_set_used, "FS1");
    let total = resp.band_probabilities.short + resp.band_probabilities.medium + resp.band_probabilities.long;
    assert!((total - 1.0).abs() < 1e-9);

    let mut b = fs1_body();
    b["responders"] = json!(["tow", "ems", "police"]);
    b["terrain"] = "hilly".into();
    let (s, v) = predict(loaded(), &b).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["feature_set_used"], "FS2");
}

#[tokio::test]
async fn detour_threshold_is_configurable() {
    let (_, v) = predict(loaded(), &fs1_body()).await;
    let minutes = v["duration_minutes"].as_f64().unwrap();
    let strict = AppState::new(Some(model().clone()), ActionPolicy { detour_overhead_minutes: minutes + 1.0 });
    let (_, w) = predict(strict, &fs1_body()).await;
    let actions: Vec<&str> = w["recommended_actions"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    assert!(!actions.contains(&"evaluate_detour"));
}

#[tokio::test]
async fn internal_failures_return_an_opaque_id() {
    let mut broken = model().clone();
    for p in &mut broken.phases {
        p.classifier.schema.push("not_a_column".into());
    }
    let (s, v) = predict(AppState::new(Some(broken), ActionPolicy::default()), &fs1_body()).await;
    assert_eq!(s, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(v["message"], "internal error");
    assert_eq!(v["error_id"].as_str().unwrap().len(), 36);
    assert!(!v.to_string().contains("not_a_column"));
}

#[tokio::test]
async fn schema_lists_the_domain_enums() {
    let (s, v) = call(loaded(), "GET", "/v1/schema", None).await;
    assert_eq!(s, StatusCode::OK);
    let values = |name: &str| -> Vec<String> {
        let f = v["fields"].as_array().unwrap().iter().find(|f| f["name"] == name).unwrap();
        f["values"].as_array().unwrap().iter().map(|x| x.as_str().unwrap().to_string()).collect()
    };
    assert_eq!(values("direction"), Direction::labels());
    assert_eq!(values("county_region"), CountyRegion::labels());
    assert_eq!(values("event_type"), EventType::labels());
    assert_eq!(values("vehicles"), CountBucket::labels());
    assert_eq!(values("detection_method"), DetectionMethod::labels());
    assert_eq!(values("responders"), Responder::labels());
    assert_eq!(values("terrain"), Terrain::labels());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_calls_agree_with_serial_ones() {
    let state = loaded();
    let health: Vec<_> = (0..100)
        .map(|_| tokio::spawn(call(state.clone(), "GET", "/v1/health", None)))
        .collect();
    for h in health {
        assert_eq!(h.await.unwrap().0, StatusCode::OK);
    }
    let bodies: Vec<Value> = (0..20)
        .map(|i| {
            let mut b = fs1_body();
            b["measure"] = (i as f64 * 7.5).into();
            b["lanes"] = (1 + i % 4).into();
            b
        })
        .collect();
    let mut serial = Vec::new();
    for b in &bodies {
        serial.push(predict(state.clone(), b).await.1);
    }
    let parallel: Vec<_> = bodies
        .iter()
        .map(|b| {
            let (state, b) = (state.clone(), b.clone());
            tokio::spawn(async move { predict(state, &b).await })
        })
        .collect();
    for (h, s) in parallel.into_iter().zip(&serial) {
        assert_eq!(&h.await.unwrap().1, s);
    }
}

#[tokio::test]
async fn hot_swap_changes_answers_between_requests() {
    let state = loaded();
    let (_, before) = predict(state.clone(), &fs1_body()).await;
    let ds = generate(&GeneratorConfig { n_records: 1500, seed: 4, ..Default::default() }).unwrap();
    let other = train_framework(&ds.records, &ds.enrichment, &config(7)).unwrap().0;
    let record: IncidentRecord = parse_request(fs1_body().to_string().as_bytes()).unwrap().record;
    let expected = predict_incident(&other, &record).unwrap();
    state.swap_model(other);
    let (_, after) = predict(state.clone(), &fs1_body()).await;
    assert_eq!(after["duration_minutes"].as_f64().unwrap(), expected.duration_minutes);
    assert_ne!(before["duration_minutes"], after["duration_minutes"]);
    assert_eq!(expected.feature_set_used, FeatureSetKind::Basic);
    state.unload_model();
    assert_eq!(predict(state, &fs1_body()).await.0, StatusCode::SERVICE_UNAVAILABLE);
}
