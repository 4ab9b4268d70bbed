use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use slo_autoscale::domain::ServiceSpec;
use slo_autoscale::harness::{router, ControlPlane, ExperimentConfig};
use slo_autoscale::store::MetricStore;

fn app() -> (Arc<ControlPlane>, Router) {
    let cfg = ExperimentConfig::default();
    let plane = Arc::new(ControlPlane::new(
        cfg.environment().unwrap(),
        MetricStore::new(),
    ));
    (plane.clone(), router(plane))
}

async fn call(app: &Router, method: Method, uri: &str, body: &str) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_owned()))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    )
}

#[tokio::test]
async fn services_lists_default_specs() {
    let (_, app) = app();
    let (status, body) = call(&app, Method::GET, "/services", "").await;
    assert_eq!(status, StatusCode::OK);
    let specs: Vec<ServiceSpec> = serde_json::from_value(body).unwrap();
    assert_eq!(specs, slo_autoscale::domain::default_services());
}

#[tokio::test]
async fn parameter_write_shows_up_in_next_metrics() {
    let (_, app) = app();
    let (status, body) = call(
        &app,
        Method::POST,
        "/services/cv/parameters",
        r#"{"data_quality":192,"cores":2.5}"#,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["parameters"]["data_quality"], 192.0);

    let (status, _) = call(&app, Method::POST, "/step", "").await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(&app, Method::GET, "/metrics?service=cv&last=1", "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.as_array().unwrap().len(), 1);
    assert_eq!(body[0]["metrics"]["data_quality"], 192.0);
    assert_eq!(body[0]["metrics"]["cores"], 2.5);
    assert_eq!(body[0]["cycle"], 0);
}

#[tokio::test]
async fn off_lattice_quality_is_rejected() {
    let (plane, app) = app();
    let (status, body) = call(
        &app,
        Method::POST,
        "/services/cv/parameters",
        r#"{"data_quality":300}"#,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["violations"][0]["kind"], "off_lattice");
    assert_eq!(body["violations"][0]["variable"], "data_quality");
    plane.tick();
    let store = plane.store_snapshot();
    assert_eq!(store.records()[1].metrics["data_quality"], 128.0);
}

#[tokio::test]
async fn over_budget_is_rejected_and_state_kept() {
    let (_, app) = app();
    let (status, body) = call(
        &app,
        Method::POST,
        "/services/qr/parameters",
        r#"{"cores":7.5}"#,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let kinds: Vec<&str> = body["violations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["kind"].as_str().unwrap())
        .collect();
    assert!(kinds.contains(&"budget_exceeded"), "{kinds:?}");

    call(&app, Method::POST, "/step", "").await;
    let (_, body) = call(&app, Method::GET, "/metrics?service=qr", "").await;
    assert!((body[0]["metrics"]["cores"].as_f64().unwrap() - 8.0 / 3.0).abs() < 1e-12);
}

#[tokio::test]
async fn malformed_and_unknown() {
    let (_, app) = app();
    let (status, body) = call(&app, Method::POST, "/services/cv/parameters", "{not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["violations"], json!([]));
    assert!(body["error"]
        .as_str()
        .unwrap()
        .starts_with("malformed body"));

    let (status, _) = call(
        &app,
        Method::POST,
        "/services/cv/parameters",
        r#"{"cores":"two"}"#,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = call(
        &app,
        Method::POST,
        "/services/zz/parameters",
        r#"{"cores":1}"#,
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("zz"));

    let (status, _) = call(&app, Method::GET, "/metrics?service=zz", "").await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, body) = call(
        &app,
        Method::POST,
        "/services/cv/parameters",
        r#"{"completion":1}"#,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["violations"][0]["kind"], "observed_only");
}

#[tokio::test]
async fn fulfillment_tracks_latest_cycle() {
    let (_, app) = app();
    let (_, body) = call(&app, Method::GET, "/fulfillment", "").await;
    assert_eq!(body["global"], Value::Null);

    call(&app, Method::POST, "/step", "").await;
    call(&app, Method::POST, "/step", "").await;
    let (status, body) = call(&app, Method::GET, "/fulfillment", "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["cycle"], 1);
    let per: Vec<f64> = ["cv", "pc", "qr"]
        .iter()
        .map(|s| body["services"][s].as_f64().unwrap())
        .collect();
    let global = body["global"].as_f64().unwrap();
    assert!((global - per.iter().sum::<f64>() / 3.0).abs() < 1e-12);

    let (_, all) = call(&app, Method::GET, "/metrics", "").await;
    assert_eq!(all.as_array().unwrap().len(), 6);
    let (_, last) = call(&app, Method::GET, "/metrics?last=1", "").await;
    assert_eq!(last.as_array().unwrap().len(), 3);
}
