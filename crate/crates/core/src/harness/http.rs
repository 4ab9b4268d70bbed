use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::domain::{validate_assignment, ServiceId, ServiceSpec, Violation};
use crate::env::Environment;
use crate::store::{MetricRecord, MetricStore, Window};

use super::score_records;

/// Shared state behind the HTTP surface. Writes to the environment go
/// through one mutex; reads of the store take a shared lock.
#[derive(Debug)]
pub struct ControlPlane {
    specs: Vec<ServiceSpec>,
    env: Mutex<Environment>,
    store: RwLock<MetricStore>,
    next_cycle: Mutex<u64>,
}

impl ControlPlane {
    pub fn new(env: Environment, store: MetricStore) -> Self {
        let next = env.last_cycle().map_or(0, |c| c + 1);
        Self {
            specs: env.specs().to_vec(),
            env: Mutex::new(env),
            store: RwLock::new(store),
            next_cycle: Mutex::new(next),
        }
    }

    pub fn specs(&self) -> &[ServiceSpec] {
        &self.specs
    }

    pub fn store_snapshot(&self) -> MetricStore {
        self.store.read().expect("store lock").clone()
    }

    /// Advances the simulation one cycle and records the observations.
    pub fn tick(&self) -> Vec<MetricRecord> {
        let mut env = self.env.lock().expect("env lock");
        let mut next = self.next_cycle.lock().expect("cycle lock");
        let records = env.step(*next).expect("cycles increase monotonically");
        *next += 1;
        let mut store = self.store.write().expect("store lock");
        for r in &records {
            store
                .append(r.clone())
                .expect("cycles increase monotonically");
        }
        records
    }

    /// Merges `params` into the service's current configuration and applies
    /// the result if the whole assignment stays valid.
    pub fn set_parameters(
        &self,
        service: &ServiceId,
        params: &BTreeMap<String, f64>,
    ) -> Result<BTreeMap<String, f64>, Vec<Violation>> {
        let mut env = self.env.lock().expect("env lock");
        let mut a = env.current().clone();
        for (k, v) in params {
            a.set(service, k, *v);
        }
        validate_assignment(&a, &self.specs, a.budget)?;
        env.apply(&a)?;
        Ok(a.services[service].clone())
    }
}

fn error(status: StatusCode, message: impl Into<String>, violations: &[Violation]) -> Response {
    (
        status,
        Json(json!({ "error": message.into(), "violations": violations })),
    )
        .into_response()
}

fn known(plane: &ControlPlane, id: &str) -> Option<ServiceId> {
    plane
        .specs
        .iter()
        .find(|s| s.id.as_str() == id)
        .map(|s| s.id.clone())
}

async fn services(State(plane): State<Arc<ControlPlane>>) -> Json<Vec<ServiceSpec>> {
    Json(plane.specs.clone())
}

#[derive(Debug, Deserialize)]
struct MetricsQuery {
    service: Option<String>,
    last: Option<usize>,
}

async fn metrics(
    State(plane): State<Arc<ControlPlane>>,
    Query(q): Query<MetricsQuery>,
) -> Response {
    let window = q.last.map_or(Window::All, Window::Last);
    let store = plane.store.read().expect("store lock");
    let ids: Vec<ServiceId> = match &q.service {
        Some(id) => match known(&plane, id) {
            Some(id) => vec![id],
            None => {
                return error(
                    StatusCode::NOT_FOUND,
                    format!("unknown service `{id}`"),
                    &[],
                )
            }
        },
        None => plane.specs.iter().map(|s| s.id.clone()).collect(),
    };
    let out: Vec<&MetricRecord> = ids.iter().flat_map(|id| store.window(id, window)).collect();
    Json(out).into_response()
}

async fn set_parameters(
    State(plane): State<Arc<ControlPlane>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Response {
    let Some(service) = known(&plane, &id) else {
        return error(
            StatusCode::NOT_FOUND,
            format!("unknown service `{id}`"),
            &[],
        );
    };
    let params: BTreeMap<String, f64> = match serde_json::from_slice(&body) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed body: {e}"), &[]),
    };
    match plane.set_parameters(&service, &params) {
        Ok(current) => Json(json!({ "service": service, "parameters": current })).into_response(),
        Err(v) => error(StatusCode::BAD_REQUEST, "assignment rejected", &v),
    }
}

async fn fulfillment(State(plane): State<Arc<ControlPlane>>) -> Json<Value> {
    let store = plane.store.read().expect("store lock");
    let latest: Vec<MetricRecord> = plane
        .specs
        .iter()
        .filter_map(|s| store.window(&s.id, Window::Last(1)).pop().cloned())
        .collect();
    match score_records(&latest, &plane.specs) {
        Ok((services, global)) => Json(json!({
            "cycle": latest.iter().map(|r| r.cycle).max(),
            "services": services,
            "global": global,
        })),
        Err(_) => Json(json!({ "cycle": null, "services": {}, "global": null })),
    }
}

async fn step(State(plane): State<Arc<ControlPlane>>) -> Json<Vec<MetricRecord>> {
    Json(plane.tick())
}

pub fn router(plane: Arc<ControlPlane>) -> Router {
    Router::new()
        .route("/services", get(services))
        .route("/services/{id}/parameters", post(set_parameters))
        .route("/metrics", get(metrics))
        .route("/fulfillment", get(fulfillment))
        .route("/step", post(step))
        .with_state(plane)
}

/// Serves until the process is stopped. With `tick` set, a background task
/// advances the simulation on that period; otherwise only `POST /step` does.
pub async fn serve(
    plane: Arc<ControlPlane>,
    addr: SocketAddr,
    tick: Option<Duration>,
) -> std::io::Result<()> {
    if let Some(period) = tick {
        let p = plane.clone();
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(period);
            interval.tick().await;
            loop {
                interval.tick().await;
                p.tick();
            }
        });
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(plane)).await
}
