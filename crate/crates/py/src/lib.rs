//! Python bindings. Structured values cross the boundary as plain
//! dicts and lists.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

use autoscale::agent::{self, AgentSettings, StructuralKnowledge};
use autoscale::domain::{self, Assignment, ServiceSpec, SloSpec, DEFAULT_BUDGET};
use autoscale::env;
use autoscale::harness::{self, ExperimentConfig};
use autoscale::solver::{oracle_solve_truth, OracleCoarsening};
use autoscale::store::{self, MetricRecord, Window};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(value).map_err(value_error)?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let s: String = obj
        .py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&s).map_err(value_error)
}

fn config(cfg: Option<&Bound<'_, PyDict>>) -> PyResult<ExperimentConfig> {
    let cfg = match cfg {
        Some(d) => from_py(d.as_any())?,
        None => ExperimentConfig::default(),
    };
    cfg.validate().map_err(value_error)?;
    Ok(cfg)
}

fn specs_or_default(specs: Option<&Bound<'_, PyAny>>) -> PyResult<Vec<ServiceSpec>> {
    specs.map_or_else(|| Ok(domain::default_services()), from_py)
}

#[pyfunction]
fn default_services(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_py(py, &domain::default_services())
}

#[pyfunction]
#[pyo3(signature = (value, threshold, weight = 1.0))]
fn slo_fulfillment(value: f64, threshold: f64, weight: f64) -> PyResult<f64> {
    domain::slo_fulfillment(value, &SloSpec::at_least("value", threshold, weight))
        .map_err(value_error)
}

#[pyfunction]
fn service_fulfillment(metrics: BTreeMap<String, f64>, slos: &Bound<'_, PyAny>) -> PyResult<f64> {
    let slos: Vec<SloSpec> = from_py(slos)?;
    domain::service_fulfillment(&metrics, &slos).map_err(value_error)
}

#[pyfunction]
fn global_fulfillment(values: Vec<f64>) -> PyResult<f64> {
    domain::global_fulfillment(&values).map_err(value_error)
}

/// Returns the list of violations; empty when the assignment is valid.
#[pyfunction]
#[pyo3(signature = (assignment, specs = None, budget = DEFAULT_BUDGET))]
fn validate_assignment(
    py: Python<'_>,
    assignment: &Bound<'_, PyAny>,
    specs: Option<&Bound<'_, PyAny>>,
    budget: f64,
) -> PyResult<Py<PyAny>> {
    let a = assignment_from_py(assignment, budget)?;
    let specs = specs_or_default(specs)?;
    let violations = domain::validate_assignment(&a, &specs, budget)
        .err()
        .unwrap_or_default();
    to_py(py, &violations)
}

/// `{service: {parameter: value}}` into an assignment.
fn assignment_from_py(obj: &Bound<'_, PyAny>, budget: f64) -> PyResult<Assignment> {
    Ok(Assignment {
        budget,
        services: from_py(obj)?,
    })
}

#[pyclass(module = "slo_autoscale")]
struct Environment {
    inner: env::Environment,
}

#[pymethods]
impl Environment {
    #[new]
    #[pyo3(signature = (seed = 0, config = None))]
    fn new(seed: u64, config: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let cfg = self::config(config)?;
        let inner = env::Environment::new(cfg.services, cfg.truth, cfg.budget, seed)
            .map_err(value_error)?;
        Ok(Self { inner })
    }

    /// Raises `ValueError` carrying the violations when the assignment is invalid.
    fn apply(&mut self, assignment: &Bound<'_, PyAny>) -> PyResult<()> {
        let a = assignment_from_py(assignment, self.inner.budget())?;
        self.inner.apply(&a).map_err(|v| {
            value_error(
                v.iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; "),
            )
        })
    }

    fn step(&mut self, py: Python<'_>, cycle: u64) -> PyResult<Py<PyAny>> {
        let records = self.inner.step(cycle).map_err(value_error)?;
        to_py(py, &records)
    }

    fn current(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.current().services)
    }

    fn true_completion(&self, service: &str, params: BTreeMap<String, f64>) -> PyResult<f64> {
        self.inner
            .true_completion(&service.into(), &params)
            .map_err(value_error)
    }

    #[getter]
    fn budget(&self) -> f64 {
        self.inner.budget()
    }
}

#[pyclass(module = "slo_autoscale")]
#[derive(Default)]
struct MetricStore {
    inner: store::MetricStore,
}

#[pymethods]
impl MetricStore {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    fn append(&mut self, record: &Bound<'_, PyAny>) -> PyResult<()> {
        let r: MetricRecord = from_py(record)?;
        self.inner.append(r).map_err(value_error)
    }

    fn extend(&mut self, records: &Bound<'_, PyAny>) -> PyResult<()> {
        let rs: Vec<MetricRecord> = from_py(records)?;
        for r in rs {
            self.inner.append(r).map_err(value_error)?;
        }
        Ok(())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn records(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.records())
    }

    #[pyo3(signature = (service, columns, last = None))]
    fn to_table(
        &self,
        py: Python<'_>,
        service: &str,
        columns: Vec<String>,
        last: Option<usize>,
    ) -> PyResult<Py<PyAny>> {
        let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
        let window = last.map_or(Window::All, Window::Last);
        let t = self
            .inner
            .to_table(&service.into(), &cols, window)
            .map_err(value_error)?;
        let rows: Vec<&Vec<f64>> = t.rows.iter().map(|r| &r.values).collect();
        let cycles: Vec<u64> = t.rows.iter().map(|r| r.cycle).collect();
        to_py(
            py,
            &serde_json::json!({ "columns": t.columns, "cycles": cycles, "rows": rows }),
        )
    }

    fn persist(&self, path: &str) -> PyResult<()> {
        self.inner
            .persist(path)
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner =
            store::MetricStore::load(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }
}

#[pyclass(module = "slo_autoscale")]
struct RegressionModel {
    inner: agent::RegressionModel,
}

#[pymethods]
impl RegressionModel {
    #[getter]
    fn parents(&self) -> Vec<String> {
        self.inner.parents.clone()
    }

    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.inner.coefficients.clone()
    }

    #[getter]
    fn r_squared(&self) -> f64 {
        self.inner.r_squared
    }

    #[getter]
    fn samples(&self) -> usize {
        self.inner.samples
    }

    /// Predicted completion, clamped to [0, 1].
    fn predict(&self, params: BTreeMap<String, f64>) -> PyResult<f64> {
        self.inner.predict(&params).map_err(value_error)
    }

    fn __repr__(&self) -> String {
        format!(
            "RegressionModel(parents={:?}, samples={}, r_squared={:.4})",
            self.inner.parents, self.inner.samples, self.inner.r_squared
        )
    }
}

/// One completion model per service, fit over the whole store.
#[pyfunction]
#[pyo3(signature = (store, specs = None, training_window = None))]
fn fit_models(
    store: &MetricStore,
    specs: Option<&Bound<'_, PyAny>>,
    training_window: Option<usize>,
) -> PyResult<BTreeMap<String, RegressionModel>> {
    let specs = specs_or_default(specs)?;
    let settings = AgentSettings {
        training_window,
        ..AgentSettings::default()
    };
    let models = agent::fit_models(
        &store.inner,
        &specs,
        &StructuralKnowledge::from_specs(&specs),
        &settings,
    )
    .map_err(|(s, e)| value_error(format!("{s}: {e}")))?;
    Ok(models
        .into_iter()
        .map(|(id, inner)| (id.to_string(), RegressionModel { inner }))
        .collect())
}

/// Runs the explore/exploit experiment; returns `{"trace": [...], "summary": {...}}`.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn run_experiment(py: Python<'_>, config: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyAny>> {
    let cfg = self::config(config)?;
    let x = harness::run_experiment(&cfg).map_err(value_error)?;
    let s = harness::report(&x.trace, None)
        .map_err(value_error)?
        .summary;
    let summary = serde_json::json!({
        "cycles": s.cycles,
        "first_mean": s.first_mean,
        "last_mean": s.last_mean,
        "explore_mean": s.explore_mean,
        "exploit_mean": s.exploit_mean,
    });
    to_py(
        py,
        &serde_json::json!({ "trace": x.trace.entries, "summary": summary }),
    )
}

/// Brute-force optimum of the noise-free truth; returns `{"value", "assignment"}`.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn oracle(py: Python<'_>, config: Option<&Bound<'_, PyDict>>) -> PyResult<Py<PyAny>> {
    let cfg = self::config(config)?;
    let r = oracle_solve_truth(
        &cfg.services,
        &cfg.truth,
        cfg.budget,
        &OracleCoarsening::default(),
    )
    .map_err(value_error)?;
    to_py(
        py,
        &serde_json::json!({ "value": r.value, "assignment": r.assignment.services }),
    )
}

#[pymodule]
fn slo_autoscale(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(default_services, m)?)?;
    m.add_function(wrap_pyfunction!(slo_fulfillment, m)?)?;
    m.add_function(wrap_pyfunction!(service_fulfillment, m)?)?;
    m.add_function(wrap_pyfunction!(global_fulfillment, m)?)?;
    m.add_function(wrap_pyfunction!(validate_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(fit_models, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_class::<Environment>()?;
    m.add_class::<MetricStore>()?;
    m.add_class::<RegressionModel>()?;
    Ok(())
}
