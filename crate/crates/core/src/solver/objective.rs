use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use thiserror::Error;

use crate::agent::RegressionModel;
use crate::domain::{
    validate_assignment, weighted_fulfillment, Assignment, ParameterSpec, ServiceId, ServiceSpec,
    SloSpec, Violation, COMPLETION, CORES, DATA_QUALITY, MIN_CORES, MODEL_SIZE,
};
use crate::env::ServiceTruth;

use super::SolverSettings;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("no completion model for service `{0}`")]
    MissingModel(ServiceId),
    #[error("`{service}`: model parent `{parent}` is not an adjustable parameter")]
    ParentMismatch { service: ServiceId, parent: String },
    #[error("`{service}`: SLO on `{variable}` has no source")]
    UnknownSloVariable {
        service: ServiceId,
        variable: String,
    },
    #[error("budget {budget} cannot give {services} services {MIN_CORES} cores each")]
    BudgetTooSmall { budget: f64, services: usize },
}

/// Anything that predicts a service's completion rate from its parent
/// variables, given in `parents()` order.
pub trait CompletionModel: Debug + Send + Sync {
    fn parents(&self) -> &[String];
    fn predict_ordered(&self, values: &[f64]) -> f64;
}

impl CompletionModel for RegressionModel {
    fn parents(&self) -> &[String] {
        &self.parents
    }

    fn predict_ordered(&self, values: &[f64]) -> f64 {
        RegressionModel::predict_ordered(self, values)
    }
}

/// Noise-free ground truth exposed as a completion model.
#[derive(Debug, Clone)]
pub struct TruthModel {
    parents: Vec<String>,
    truth: ServiceTruth,
    cores: usize,
    quality: usize,
    model: Option<usize>,
}

impl TruthModel {
    pub fn new(spec: &ServiceSpec, truth: ServiceTruth) -> Option<Self> {
        let parents = spec.completion_parents.clone();
        let pos = |name: &str| parents.iter().position(|p| p == name);
        Some(Self {
            cores: pos(CORES)?,
            quality: pos(DATA_QUALITY)?,
            model: pos(MODEL_SIZE),
            parents,
            truth,
        })
    }
}

impl CompletionModel for TruthModel {
    fn parents(&self) -> &[String] {
        &self.parents
    }

    fn predict_ordered(&self, values: &[f64]) -> f64 {
        self.truth
            .completion(
                values[self.cores],
                values[self.quality],
                self.model.map(|i| values[i]),
            )
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Var(usize),
    Completion,
}

/// One service's share of the global objective. Values are held as a vector
/// aligned with `vars` (the service's adjustable parameters).
#[derive(Debug, Clone)]
pub(crate) struct ServiceObjective {
    pub(crate) spec: ServiceSpec,
    pub(crate) vars: Vec<ParameterSpec>,
    pub(crate) cores: usize,
    pub(crate) quality: Option<usize>,
    pub(crate) model_size: Option<usize>,
    model: Arc<dyn CompletionModel>,
    parent_idx: Vec<usize>,
    slos: Vec<(Source, SloSpec)>,
}

impl ServiceObjective {
    pub(crate) fn value(&self, vals: &[f64]) -> f64 {
        let parents: Vec<f64> = self.parent_idx.iter().map(|&i| vals[i]).collect();
        let completion = self.model.predict_ordered(&parents);
        let scored = self.slos.iter().map(|(src, slo)| {
            let v = match *src {
                Source::Var(i) => vals[i],
                Source::Completion => completion,
            };
            (v, slo)
        });
        // thresholds are validated positive at assembly
        weighted_fulfillment(scored).unwrap_or(0.0)
    }

    /// Tie-break key: fewer cores, then smaller model, then lower quality.
    pub(crate) fn frugality(&self, vals: &[f64]) -> (f64, f64, f64) {
        (
            vals[self.cores],
            self.model_size.map_or(0.0, |i| vals[i]),
            self.quality.map_or(0.0, |i| vals[i]),
        )
    }
}

/// Per-service values aligned with `ObjectiveSpec::services`.
pub(crate) type Point = Vec<Vec<f64>>;

/// Predicted global fulfillment over joint assignments: models, SLOs,
/// parameter bounds and the shared core budget.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    pub(crate) services: Vec<ServiceObjective>,
    pub budget: f64,
    pub settings: SolverSettings,
}

pub fn assemble_objective(
    models: &BTreeMap<ServiceId, Arc<dyn CompletionModel>>,
    specs: &[ServiceSpec],
    budget: f64,
    settings: SolverSettings,
) -> Result<ObjectiveSpec, ObjectiveError> {
    if budget < MIN_CORES * specs.len() as f64 {
        return Err(ObjectiveError::BudgetTooSmall {
            budget,
            services: specs.len(),
        });
    }
    let services = specs
        .iter()
        .map(|spec| {
            let model = models
                .get(&spec.id)
                .cloned()
                .ok_or_else(|| ObjectiveError::MissingModel(spec.id.clone()))?;
            let vars: Vec<ParameterSpec> = spec.adjustable().cloned().collect();
            let pos = |name: &str| vars.iter().position(|p| p.name == name);
            let parent_idx = model
                .parents()
                .iter()
                .map(|p| {
                    pos(p).ok_or_else(|| ObjectiveError::ParentMismatch {
                        service: spec.id.clone(),
                        parent: p.clone(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let slos = spec
                .slos
                .iter()
                .map(|slo| {
                    let src = if slo.variable == COMPLETION {
                        Source::Completion
                    } else {
                        Source::Var(pos(&slo.variable).ok_or_else(|| {
                            ObjectiveError::UnknownSloVariable {
                                service: spec.id.clone(),
                                variable: slo.variable.clone(),
                            }
                        })?)
                    };
                    Ok((src, slo.clone()))
                })
                .collect::<Result<Vec<_>, ObjectiveError>>()?;
            Ok(ServiceObjective {
                cores: pos(CORES).ok_or_else(|| ObjectiveError::ParentMismatch {
                    service: spec.id.clone(),
                    parent: CORES.into(),
                })?,
                quality: pos(DATA_QUALITY),
                model_size: pos(MODEL_SIZE),
                spec: spec.clone(),
                vars,
                model,
                parent_idx,
                slos,
            })
        })
        .collect::<Result<Vec<_>, ObjectiveError>>()?;
    Ok(ObjectiveSpec {
        services,
        budget,
        settings,
    })
}

impl ObjectiveSpec {
    pub fn specs(&self) -> Vec<ServiceSpec> {
        self.services.iter().map(|s| s.spec.clone()).collect()
    }

    pub fn validate(&self, a: &Assignment) -> Result<(), Vec<Violation>> {
        let specs = self.specs();
        validate_assignment(a, &specs, self.budget)
    }

    /// Predicted fulfillment of each service, in spec order.
    pub fn service_values(&self, a: &Assignment) -> Result<Vec<(ServiceId, f64)>, Vec<Violation>> {
        self.validate(a)?;
        let p = self.to_point(a);
        Ok(self
            .services
            .iter()
            .zip(&p)
            .map(|(s, v)| (s.spec.id.clone(), s.value(v)))
            .collect())
    }

    /// Predicted global fulfillment of a valid assignment.
    pub fn evaluate(&self, a: &Assignment) -> Result<f64, Vec<Violation>> {
        let values = self.service_values(a)?;
        Ok(values.iter().map(|(_, v)| v).sum::<f64>() / values.len() as f64)
    }

    pub(crate) fn to_point(&self, a: &Assignment) -> Point {
        self.services
            .iter()
            .map(|s| {
                s.vars
                    .iter()
                    .map(|p| a.get(&s.spec.id, &p.name).unwrap_or(p.lower))
                    .collect()
            })
            .collect()
    }

    pub(crate) fn to_assignment(&self, p: &Point) -> Assignment {
        let mut a = Assignment::new(self.budget);
        for (s, vals) in self.services.iter().zip(p) {
            for (param, &v) in s.vars.iter().zip(vals) {
                a.set(&s.spec.id, &param.name, v);
            }
        }
        a
    }
}
