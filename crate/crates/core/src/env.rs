//! Simulated co-located services.
//!
//! Each service needs `demand = base * (quality / q_ref)^alpha * model_factor`
//! core-seconds per item; with `cores` allotted it finishes
//! `throughput = cores / demand` items per second against an arrival rate
//! `lambda`, so `completion = clamp(throughput / lambda, 0, 1)`. Observed
//! completion carries zero-mean Gaussian noise; parameters are observed
//! exactly as set.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    validate_assignment, Assignment, ServiceId, ServiceSpec, Violation, COMPLETION, CORES,
    DATA_QUALITY, MODEL_SIZE,
};
use crate::store::MetricRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("cycle {cycle} does not follow previous cycle {previous}")]
    OutOfOrder { cycle: u64, previous: u64 },
    #[error("`{service}`: missing parent variable `{variable}`")]
    MissingParent {
        service: ServiceId,
        variable: String,
    },
    #[error("no ground truth for service `{0}`")]
    UnknownService(ServiceId),
    #[error("`{service}`: no demand factor for model size {model}")]
    UnknownModelSize { service: ServiceId, model: f64 },
    #[error("invalid ground truth for `{service}`: {reason}")]
    InvalidTruth { service: ServiceId, reason: String },
}

/// Latent performance constants of one service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceTruth {
    /// Core-seconds per item at the reference quality.
    pub base_demand: f64,
    pub quality_exponent: f64,
    pub quality_reference: f64,
    /// Demand multiplier per model-size index; empty when the service has no
    /// model-size knob.
    #[serde(default)]
    pub model_factor: BTreeMap<u32, f64>,
    /// Items per second.
    pub arrival_rate: f64,
    pub noise_sigma: f64,
}

impl ServiceTruth {
    pub fn check(&self) -> Result<(), String> {
        if !(self.base_demand > 0.0) {
            return Err(format!("base_demand {} must be positive", self.base_demand));
        }
        if !(self.arrival_rate > 0.0) {
            return Err(format!(
                "arrival_rate {} must be positive",
                self.arrival_rate
            ));
        }
        if !(self.quality_exponent >= 0.0) {
            return Err(format!(
                "quality_exponent {} must be non-negative",
                self.quality_exponent
            ));
        }
        if !(self.quality_reference > 0.0) {
            return Err(format!(
                "quality_reference {} must be positive",
                self.quality_reference
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(format!(
                "noise_sigma {} must be non-negative",
                self.noise_sigma
            ));
        }
        let mut prev = 1.0;
        for (&m, &f) in &self.model_factor {
            if !(f >= prev) {
                return Err(format!(
                    "model_factor[{m}] = {f} must be >= 1 and non-decreasing"
                ));
            }
            prev = f;
        }
        Ok(())
    }

    fn model_multiplier(&self, model: Option<f64>) -> Option<f64> {
        match model {
            _ if self.model_factor.is_empty() => Some(1.0),
            None => None,
            Some(m) => {
                let idx = m.round();
                if (m - idx).abs() > 1e-9 || idx < 0.0 {
                    return None;
                }
                self.model_factor.get(&(idx as u32)).copied()
            }
        }
    }

    /// Per-item demand in core-seconds.
    pub fn demand(&self, quality: f64, model: Option<f64>) -> Option<f64> {
        let mfac = self.model_multiplier(model)?;
        Some(
            self.base_demand
                * (quality / self.quality_reference).powf(self.quality_exponent)
                * mfac,
        )
    }

    /// Noise-free completion rate before clamping.
    pub fn raw_completion(&self, cores: f64, quality: f64, model: Option<f64>) -> Option<f64> {
        Some(cores / self.demand(quality, model)? / self.arrival_rate)
    }

    pub fn completion(&self, cores: f64, quality: f64, model: Option<f64>) -> Option<f64> {
        self.raw_completion(cores, quality, model)
            .map(|v| v.clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundTruthModel {
    pub services: BTreeMap<ServiceId, ServiceTruth>,
}

impl Default for GroundTruthModel {
    fn default() -> Self {
        let truth = |base_demand, quality_reference, model_factor: &[(u32, f64)]| ServiceTruth {
            base_demand,
            quality_exponent: 2.0,
            quality_reference,
            model_factor: model_factor.iter().copied().collect(),
            arrival_rate: 1.0,
            noise_sigma: 0.02,
        };
        Self {
            services: [
                ("qr".into(), truth(2.0, 1000.0, &[])),
                (
                    "cv".into(),
                    truth(1.2, 320.0, &[(1, 1.0), (2, 1.6), (3, 2.4), (4, 3.4)]),
                ),
                ("pc".into(), truth(1.5, 60.0, &[])),
            ]
            .into_iter()
            .collect(),
        }
    }
}

impl GroundTruthModel {
    pub fn with_noise(mut self, sigma: f64) -> Self {
        for t in self.services.values_mut() {
            t.noise_sigma = sigma;
        }
        self
    }

    pub fn service(&self, id: &ServiceId) -> Result<&ServiceTruth, EnvError> {
        self.services
            .get(id)
            .ok_or_else(|| EnvError::UnknownService(id.clone()))
    }

    pub fn check(&self, specs: &[ServiceSpec]) -> Result<(), EnvError> {
        for spec in specs {
            let t = self.service(&spec.id)?;
            t.check().map_err(|reason| EnvError::InvalidTruth {
                service: spec.id.clone(),
                reason,
            })?;
            if spec.parameter(MODEL_SIZE).is_some() {
                for m in spec
                    .parameter(MODEL_SIZE)
                    .and_then(|p| p.lattice())
                    .unwrap_or_default()
                {
                    if t.model_multiplier(Some(m)).is_none() {
                        return Err(EnvError::UnknownModelSize {
                            service: spec.id.clone(),
                            model: m,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Noise-free completion of `spec` under `params`.
    pub fn true_completion(
        &self,
        spec: &ServiceSpec,
        params: &BTreeMap<String, f64>,
    ) -> Result<f64, EnvError> {
        let get = |name: &str| {
            params
                .get(name)
                .copied()
                .ok_or_else(|| EnvError::MissingParent {
                    service: spec.id.clone(),
                    variable: name.to_owned(),
                })
        };
        for parent in &spec.completion_parents {
            get(parent)?;
        }
        let truth = self.service(&spec.id)?;
        let model = match spec.parameter(MODEL_SIZE) {
            Some(_) => Some(get(MODEL_SIZE)?),
            None => None,
        };
        truth
            .completion(get(CORES)?, get(DATA_QUALITY)?, model)
            .ok_or_else(|| EnvError::UnknownModelSize {
                service: spec.id.clone(),
                model: model.unwrap_or(f64::NAN),
            })
    }
}

/// The simulated device: current configuration plus a seeded noise source.
#[derive(Debug, Clone)]
pub struct Environment {
    specs: Vec<ServiceSpec>,
    truth: GroundTruthModel,
    current: Assignment,
    rng: ChaCha8Rng,
    last_cycle: Option<u64>,
}

impl Environment {
    /// Starts from the baseline assignment (equal split, minimum qualities).
    pub fn new(
        specs: Vec<ServiceSpec>,
        truth: GroundTruthModel,
        budget: f64,
        seed: u64,
    ) -> Result<Self, EnvError> {
        truth.check(&specs)?;
        let current = Assignment::baseline(&specs, budget);
        Ok(Self {
            specs,
            truth,
            current,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_cycle: None,
        })
    }

    pub fn specs(&self) -> &[ServiceSpec] {
        &self.specs
    }

    pub fn truth(&self) -> &GroundTruthModel {
        &self.truth
    }

    pub fn current(&self) -> &Assignment {
        &self.current
    }

    pub fn budget(&self) -> f64 {
        self.current.budget
    }

    pub fn last_cycle(&self) -> Option<u64> {
        self.last_cycle
    }

    /// Replaces the active configuration if it is valid; otherwise leaves the
    /// state untouched and returns the violations.
    pub fn apply(&mut self, a: &Assignment) -> Result<(), Vec<Violation>> {
        validate_assignment(a, &self.specs, self.current.budget)?;
        let budget = self.current.budget;
        self.current = a.clone();
        self.current.budget = budget;
        Ok(())
    }

    pub fn true_completion(
        &self,
        service: &ServiceId,
        params: &BTreeMap<String, f64>,
    ) -> Result<f64, EnvError> {
        let spec = self
            .specs
            .iter()
            .find(|s| &s.id == service)
            .ok_or_else(|| EnvError::UnknownService(service.clone()))?;
        self.truth.true_completion(spec, params)
    }

    /// Runs one cycle and reports one record per service, in spec order.
    pub fn step(&mut self, cycle: u64) -> Result<Vec<MetricRecord>, EnvError> {
        if let Some(previous) = self.last_cycle {
            if cycle <= previous {
                return Err(EnvError::OutOfOrder { cycle, previous });
            }
        }
        let mut out = Vec::with_capacity(self.specs.len());
        for spec in &self.specs {
            let params = self
                .current
                .services
                .get(&spec.id)
                .cloned()
                .unwrap_or_default();
            let truth = self.truth.service(&spec.id)?;
            let clean = self.truth.true_completion(spec, &params)?;
            let eps: f64 = StandardNormal.sample(&mut self.rng);
            let mut metrics = params;
            metrics.insert(
                COMPLETION.to_owned(),
                (clean + truth.noise_sigma * eps).clamp(0.0, 1.0),
            );
            out.push(MetricRecord {
                cycle,
                service: spec.id.clone(),
                metrics,
            });
        }
        self.last_cycle = Some(cycle);
        Ok(out)
    }
}
