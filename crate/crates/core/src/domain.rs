//! Shared vocabulary: parameter and SLO specifications, joint assignments,
//! and the fulfillment arithmetic every other module scores with.
//!
//! Scoring lives here and nowhere else. An at-least SLO scores the clamped
//! ratio `value / threshold`; a service scores the weighted mean of its SLOs;
//! the device scores the unweighted mean of its services.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CORES: &str = "cores";
pub const DATA_QUALITY: &str = "data_quality";
pub const MODEL_SIZE: &str = "model_size";
pub const COMPLETION: &str = "completion";

/// Global CPU budget shared by all co-located services.
pub const DEFAULT_BUDGET: f64 = 8.0;
/// Smallest core share a service may be given.
pub const MIN_CORES: f64 = 0.1;

const LATTICE_EPS: f64 = 1e-9;
const BUDGET_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid SLO on `{variable}`: threshold {threshold} must be positive")]
    InvalidSlo { variable: String, threshold: f64 },
    #[error("incomplete metrics: missing variable `{variable}`")]
    IncompleteMetrics { variable: String },
    #[error("cannot aggregate fulfillment over an empty set")]
    Empty,
    #[error("invalid service spec `{service}`: {reason}")]
    InvalidSpec { service: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServiceId(String);

impl ServiceId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ServiceId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceKind {
    /// QR code reader.
    Qr,
    /// Object detection; exposes a model-size knob.
    Cv,
    /// Point cloud mapper.
    Pc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Granularity {
    Continuous,
    Discrete { step: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub granularity: Granularity,
    /// Directly settable (part of the action space) or observed only.
    pub adjustable: bool,
}

impl ParameterSpec {
    pub fn discrete(name: &str, lower: f64, upper: f64, step: f64) -> Self {
        Self {
            name: name.to_owned(),
            lower,
            upper,
            granularity: Granularity::Discrete { step },
            adjustable: true,
        }
    }

    pub fn continuous(name: &str, lower: f64, upper: f64) -> Self {
        Self {
            name: name.to_owned(),
            lower,
            upper,
            granularity: Granularity::Continuous,
            adjustable: true,
        }
    }

    pub fn observed(name: &str, lower: f64, upper: f64) -> Self {
        Self {
            adjustable: false,
            ..Self::continuous(name, lower, upper)
        }
    }

    pub fn step(&self) -> Option<f64> {
        match self.granularity {
            Granularity::Discrete { step } => Some(step),
            Granularity::Continuous => None,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if !(self.lower < self.upper) {
            return Err(format!(
                "`{}`: lower {} must be < upper {}",
                self.name, self.lower, self.upper
            ));
        }
        if let Some(step) = self.step() {
            if !(step > 0.0) {
                return Err(format!("`{}`: step {step} must be positive", self.name));
            }
            let k = (self.upper - self.lower) / step;
            if (k - k.round()).abs() > LATTICE_EPS * k.abs().max(1.0) {
                return Err(format!(
                    "`{}`: range {}..{} is not a multiple of step {step}",
                    self.name, self.lower, self.upper
                ));
            }
        }
        Ok(())
    }

    /// Number of lattice points, `None` for continuous parameters.
    pub fn lattice_len(&self) -> Option<usize> {
        self.step()
            .map(|step| ((self.upper - self.lower) / step).round() as usize + 1)
    }

    /// The `index`-th lattice value (`lower + index * step`).
    pub fn lattice_value(&self, index: usize) -> f64 {
        let step = self.step().unwrap_or(0.0);
        self.lower + index as f64 * step
    }

    /// All lattice values, `None` for continuous parameters.
    pub fn lattice(&self) -> Option<Vec<f64>> {
        self.lattice_len()
            .map(|n| (0..n).map(|i| self.lattice_value(i)).collect())
    }

    /// Position of `value` on the lattice, if it lies on one.
    pub fn lattice_index(&self, value: f64) -> Option<usize> {
        let step = self.step()?;
        let k = (value - self.lower) / step;
        let r = k.round();
        if (k - r).abs() <= LATTICE_EPS * k.abs().max(1.0) && r >= 0.0 {
            Some(r as usize)
        } else {
            None
        }
    }

    pub fn in_bounds(&self, value: f64) -> bool {
        value >= self.lower && value <= self.upper
    }

    pub fn on_lattice(&self, value: f64) -> bool {
        self.step().is_none() || self.lattice_index(value).is_some()
    }

    /// Clamp into bounds and round to the nearest lattice point.
    pub fn snap(&self, value: f64) -> f64 {
        let v = value.clamp(self.lower, self.upper);
        match self.step() {
            Some(step) => {
                let k = ((v - self.lower) / step).round() as usize;
                self.lattice_value(k.min(self.lattice_len().unwrap_or(1) - 1))
            }
            None => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SloSpec {
    pub variable: String,
    pub comparator: Comparator,
    pub threshold: f64,
    pub weight: f64,
}

impl SloSpec {
    pub fn at_least(variable: &str, threshold: f64, weight: f64) -> Self {
        Self {
            variable: variable.to_owned(),
            comparator: Comparator::AtLeast,
            threshold,
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub id: ServiceId,
    pub kind: ServiceKind,
    pub parameters: Vec<ParameterSpec>,
    pub slos: Vec<SloSpec>,
    /// Expert-declared inputs of the completion rate, in model order.
    pub completion_parents: Vec<String>,
}

impl ServiceSpec {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSpec> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn adjustable(&self) -> impl Iterator<Item = &ParameterSpec> {
        self.parameters.iter().filter(|p| p.adjustable)
    }

    /// Every variable a metric record of this service carries.
    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.parameters.iter().map(|p| p.name.as_str())
    }

    pub fn check(&self) -> Result<(), DomainError> {
        let invalid = |reason: String| DomainError::InvalidSpec {
            service: self.id.to_string(),
            reason,
        };
        for p in &self.parameters {
            p.check().map_err(invalid)?;
        }
        let completion = self
            .parameter(COMPLETION)
            .ok_or_else(|| invalid("missing observed `completion` variable".into()))?;
        if completion.adjustable || completion.lower != 0.0 || completion.upper != 1.0 {
            return Err(invalid(
                "`completion` must be observed-only with bounds [0, 1]".into(),
            ));
        }
        if !self.parameter(CORES).is_some_and(|p| p.adjustable) {
            return Err(invalid("missing adjustable `cores`".into()));
        }
        for slo in &self.slos {
            if self.parameter(&slo.variable).is_none() {
                return Err(invalid(format!(
                    "SLO on undeclared variable `{}`",
                    slo.variable
                )));
            }
            if !(slo.weight > 0.0 && slo.weight <= 1.0) {
                return Err(invalid(format!("SLO weight {} outside (0, 1]", slo.weight)));
            }
            if !(slo.threshold > 0.0) {
                return Err(invalid(format!(
                    "SLO threshold {} must be positive",
                    slo.threshold
                )));
            }
        }
        for parent in &self.completion_parents {
            match self.parameter(parent) {
                Some(p) if p.adjustable => {}
                _ => {
                    return Err(invalid(format!(
                        "completion parent `{parent}` is not adjustable"
                    )))
                }
            }
        }
        Ok(())
    }
}

/// The built-in QR / CV / PC services with their demo bounds, steps, SLOs
/// and weights.
pub fn default_services() -> Vec<ServiceSpec> {
    let cores = || ParameterSpec::continuous(CORES, 0.0, DEFAULT_BUDGET);
    let completion = || ParameterSpec::observed(COMPLETION, 0.0, 1.0);
    vec![
        ServiceSpec {
            id: "qr".into(),
            kind: ServiceKind::Qr,
            parameters: vec![
                cores(),
                ParameterSpec::discrete(DATA_QUALITY, 100.0, 1000.0, 1.0),
                completion(),
            ],
            slos: vec![
                SloSpec::at_least(DATA_QUALITY, 800.0, 0.5),
                SloSpec::at_least(COMPLETION, 1.0, 1.0),
            ],
            completion_parents: vec![CORES.into(), DATA_QUALITY.into()],
        },
        ServiceSpec {
            id: "cv".into(),
            kind: ServiceKind::Cv,
            parameters: vec![
                cores(),
                ParameterSpec::discrete(DATA_QUALITY, 128.0, 320.0, 32.0),
                // 1..4 index the detector variants n/s/m/l
                ParameterSpec::discrete(MODEL_SIZE, 1.0, 4.0, 1.0),
                completion(),
            ],
            slos: vec![
                SloSpec::at_least(DATA_QUALITY, 288.0, 0.2),
                SloSpec::at_least(MODEL_SIZE, 3.0, 0.2),
                SloSpec::at_least(COMPLETION, 1.0, 1.0),
            ],
            completion_parents: vec![CORES.into(), DATA_QUALITY.into(), MODEL_SIZE.into()],
        },
        ServiceSpec {
            id: "pc".into(),
            kind: ServiceKind::Pc,
            parameters: vec![
                cores(),
                ParameterSpec::discrete(DATA_QUALITY, 6.0, 60.0, 1.0),
                completion(),
            ],
            slos: vec![
                SloSpec::at_least(DATA_QUALITY, 40.0, 0.5),
                SloSpec::at_least(COMPLETION, 1.0, 1.0),
            ],
            completion_parents: vec![CORES.into(), DATA_QUALITY.into()],
        },
    ]
}

/// A joint configuration: adjustable parameter values per service plus the
/// core budget they share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub budget: f64,
    pub services: BTreeMap<ServiceId, BTreeMap<String, f64>>,
}

impl Assignment {
    pub fn new(budget: f64) -> Self {
        Self {
            budget,
            services: BTreeMap::new(),
        }
    }

    pub fn get(&self, service: &ServiceId, variable: &str) -> Option<f64> {
        self.services.get(service)?.get(variable).copied()
    }

    pub fn set(&mut self, service: &ServiceId, variable: &str, value: f64) {
        self.services
            .entry(service.clone())
            .or_default()
            .insert(variable.to_owned(), value);
    }

    pub fn total_cores(&self) -> f64 {
        self.services
            .values()
            .filter_map(|params| params.get(CORES))
            .sum()
    }

    /// Equal core split with every other adjustable parameter at its lower
    /// bound; the starting configuration of an experiment.
    pub fn baseline(specs: &[ServiceSpec], budget: f64) -> Self {
        let share = budget / specs.len().max(1) as f64;
        let mut a = Self::new(budget);
        for spec in specs {
            for p in spec.adjustable() {
                let v = if p.name == CORES { share } else { p.lower };
                a.set(&spec.id, &p.name, v);
            }
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    OutOfBounds { lower: f64, upper: f64 },
    OffLattice { lower: f64, step: f64 },
    BudgetExceeded { budget: f64 },
    CoresBelowMinimum { minimum: f64 },
    MissingParameter,
    UnknownParameter,
    ObservedOnly,
    UnknownService,
    MissingService,
    NotFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// `None` for the device-wide budget violation.
    pub service: Option<ServiceId>,
    pub variable: Option<String>,
    pub value: Option<f64>,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let service = self.service.as_ref().map_or("*", |s| s.as_str());
        let variable = self.variable.as_deref().unwrap_or("*");
        write!(f, "{service}.{variable}")?;
        if let Some(v) = self.value {
            write!(f, " = {v}")?;
        }
        match &self.kind {
            ViolationKind::OutOfBounds { lower, upper } => {
                write!(f, ": outside [{lower}, {upper}]")
            }
            ViolationKind::OffLattice { lower, step } => {
                write!(f, ": not on lattice {lower} + k*{step}")
            }
            ViolationKind::BudgetExceeded { budget } => {
                write!(f, ": core total exceeds budget {budget}")
            }
            ViolationKind::CoresBelowMinimum { minimum } => {
                write!(f, ": cores below minimum {minimum}")
            }
            ViolationKind::MissingParameter => write!(f, ": missing"),
            ViolationKind::UnknownParameter => write!(f, ": unknown parameter"),
            ViolationKind::ObservedOnly => write!(f, ": observed-only variable cannot be set"),
            ViolationKind::UnknownService => write!(f, ": unknown service"),
            ViolationKind::MissingService => write!(f, ": service missing from assignment"),
            ViolationKind::NotFinite => write!(f, ": not a finite number"),
        }
    }
}

/// Checks every invariant of an assignment and reports all violations.
pub fn validate_assignment(
    a: &Assignment,
    specs: &[ServiceSpec],
    budget: f64,
) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut push = |service: &ServiceId, variable: Option<&str>, value: Option<f64>, kind| {
        out.push(Violation {
            service: Some(service.clone()),
            variable: variable.map(str::to_owned),
            value,
            kind,
        })
    };

    for id in a.services.keys() {
        if !specs.iter().any(|s| &s.id == id) {
            push(id, None, None, ViolationKind::UnknownService);
        }
    }

    for spec in specs {
        let Some(params) = a.services.get(&spec.id) else {
            push(&spec.id, None, None, ViolationKind::MissingService);
            continue;
        };
        for (name, &value) in params {
            match spec.parameter(name) {
                None => push(
                    &spec.id,
                    Some(name),
                    Some(value),
                    ViolationKind::UnknownParameter,
                ),
                Some(p) if !p.adjustable => push(
                    &spec.id,
                    Some(name),
                    Some(value),
                    ViolationKind::ObservedOnly,
                ),
                Some(_) => {}
            }
        }
        for p in spec.adjustable() {
            let Some(&value) = params.get(&p.name) else {
                push(
                    &spec.id,
                    Some(&p.name),
                    None,
                    ViolationKind::MissingParameter,
                );
                continue;
            };
            if !value.is_finite() {
                push(
                    &spec.id,
                    Some(&p.name),
                    Some(value),
                    ViolationKind::NotFinite,
                );
                continue;
            }
            if p.name == CORES && value < MIN_CORES {
                push(
                    &spec.id,
                    Some(&p.name),
                    Some(value),
                    ViolationKind::CoresBelowMinimum { minimum: MIN_CORES },
                );
            } else if !p.in_bounds(value) {
                push(
                    &spec.id,
                    Some(&p.name),
                    Some(value),
                    ViolationKind::OutOfBounds {
                        lower: p.lower,
                        upper: p.upper,
                    },
                );
            } else if let Some(step) = p.step() {
                if !p.on_lattice(value) {
                    push(
                        &spec.id,
                        Some(&p.name),
                        Some(value),
                        ViolationKind::OffLattice {
                            lower: p.lower,
                            step,
                        },
                    );
                }
            }
        }
    }

    let total = a.total_cores();
    if total > budget + BUDGET_EPS {
        out.push(Violation {
            service: None,
            variable: Some(CORES.to_owned()),
            value: Some(total),
            kind: ViolationKind::BudgetExceeded { budget },
        });
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Fulfillment of a single at-least SLO: `clamp(value / threshold, 0, 1)`.
pub fn slo_fulfillment(value: f64, slo: &SloSpec) -> Result<f64, DomainError> {
    if !(slo.threshold > 0.0) {
        return Err(DomainError::InvalidSlo {
            variable: slo.variable.clone(),
            threshold: slo.threshold,
        });
    }
    let score = match slo.comparator {
        Comparator::AtLeast if value >= slo.threshold => 1.0,
        Comparator::AtLeast => (value / slo.threshold).clamp(0.0, 1.0),
    };
    // NaN observations score nothing
    Ok(if score.is_nan() { 0.0 } else { score })
}

/// Weighted mean of `(value, slo)` scores.
pub fn weighted_fulfillment<'a>(
    scored: impl IntoIterator<Item = (f64, &'a SloSpec)>,
) -> Result<f64, DomainError> {
    let (mut num, mut den) = (0.0, 0.0);
    for (value, slo) in scored {
        num += slo.weight * slo_fulfillment(value, slo)?;
        den += slo.weight;
    }
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(DomainError::Empty)
    }
}

/// Weighted mean SLO fulfillment of one service's observed metrics.
pub fn service_fulfillment(
    metrics: &BTreeMap<String, f64>,
    slos: &[SloSpec],
) -> Result<f64, DomainError> {
    let scored = slos
        .iter()
        .map(|slo| {
            metrics
                .get(&slo.variable)
                .map(|&v| (v, slo))
                .ok_or_else(|| DomainError::IncompleteMetrics {
                    variable: slo.variable.clone(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    weighted_fulfillment(scored)
}

/// Unweighted mean across services.
pub fn global_fulfillment(per_service: &[f64]) -> Result<f64, DomainError> {
    if per_service.is_empty() {
        return Err(DomainError::Empty);
    }
    Ok(per_service.iter().sum::<f64>() / per_service.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn metrics(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn spec(id: &str) -> ServiceSpec {
        default_services()
            .into_iter()
            .find(|s| s.id.as_str() == id)
            .unwrap()
    }

    fn valid() -> Assignment {
        let mut a = Assignment::new(DEFAULT_BUDGET);
        for (id, q, c) in [("qr", 500.0, 2.0), ("cv", 256.0, 3.0), ("pc", 40.0, 3.0)] {
            a.set(&id.into(), DATA_QUALITY, q);
            a.set(&id.into(), CORES, c);
        }
        a.set(&"cv".into(), MODEL_SIZE, 2.0);
        a
    }

    #[test]
    fn slo_examples() {
        let slo = SloSpec::at_least(DATA_QUALITY, 800.0, 0.5);
        assert_eq!(slo_fulfillment(800.0, &slo).unwrap(), 1.0);
        assert_eq!(slo_fulfillment(400.0, &slo).unwrap(), 0.5);
        assert_eq!(slo_fulfillment(1000.0, &slo).unwrap(), 1.0);
        assert_eq!(slo_fulfillment(-3.0, &slo).unwrap(), 0.0);
        assert_eq!(slo_fulfillment(f64::NAN, &slo).unwrap(), 0.0);
    }

    #[test]
    fn slo_rejects_non_positive_threshold() {
        let slo = SloSpec::at_least(DATA_QUALITY, 0.0, 0.5);
        assert!(matches!(
            slo_fulfillment(1.0, &slo),
            Err(DomainError::InvalidSlo { .. })
        ));
    }

    #[test]
    fn service_examples() {
        let qr = spec("qr");
        let v = service_fulfillment(
            &metrics(&[(DATA_QUALITY, 1000.0), (COMPLETION, 0.8)]),
            &qr.slos,
        )
        .unwrap();
        assert!((v - 1.3 / 1.5).abs() < 1e-9);

        let cv = spec("cv");
        let m = metrics(&[(DATA_QUALITY, 288.0), (MODEL_SIZE, 3.0), (COMPLETION, 0.5)]);
        assert!((service_fulfillment(&m, &cv.slos).unwrap() - 0.9 / 1.4).abs() < 1e-9);

        let all_met = metrics(&[(DATA_QUALITY, 320.0), (MODEL_SIZE, 4.0), (COMPLETION, 1.0)]);
        assert_eq!(service_fulfillment(&all_met, &cv.slos).unwrap(), 1.0);
    }

    #[test]
    fn service_missing_variable_is_named() {
        let err =
            service_fulfillment(&metrics(&[(DATA_QUALITY, 900.0)]), &spec("qr").slos).unwrap_err();
        assert_eq!(
            err,
            DomainError::IncompleteMetrics {
                variable: COMPLETION.into()
            }
        );
    }

    #[test]
    fn global_examples() {
        assert_eq!(global_fulfillment(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert!((global_fulfillment(&[0.5, 0.7, 0.9]).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(global_fulfillment(&[0.8667]).unwrap(), 0.8667);
        assert_eq!(global_fulfillment(&[]), Err(DomainError::Empty));
    }

    #[test]
    fn default_specs_are_well_formed() {
        for s in default_services() {
            s.check().unwrap();
        }
    }

    #[test]
    fn validate_ok_example() {
        let specs = default_services();
        assert_eq!(
            validate_assignment(&valid(), &specs, DEFAULT_BUDGET),
            Ok(())
        );
        let baseline = Assignment::baseline(&specs, DEFAULT_BUDGET);
        assert_eq!(
            validate_assignment(&baseline, &specs, DEFAULT_BUDGET),
            Ok(())
        );
    }

    #[test]
    fn validate_off_lattice() {
        let specs = default_services();
        let mut a = valid();
        a.set(&"cv".into(), DATA_QUALITY, 300.0);
        let v = validate_assignment(&a, &specs, DEFAULT_BUDGET).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].service, Some("cv".into()));
        assert_eq!(v[0].value, Some(300.0));
        assert_eq!(
            v[0].kind,
            ViolationKind::OffLattice {
                lower: 128.0,
                step: 32.0
            }
        );
    }

    #[test]
    fn validate_reports_every_violation() {
        let specs = default_services();
        let mut a = valid();
        for id in ["qr", "cv", "pc"] {
            a.set(&id.into(), CORES, 3.0);
        }
        a.set(&"pc".into(), DATA_QUALITY, 61.0);
        a.set(&"qr".into(), COMPLETION, 1.0);
        let v = validate_assignment(&a, &specs, DEFAULT_BUDGET).unwrap_err();
        let kinds: Vec<_> = v.iter().map(|x| &x.kind).collect();
        assert!(kinds.contains(&&ViolationKind::BudgetExceeded { budget: 8.0 }));
        assert!(kinds.contains(&&ViolationKind::OutOfBounds {
            lower: 6.0,
            upper: 60.0
        }));
        assert!(kinds.contains(&&ViolationKind::ObservedOnly));
        let budget = v.iter().find(|x| x.service.is_none()).unwrap();
        assert_eq!(budget.value, Some(9.0));
    }

    #[test]
    fn validate_rejects_non_positive_and_tiny_cores() {
        let specs = default_services();
        for bad in [0.0, -1.0, 0.05] {
            let mut a = valid();
            a.set(&"qr".into(), CORES, bad);
            let v = validate_assignment(&a, &specs, DEFAULT_BUDGET).unwrap_err();
            assert_eq!(
                v[0].kind,
                ViolationKind::CoresBelowMinimum { minimum: MIN_CORES }
            );
        }
    }

    #[test]
    fn validate_missing_and_unknown() {
        let specs = default_services();
        let mut a = valid();
        a.services
            .get_mut(&ServiceId::from("cv"))
            .unwrap()
            .remove(MODEL_SIZE);
        a.set(&"xx".into(), CORES, 0.5);
        let v = validate_assignment(&a, &specs, DEFAULT_BUDGET).unwrap_err();
        assert!(v.iter().any(|x| x.kind == ViolationKind::MissingParameter));
        assert!(v.iter().any(|x| x.kind == ViolationKind::UnknownService));
    }

    #[test]
    fn lattice_helpers() {
        let p = ParameterSpec::discrete(DATA_QUALITY, 128.0, 320.0, 32.0);
        assert_eq!(p.lattice_len(), Some(7));
        assert_eq!(p.lattice().unwrap().last(), Some(&320.0));
        assert_eq!(p.snap(300.0), 288.0);
        assert_eq!(p.snap(1e6), 320.0);
        assert!(p.on_lattice(192.0));
        assert!(!p.on_lattice(193.0));
        let bad = ParameterSpec::discrete("x", 0.0, 10.0, 3.0);
        assert!(bad.check().is_err());
    }

    proptest! {
        #[test]
        fn slo_monotone_and_bounded(a in -1e4f64..1e4, b in -1e4f64..1e4, t in 1e-3f64..1e3) {
            let slo = SloSpec::at_least("x", t, 1.0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let fl = slo_fulfillment(lo, &slo).unwrap();
            let fh = slo_fulfillment(hi, &slo).unwrap();
            prop_assert!(fl <= fh);
            prop_assert!((0.0..=1.0).contains(&fl) && (0.0..=1.0).contains(&fh));
        }

        #[test]
        fn snapping_keeps_valid_assignments_valid(
            q in 100.0f64..=1000.0, cvq in 128.0f64..=320.0, m in 1.0f64..=4.0, pcq in 6.0f64..=60.0,
        ) {
            let specs = default_services();
            let mut a = valid();
            a.set(&"qr".into(), DATA_QUALITY, specs[0].parameter(DATA_QUALITY).unwrap().snap(q));
            a.set(&"cv".into(), DATA_QUALITY, specs[1].parameter(DATA_QUALITY).unwrap().snap(cvq));
            a.set(&"cv".into(), MODEL_SIZE, specs[1].parameter(MODEL_SIZE).unwrap().snap(m));
            a.set(&"pc".into(), DATA_QUALITY, specs[2].parameter(DATA_QUALITY).unwrap().snap(pcq));
            prop_assert!(validate_assignment(&a, &specs, DEFAULT_BUDGET).is_ok());
            let mut resnapped = a.clone();
            for spec in &specs {
                for p in spec.adjustable() {
                    let v = a.get(&spec.id, &p.name).unwrap();
                    resnapped.set(&spec.id, &p.name, p.snap(v));
                }
            }
            prop_assert_eq!(resnapped, a);
        }
    }
}
