//! The scaling agent. Each cycle it either explores with a random valid
//! assignment or fits one completion model per service from the metric
//! store and hands them to the solver.

mod explore;
mod regression;

pub use explore::explore_action;
pub use regression::{feature_count, FitError, RegressionModel, DEFAULT_RIDGE};

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Assignment, ServiceId, ServiceSpec, COMPLETION};
use crate::solver::{assemble_objective, solve, CompletionModel, SolverSettings};
use crate::store::{MetricStore, Window};

/// Expert-declared causal inputs of each service's completion rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub target: String,
    pub parents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StructuralKnowledge {
    pub relations: BTreeMap<ServiceId, Relation>,
}

impl StructuralKnowledge {
    pub fn from_specs(specs: &[ServiceSpec]) -> Self {
        Self {
            relations: specs
                .iter()
                .map(|s| {
                    (
                        s.id.clone(),
                        Relation {
                            target: COMPLETION.to_owned(),
                            parents: s.completion_parents.clone(),
                        },
                    )
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Explore,
    Exploit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSettings {
    /// Most recent samples used for training; `None` keeps everything.
    pub training_window: Option<usize>,
    pub ridge: f64,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            training_window: None,
            ridge: DEFAULT_RIDGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub samples: usize,
    pub r_squared: f64,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub phase: Phase,
    pub fit_count: usize,
    pub fits: BTreeMap<ServiceId, FitSummary>,
    /// Set when an exploit cycle could not fit and explored instead.
    pub fallback: Option<String>,
    /// Solver's predicted global fulfillment.
    pub predicted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub assignment: Assignment,
    pub diagnostics: Diagnostics,
}

/// Fits one model per service over the configured training window.
pub fn fit_models(
    store: &MetricStore,
    specs: &[ServiceSpec],
    knowledge: &StructuralKnowledge,
    settings: &AgentSettings,
) -> Result<BTreeMap<ServiceId, RegressionModel>, (ServiceId, FitError)> {
    let window = settings.training_window.map_or(Window::All, Window::Last);
    specs
        .iter()
        .map(|spec| {
            let fail = |e| (spec.id.clone(), e);
            let relation = knowledge
                .relations
                .get(&spec.id)
                .ok_or_else(|| fail(FitError::MissingParent(COMPLETION.into())))?;
            let bounds = relation
                .parents
                .iter()
                .map(|p| {
                    spec.parameter(p)
                        .map(|q| (q.lower, q.upper))
                        .ok_or_else(|| fail(FitError::MissingParent(p.clone())))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut columns: Vec<&str> = relation.parents.iter().map(String::as_str).collect();
            columns.push(&relation.target);
            let table = store
                .to_table(&spec.id, &columns, window)
                .map_err(|_| fail(FitError::MissingColumn(columns.join(","))))?;
            let model = RegressionModel::fit(
                &table,
                &relation.parents,
                &bounds,
                &relation.target,
                settings.ridge,
            )
            .map_err(fail)?;
            Ok((spec.id.clone(), model))
        })
        .collect()
}

/// Stateful agent: owns its random stream and the last emitted assignment,
/// which seeds the solver's first restart.
#[derive(Debug, Clone)]
pub struct Agent {
    specs: Vec<ServiceSpec>,
    knowledge: StructuralKnowledge,
    settings: AgentSettings,
    solver: SolverSettings,
    budget: f64,
    rng: ChaCha8Rng,
    incumbent: Option<Assignment>,
}

impl Agent {
    pub fn new(
        specs: Vec<ServiceSpec>,
        settings: AgentSettings,
        solver: SolverSettings,
        budget: f64,
        seed: u64,
    ) -> Self {
        Self {
            knowledge: StructuralKnowledge::from_specs(&specs),
            specs,
            settings,
            solver,
            budget,
            rng: ChaCha8Rng::seed_from_u64(seed),
            incumbent: None,
        }
    }

    pub fn with_knowledge(mut self, knowledge: StructuralKnowledge) -> Self {
        self.knowledge = knowledge;
        self
    }

    pub fn incumbent(&self) -> Option<&Assignment> {
        self.incumbent.as_ref()
    }

    pub fn cycle(&mut self, store: &MetricStore, phase: Phase) -> Decision {
        let mut diagnostics = Diagnostics {
            phase,
            fit_count: 0,
            fits: BTreeMap::new(),
            fallback: None,
            predicted: None,
        };
        let assignment = match phase {
            Phase::Explore => explore_action(&self.specs, self.budget, &mut self.rng),
            Phase::Exploit => self.exploit(store, &mut diagnostics),
        };
        self.incumbent = Some(assignment.clone());
        Decision {
            assignment,
            diagnostics,
        }
    }

    fn exploit(&mut self, store: &MetricStore, diagnostics: &mut Diagnostics) -> Assignment {
        diagnostics.fit_count = self.specs.len();
        let models = match fit_models(store, &self.specs, &self.knowledge, &self.settings) {
            Ok(m) => m,
            Err((service, e)) => {
                diagnostics.fallback = Some(format!("{service}: {e}"));
                return explore_action(&self.specs, self.budget, &mut self.rng);
            }
        };
        diagnostics.fits = models
            .iter()
            .map(|(id, m)| {
                (
                    id.clone(),
                    FitSummary {
                        samples: m.samples,
                        r_squared: m.r_squared,
                        coefficients: m.coefficients.clone(),
                    },
                )
            })
            .collect();
        let models: BTreeMap<ServiceId, Arc<dyn CompletionModel>> = models
            .into_iter()
            .map(|(id, m)| (id, Arc::new(m) as Arc<dyn CompletionModel>))
            .collect();
        match assemble_objective(&models, &self.specs, self.budget, self.solver.clone()) {
            Ok(obj) => {
                let solution = solve(&obj, self.incumbent.as_ref(), &mut self.rng);
                diagnostics.predicted = Some(solution.value);
                solution.assignment
            }
            Err(e) => {
                diagnostics.fallback = Some(e.to_string());
                explore_action(&self.specs, self.budget, &mut self.rng)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{default_services, validate_assignment, DEFAULT_BUDGET};
    use crate::env::{Environment, GroundTruthModel};

    fn agent(seed: u64) -> Agent {
        Agent::new(
            default_services(),
            AgentSettings::default(),
            SolverSettings::default(),
            DEFAULT_BUDGET,
            seed,
        )
    }

    fn filled_store(cycles: u64) -> MetricStore {
        let mut env = Environment::new(
            default_services(),
            GroundTruthModel::default(),
            DEFAULT_BUDGET,
            0,
        )
        .unwrap();
        let mut a = agent(100);
        let mut store = MetricStore::new();
        for c in 0..cycles {
            let d = a.cycle(&store, Phase::Explore);
            env.apply(&d.assignment).unwrap();
            for r in env.step(c).unwrap() {
                store.append(r).unwrap();
            }
        }
        store
    }

    #[test]
    fn explore_touches_no_regression() {
        let d = agent(0).cycle(&filled_store(3), Phase::Explore);
        assert_eq!(d.diagnostics.fit_count, 0);
        assert!(d.diagnostics.fits.is_empty());
    }

    #[test]
    fn exploit_fits_every_service() {
        let store = filled_store(30);
        let d = agent(0).cycle(&store, Phase::Exploit);
        assert_eq!(d.diagnostics.fit_count, 3);
        assert_eq!(d.diagnostics.fits.len(), 3);
        assert!(d.diagnostics.fallback.is_none());
        assert!(d.diagnostics.fits.values().all(|f| f.samples == 30));
        assert!(d.diagnostics.predicted.is_some());
        assert_eq!(
            validate_assignment(&d.assignment, &default_services(), DEFAULT_BUDGET),
            Ok(())
        );
    }

    #[test]
    fn exploit_with_empty_store_falls_back() {
        let d = agent(0).cycle(&MetricStore::new(), Phase::Exploit);
        assert!(d
            .diagnostics
            .fallback
            .as_deref()
            .unwrap()
            .contains("insufficient samples"));
        assert_eq!(
            validate_assignment(&d.assignment, &default_services(), DEFAULT_BUDGET),
            Ok(())
        );
    }

    #[test]
    fn training_window_limits_samples() {
        let store = filled_store(30);
        let settings = AgentSettings {
            training_window: Some(12),
            ..AgentSettings::default()
        };
        let models = fit_models(
            &store,
            &default_services(),
            &StructuralKnowledge::from_specs(&default_services()),
            &settings,
        )
        .unwrap();
        assert!(models.values().all(|m| m.samples == 12));
    }

    #[test]
    fn seeded_determinism() {
        let store = filled_store(30);
        let a = agent(7).cycle(&store, Phase::Exploit);
        let b = agent(7).cycle(&store, Phase::Exploit);
        assert_eq!(a, b);
    }
}
