//! Experiment loop, trace persistence, reports and the HTTP control plane.

mod http;
mod report;

pub use http::{router, serve, ControlPlane};
pub use report::{report, Report, Summary};

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentSettings, Diagnostics, Phase};
use crate::domain::{
    default_services, global_fulfillment, service_fulfillment, validate_assignment, Assignment,
    DomainError, ServiceId, ServiceSpec, Violation, DEFAULT_BUDGET, MIN_CORES,
};
use crate::env::{EnvError, Environment, GroundTruthModel};
use crate::solver::SolverSettings;
use crate::store::{MetricRecord, MetricStore, StoreError};

pub const TRACE_FILE: &str = "trace.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("agent produced an invalid assignment at cycle {cycle}: {violations:?}")]
    InvalidAssignment {
        cycle: u64,
        violations: Vec<Violation>,
    },
    #[error("trace line {line}: {source}")]
    TraceParse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("empty trace")]
    EmptyTrace,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub cycles_explore: u64,
    pub cycles_exploit: u64,
    pub budget: f64,
    pub services: Vec<ServiceSpec>,
    pub truth: GroundTruthModel,
    pub solver: SolverSettings,
    pub agent: AgentSettings,
    /// Directory receiving `trace.jsonl` and `metrics.jsonl`.
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            cycles_explore: 30,
            cycles_exploit: 30,
            budget: DEFAULT_BUDGET,
            services: default_services(),
            truth: GroundTruthModel::default(),
            solver: SolverSettings::default(),
            agent: AgentSettings::default(),
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.budget.is_finite() && self.budget > 0.0) {
            return Err(HarnessError::Config(format!(
                "budget must be positive, got {}",
                self.budget
            )));
        }
        if self.services.is_empty() {
            return Err(HarnessError::Config("no services".into()));
        }
        if self.budget < MIN_CORES * self.services.len() as f64 {
            return Err(HarnessError::Config(format!(
                "budget {} cannot give {} services {MIN_CORES} cores each",
                self.budget,
                self.services.len()
            )));
        }
        let mut ids = BTreeSet::new();
        for s in &self.services {
            s.check()?;
            if !ids.insert(&s.id) {
                return Err(HarnessError::Config(format!(
                    "duplicate service `{}`",
                    s.id
                )));
            }
        }
        self.truth.check(&self.services)?;
        if let Some(w) = self.agent.training_window {
            if w == 0 {
                return Err(HarnessError::Config(
                    "training_window must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn total_cycles(&self) -> u64 {
        self.cycles_explore + self.cycles_exploit
    }

    /// Noise stream seed, kept apart from the agent's stream.
    pub fn env_seed(&self) -> u64 {
        self.seed.wrapping_add(0x9E37_79B9_7F4A_7C15)
    }

    pub fn environment(&self) -> Result<Environment, HarnessError> {
        Ok(Environment::new(
            self.services.clone(),
            self.truth.clone(),
            self.budget,
            self.env_seed(),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub cycle: u64,
    pub phase: Phase,
    pub assignment: Assignment,
    pub records: Vec<MetricRecord>,
    pub service_fulfillment: BTreeMap<ServiceId, f64>,
    pub global_fulfillment: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn global(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.global_fulfillment).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), HarnessError> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, HarnessError> {
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|source| {
                HarnessError::TraceParse {
                    line: i + 1,
                    source,
                }
            })?);
        }
        Ok(Self { entries })
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}

/// Per-service and global fulfillment of one cycle's observations.
pub fn score_records(
    records: &[MetricRecord],
    specs: &[ServiceSpec],
) -> Result<(BTreeMap<ServiceId, f64>, f64), DomainError> {
    let mut per = BTreeMap::new();
    for spec in specs {
        let r = records
            .iter()
            .find(|r| r.service == spec.id)
            .ok_or_else(|| DomainError::IncompleteMetrics {
                variable: spec.id.to_string(),
            })?;
        per.insert(
            spec.id.clone(),
            service_fulfillment(&r.metrics, &spec.slos)?,
        );
    }
    let global = global_fulfillment(&per.values().copied().collect::<Vec<_>>())?;
    Ok((per, global))
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub trace: Trace,
    pub store: MetricStore,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment, HarnessError> {
    cfg.validate()?;
    let mut env = cfg.environment()?;
    let mut agent = Agent::new(
        cfg.services.clone(),
        cfg.agent.clone(),
        cfg.solver.clone(),
        cfg.budget,
        cfg.seed,
    );
    let mut store = MetricStore::new();
    let mut trace = Trace::default();
    for cycle in 0..cfg.total_cycles() {
        let phase = if cycle < cfg.cycles_explore {
            Phase::Explore
        } else {
            Phase::Exploit
        };
        let decision = agent.cycle(&store, phase);
        validate_assignment(&decision.assignment, &cfg.services, cfg.budget)
            .map_err(|violations| HarnessError::InvalidAssignment { cycle, violations })?;
        env.apply(&decision.assignment)
            .map_err(|violations| HarnessError::InvalidAssignment { cycle, violations })?;
        let records = env.step(cycle)?;
        for r in &records {
            store.append(r.clone())?;
        }
        let (service_fulfillment, global_fulfillment) = score_records(&records, &cfg.services)?;
        trace.entries.push(TraceEntry {
            cycle,
            phase,
            assignment: decision.assignment,
            records,
            service_fulfillment,
            global_fulfillment,
            diagnostics: decision.diagnostics,
        });
    }
    if let Some(dir) = &cfg.output {
        fs::create_dir_all(dir)?;
        trace.persist(dir.join(TRACE_FILE))?;
        store.persist(dir.join(METRICS_FILE))?;
    }
    Ok(Experiment { trace, store })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_matches_protocol() {
        let cfg = ExperimentConfig::default();
        assert_eq!(
            (cfg.seed, cfg.cycles_explore, cfg.cycles_exploit),
            (42, 30, 30)
        );
        assert_eq!(cfg.budget, 8.0);
        assert_eq!(cfg.services, default_services());
        cfg.validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_values() {
        for json in [
            r#"{"budget": 0}"#,
            r#"{"budget": 0.2}"#,
            r#"{"services": []}"#,
            r#"{"agent": {"training_window": 0}}"#,
        ] {
            assert!(
                matches!(
                    ExperimentConfig::from_json(json),
                    Err(HarnessError::Config(_))
                ),
                "{json}"
            );
        }
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"sead": 1}"#),
            Err(HarnessError::Json(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"truth": {}}"#),
            Err(HarnessError::Env(_))
        ));
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"seed": 7, "solver": {"restarts": 2}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.solver.restarts, 2);
        assert_eq!(cfg.solver.sweep_cap, 20);
        assert_eq!(cfg.cycles_exploit, 30);
    }

    #[test]
    fn config_round_trips() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn short_run_shape() {
        let cfg = ExperimentConfig {
            cycles_explore: 8,
            cycles_exploit: 2,
            ..ExperimentConfig::default()
        };
        let x = run_experiment(&cfg).unwrap();
        assert_eq!(x.trace.len(), 10);
        assert_eq!(x.store.len(), 30);
        let phases: Vec<_> = x.trace.entries.iter().map(|e| e.phase).collect();
        assert_eq!(phases[7], Phase::Explore);
        assert_eq!(phases[8], Phase::Exploit);
        for (i, e) in x.trace.entries.iter().enumerate() {
            assert_eq!(e.cycle, i as u64);
        }
        let back = Trace::read_jsonl(x.trace.to_jsonl().as_slice()).unwrap();
        assert_eq!(back, x.trace);
    }
}
