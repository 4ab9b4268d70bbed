//! Append-only time-series store of per-service metric records, with a
//! tabular export for regression training and JSON Lines persistence.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ServiceId, ServiceSpec};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("out-of-order record for `{service}`: cycle {cycle} precedes stored cycle {latest}")]
    OutOfOrder {
        service: ServiceId,
        cycle: u64,
        latest: u64,
    },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    Order {
        line: usize,
        #[source]
        source: Box<StoreError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One observation of a service at a cycle. Serializes as the persistence
/// line format `{"cycle": .., "service": .., "metrics": {..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub cycle: u64,
    pub service: ServiceId,
    pub metrics: BTreeMap<String, f64>,
}

impl MetricRecord {
    /// True when the record carries exactly the service's declared variables.
    pub fn matches(&self, spec: &ServiceSpec) -> bool {
        self.service == spec.id
            && self.metrics.len() == spec.parameters.len()
            && spec.variables().all(|v| self.metrics.contains_key(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    All,
    Last(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub cycle: u64,
    pub values: Vec<f64>,
}

/// Rectangular view over a service's records, ordered by cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl MetricTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r.values[i]).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricStore {
    records: Vec<MetricRecord>,
    latest: BTreeMap<ServiceId, u64>,
}

impl MetricStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn latest_cycle(&self, service: &ServiceId) -> Option<u64> {
        self.latest.get(service).copied()
    }

    pub fn append(&mut self, record: MetricRecord) -> Result<(), StoreError> {
        if let Some(&latest) = self.latest.get(&record.service) {
            if record.cycle < latest {
                return Err(StoreError::OutOfOrder {
                    service: record.service,
                    cycle: record.cycle,
                    latest,
                });
            }
        }
        self.latest.insert(record.service.clone(), record.cycle);
        self.records.push(record);
        Ok(())
    }

    /// Records of one service, most recent `window` of them, oldest first.
    pub fn window(&self, service: &ServiceId, window: Window) -> Vec<&MetricRecord> {
        let all: Vec<_> = self
            .records
            .iter()
            .filter(|r| &r.service == service)
            .collect();
        match window {
            Window::All => all,
            Window::Last(n) => all[all.len().saturating_sub(n)..].to_vec(),
        }
    }

    pub fn to_table(
        &self,
        service: &ServiceId,
        columns: &[&str],
        window: Window,
    ) -> Result<MetricTable, StoreError> {
        let rows = self
            .window(service, window)
            .into_iter()
            .map(|r| {
                let values = columns
                    .iter()
                    .map(|&c| {
                        r.metrics
                            .get(c)
                            .copied()
                            .ok_or_else(|| StoreError::UnknownColumn(c.to_owned()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(TableRow {
                    cycle: r.cycle,
                    values,
                })
            })
            .collect::<Result<Vec<_>, StoreError>>()?;
        Ok(MetricTable {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), StoreError> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, StoreError> {
        let mut store = Self::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: MetricRecord =
                serde_json::from_str(&line).map_err(|source| StoreError::Parse {
                    line: i + 1,
                    source,
                })?;
            store.append(record).map_err(|e| StoreError::Order {
                line: i + 1,
                source: Box::new(e),
            })?;
        }
        Ok(store)
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}
