use std::fmt;

use crate::agent::Phase;
use crate::domain::{CORES, DATA_QUALITY, MODEL_SIZE};

use super::{HarnessError, Trace};

const FIRST: usize = 5;
const LAST: usize = 10;
const ROLLING: usize = 5;
const TARGET: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub cycles: usize,
    pub first_mean: f64,
    pub last_mean: f64,
    pub explore_mean: Option<f64>,
    pub exploit_mean: Option<f64>,
    pub oracle: Option<f64>,
    /// First cycle whose trailing 5-cycle mean reaches 95% of the oracle.
    pub cycles_to_target: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: Summary,
    pub csv: String,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn phase_mean(trace: &Trace, phase: Phase) -> Option<f64> {
    let xs: Vec<f64> = trace
        .entries
        .iter()
        .filter(|e| e.phase == phase)
        .map(|e| e.global_fulfillment)
        .collect();
    mean(&xs)
}

pub fn report(trace: &Trace, oracle: Option<f64>) -> Result<Report, HarnessError> {
    let global = trace.global();
    if global.is_empty() {
        return Err(HarnessError::EmptyTrace);
    }
    let n = global.len();
    let cycles_to_target = oracle.and_then(|o| {
        (0..n).find_map(|i| {
            let lo = (i + 1).saturating_sub(ROLLING);
            let m = mean(&global[lo..=i])?;
            (i + 1 >= ROLLING && m >= TARGET * o).then(|| trace.entries[i].cycle)
        })
    });
    let summary = Summary {
        cycles: n,
        first_mean: mean(&global[..n.min(FIRST)]).unwrap_or(0.0),
        last_mean: mean(&global[n.saturating_sub(LAST)..]).unwrap_or(0.0),
        explore_mean: phase_mean(trace, Phase::Explore),
        exploit_mean: phase_mean(trace, Phase::Exploit),
        oracle,
        cycles_to_target,
    };
    Ok(Report {
        summary,
        csv: csv_table(trace)?,
    })
}

fn csv_table(trace: &Trace) -> Result<String, HarnessError> {
    let services: Vec<_> = trace.entries[0]
        .service_fulfillment
        .keys()
        .cloned()
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["cycle".to_owned(), "phase".into(), "global".into()];
    for s in &services {
        for col in ["fulfillment", "cores", "quality", "model", "r2"] {
            header.push(format!("{s}_{col}"));
        }
    }
    w.write_record(&header)?;
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for e in &trace.entries {
        let phase = match e.phase {
            Phase::Explore => "explore",
            Phase::Exploit => "exploit",
        };
        let mut row = vec![
            e.cycle.to_string(),
            phase.into(),
            e.global_fulfillment.to_string(),
        ];
        for s in &services {
            row.push(cell(e.service_fulfillment.get(s).copied()));
            row.push(cell(e.assignment.get(s, CORES)));
            row.push(cell(e.assignment.get(s, DATA_QUALITY)));
            row.push(cell(e.assignment.get(s, MODEL_SIZE)));
            row.push(cell(e.diagnostics.fits.get(s).map(|f| f.r_squared)));
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "cycles: {}", self.cycles)?;
        writeln!(
            f,
            "mean global fulfillment, first {FIRST} cycles: {:.4}",
            self.first_mean
        )?;
        writeln!(
            f,
            "mean global fulfillment, last {LAST} cycles: {:.4}",
            self.last_mean
        )?;
        if let Some(m) = self.explore_mean {
            writeln!(f, "exploration mean: {m:.4}")?;
        }
        if let Some(m) = self.exploit_mean {
            writeln!(f, "exploitation mean: {m:.4}")?;
        }
        if let Some(o) = self.oracle {
            writeln!(f, "oracle: {o:.4}")?;
            writeln!(f, "last {LAST} / oracle: {:.4}", self.last_mean / o)?;
            match self.cycles_to_target {
                Some(c) => writeln!(f, "cycles to 95% of oracle: {c}")?,
                None => writeln!(f, "cycles to 95% of oracle: not reached")?,
            }
        }
        Ok(())
    }
}
