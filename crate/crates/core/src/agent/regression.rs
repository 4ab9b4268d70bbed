//! Degree-2 polynomial regression of completion over its parent variables.
//!
//! Inputs are min-max normalized with bounds taken from the parameter specs,
//! so a model extrapolates the same way no matter which samples it saw.
//! Features are ordered `1, x_1..x_p, x_i*x_j (i <= j)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::MetricTable;

/// Diagonal damping added to the normal equations.
pub const DEFAULT_RIDGE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("table lacks column `{0}`")]
    MissingColumn(String),
    #[error("insufficient samples: {rows} rows, need at least {required}")]
    InsufficientSamples { rows: usize, required: usize },
    #[error("missing parent variable `{0}`")]
    MissingParent(String),
    #[error("expected {expected} coefficients, got {got}")]
    CoefficientCount { expected: usize, got: usize },
    #[error("degenerate normalization bounds for `{0}`")]
    DegenerateBounds(String),
}

pub fn feature_count(parents: usize) -> usize {
    1 + parents + parents * (parents + 1) / 2
}

fn features_into(x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    out.extend_from_slice(x);
    for i in 0..x.len() {
        for j in i..x.len() {
            out.push(x[i] * x[j]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub parents: Vec<String>,
    /// `(lower, upper)` per parent.
    pub bounds: Vec<(f64, f64)>,
    pub coefficients: Vec<f64>,
    pub samples: usize,
    pub r_squared: f64,
}

impl RegressionModel {
    pub fn from_coefficients(
        parents: Vec<String>,
        bounds: Vec<(f64, f64)>,
        coefficients: Vec<f64>,
    ) -> Result<Self, FitError> {
        let expected = feature_count(parents.len());
        if coefficients.len() != expected {
            return Err(FitError::CoefficientCount {
                expected,
                got: coefficients.len(),
            });
        }
        check_bounds(&parents, &bounds)?;
        Ok(Self {
            parents,
            bounds,
            coefficients,
            samples: 0,
            r_squared: f64::NAN,
        })
    }

    /// Least-squares fit of `target` on the polynomial features of `parents`.
    pub fn fit(
        table: &MetricTable,
        parents: &[String],
        bounds: &[(f64, f64)],
        target: &str,
        ridge: f64,
    ) -> Result<Self, FitError> {
        check_bounds(parents, bounds)?;
        let col = |name: &str| {
            table
                .column_index(name)
                .ok_or_else(|| FitError::MissingColumn(name.to_owned()))
        };
        let parent_cols = parents
            .iter()
            .map(|p| col(p))
            .collect::<Result<Vec<_>, _>>()?;
        let target_col = col(target)?;

        let k = feature_count(parents.len());
        let n = table.len();
        if n < k {
            return Err(FitError::InsufficientSamples {
                rows: n,
                required: k,
            });
        }

        let mut ata = vec![0.0; k * k];
        let mut atb = vec![0.0; k];
        let mut x = vec![0.0; parents.len()];
        let mut phi = Vec::with_capacity(k);
        for row in &table.rows {
            for (i, &c) in parent_cols.iter().enumerate() {
                x[i] = normalize(row.values[c], bounds[i]);
            }
            features_into(&x, &mut phi);
            let y = row.values[target_col];
            for i in 0..k {
                atb[i] += phi[i] * y;
                for j in 0..k {
                    ata[i * k + j] += phi[i] * phi[j];
                }
            }
        }
        for i in 0..k {
            ata[i * k + i] += ridge;
        }
        let coefficients = solve_spd(ata, atb, k);

        let mut model = Self {
            parents: parents.to_vec(),
            bounds: bounds.to_vec(),
            coefficients,
            samples: n,
            r_squared: f64::NAN,
        };
        model.r_squared = model.r_squared_on(table, &parent_cols, target_col);
        Ok(model)
    }

    fn r_squared_on(&self, table: &MetricTable, parent_cols: &[usize], target_col: usize) -> f64 {
        let ys: Vec<f64> = table.rows.iter().map(|r| r.values[target_col]).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
        if ss_tot == 0.0 {
            // zero-variance target: defined as a perfect fit
            return 1.0;
        }
        let mut x = vec![0.0; parent_cols.len()];
        let ss_res: f64 = table
            .rows
            .iter()
            .zip(&ys)
            .map(|(r, y)| {
                for (i, &c) in parent_cols.iter().enumerate() {
                    x[i] = r.values[c];
                }
                (self.predict_ordered(&x) - y).powi(2)
            })
            .sum();
        1.0 - ss_res / ss_tot
    }

    /// Prediction from parent values given in `self.parents` order.
    pub fn predict_ordered(&self, values: &[f64]) -> f64 {
        self.raw_ordered(values).clamp(0.0, 1.0)
    }

    /// Unclamped polynomial value.
    pub fn raw_ordered(&self, values: &[f64]) -> f64 {
        let x: Vec<f64> = values
            .iter()
            .zip(&self.bounds)
            .map(|(&v, &b)| normalize(v, b))
            .collect();
        let mut phi = Vec::with_capacity(self.coefficients.len());
        features_into(&x, &mut phi);
        phi.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    pub fn predict(&self, params: &BTreeMap<String, f64>) -> Result<f64, FitError> {
        let values = self
            .parents
            .iter()
            .map(|p| {
                params
                    .get(p)
                    .copied()
                    .ok_or_else(|| FitError::MissingParent(p.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.predict_ordered(&values))
    }
}

fn check_bounds(parents: &[String], bounds: &[(f64, f64)]) -> Result<(), FitError> {
    for (p, &(lo, hi)) in parents.iter().zip(bounds) {
        if !(hi > lo) {
            return Err(FitError::DegenerateBounds(p.clone()));
        }
    }
    if parents.len() != bounds.len() {
        return Err(FitError::DegenerateBounds(format!(
            "{} parents, {} bounds",
            parents.len(),
            bounds.len()
        )));
    }
    Ok(())
}

fn normalize(v: f64, (lo, hi): (f64, f64)) -> f64 {
    (v - lo) / (hi - lo)
}

/// Solves `a x = b` for a symmetric positive-definite `a` (row-major, `k x k`)
/// by Cholesky decomposition. Pivots that underflow are floored so a
/// rank-deficient system still yields a finite answer.
fn solve_spd(mut a: Vec<f64>, mut b: Vec<f64>, k: usize) -> Vec<f64> {
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        let d = d.max(1e-300).sqrt();
        a[j * k + j] = d;
        for i in (j + 1)..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = s / d;
        }
    }
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= a[i * k + p] * b[p];
        }
        b[i] = s / a[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = b[i];
        for p in (i + 1)..k {
            s -= a[p * k + i] * b[p];
        }
        b[i] = s / a[i * k + i];
    }
    b
}
