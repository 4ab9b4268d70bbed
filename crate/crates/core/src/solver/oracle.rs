//! Brute-force optimum over a coarsened joint lattice using noise-free
//! ground truth. Test and calibration use only.

use std::collections::BTreeMap;

use crate::domain::{
    service_fulfillment, Assignment, ServiceId, ServiceSpec, COMPLETION, CORES, DATA_QUALITY,
    MIN_CORES,
};
use crate::env::{EnvError, Environment, GroundTruthModel};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCoarsening {
    /// Lattice stride applied to `data_quality`, per service (default 1).
    pub quality_stride: BTreeMap<ServiceId, usize>,
    /// Core shares are multiples of this and sum to the budget.
    pub core_step: f64,
}

impl Default for OracleCoarsening {
    fn default() -> Self {
        Self {
            quality_stride: [("qr".into(), 50), ("pc".into(), 3)].into_iter().collect(),
            core_step: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub assignment: Assignment,
    /// True global fulfillment of `assignment`.
    pub value: f64,
}

pub fn oracle_solve(
    env: &Environment,
    coarsening: &OracleCoarsening,
) -> Result<OracleResult, EnvError> {
    oracle_solve_truth(env.specs(), env.truth(), env.budget(), coarsening)
}

/// Every coarsened non-core configuration of one service.
fn configurations(spec: &ServiceSpec, stride: usize) -> Vec<BTreeMap<String, f64>> {
    let mut configs = vec![BTreeMap::new()];
    for p in spec.adjustable().filter(|p| p.name != CORES) {
        let lattice = p.lattice().unwrap_or_else(|| vec![p.lower, p.upper]);
        let mut values: Vec<f64> = if p.name == DATA_QUALITY {
            lattice.iter().copied().step_by(stride.max(1)).collect()
        } else {
            lattice.clone()
        };
        let last = *lattice.last().unwrap();
        if values.last() != Some(&last) {
            values.push(last);
        }
        configs = configs
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |&v| {
                    let mut c = c.clone();
                    c.insert(p.name.clone(), v);
                    c
                })
            })
            .collect();
    }
    configs
}

pub fn oracle_solve_truth(
    specs: &[ServiceSpec],
    truth: &GroundTruthModel,
    budget: f64,
    coarsening: &OracleCoarsening,
) -> Result<OracleResult, EnvError> {
    let step = coarsening.core_step;
    let units = (budget / step + 1e-9).floor() as usize;
    let min_units = ((MIN_CORES / step) - 1e-9).ceil().max(1.0) as usize;
    let n = specs.len();

    // table[s][k][c]: true fulfillment of service s with k core units and configuration c
    let mut configs = Vec::with_capacity(n);
    let mut table = Vec::with_capacity(n);
    for spec in specs {
        let stride = coarsening
            .quality_stride
            .get(&spec.id)
            .copied()
            .unwrap_or(1);
        let cs = configurations(spec, stride);
        let mut by_units = vec![Vec::new(); units + 1];
        for (k, row) in by_units.iter_mut().enumerate().skip(min_units) {
            for c in &cs {
                let mut metrics = c.clone();
                metrics.insert(CORES.into(), k as f64 * step);
                let completion = truth.true_completion(spec, &metrics)?;
                metrics.insert(COMPLETION.into(), completion);
                row.push(service_fulfillment(&metrics, &spec.slos).unwrap_or(0.0));
            }
        }
        configs.push(cs);
        table.push(by_units);
    }

    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    let mut split = vec![0usize; n];
    compositions(units, n, min_units, &mut split, 0, &mut |split| {
        // joint enumeration of configurations for this core split
        let mut odo = vec![0usize; n];
        loop {
            let total: f64 = (0..n).map(|s| table[s][split[s]][odo[s]]).sum();
            let value = total / n as f64;
            if best.as_ref().is_none_or(|(v, _, _)| value > *v) {
                best = Some((value, split.to_vec(), odo.clone()));
            }
            let mut s = 0;
            loop {
                if s == n {
                    return;
                }
                odo[s] += 1;
                if odo[s] < configs[s].len() {
                    break;
                }
                odo[s] = 0;
                s += 1;
            }
        }
    });

    let (value, split, choice) = best.expect("budget admits at least one split");
    let mut assignment = Assignment::new(budget);
    for (s, spec) in specs.iter().enumerate() {
        assignment.set(&spec.id, CORES, split[s] as f64 * step);
        for (k, v) in &configs[s][choice[s]] {
            assignment.set(&spec.id, k, *v);
        }
    }
    Ok(OracleResult { assignment, value })
}

/// Calls `f` with every split of `total` units into `parts` parts of at
/// least `min` units each.
fn compositions(
    total: usize,
    parts: usize,
    min: usize,
    buf: &mut Vec<usize>,
    i: usize,
    f: &mut dyn FnMut(&[usize]),
) {
    if i + 1 == parts {
        if total >= min {
            buf[i] = total;
            f(buf);
        }
        return;
    }
    let rest_min = min * (parts - i - 1);
    if total < rest_min + min {
        return;
    }
    for k in min..=(total - rest_min) {
        buf[i] = k;
        compositions(total - k, parts, min, buf, i + 1, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{
        default_services, global_fulfillment, validate_assignment, DEFAULT_BUDGET,
    };

    #[test]
    fn composition_count() {
        let mut count = 0;
        compositions(32, 3, 1, &mut vec![0; 3], 0, &mut |s| {
            assert_eq!(s.iter().sum::<usize>(), 32);
            count += 1;
        });
        // C(31, 2)
        assert_eq!(count, 465);
    }

    #[test]
    fn coarsened_lattice_sizes() {
        let specs = default_services();
        assert_eq!(configurations(&specs[0], 50).len(), 19);
        assert_eq!(configurations(&specs[1], 1).len(), 28);
        assert_eq!(configurations(&specs[2], 3).len(), 19);
    }

    #[test]
    fn oracle_on_default_truth() {
        let specs = default_services();
        let truth = GroundTruthModel::default().with_noise(0.0);
        let r = oracle_solve_truth(&specs, &truth, DEFAULT_BUDGET, &OracleCoarsening::default())
            .unwrap();
        assert!(r.value >= 0.95);
        assert_eq!(
            validate_assignment(&r.assignment, &specs, DEFAULT_BUDGET),
            Ok(())
        );
        assert!((r.assignment.total_cores() - DEFAULT_BUDGET).abs() < 1e-9);

        // recompute the reported value from scratch
        let per: Vec<f64> = specs
            .iter()
            .map(|s| {
                let mut m = r.assignment.services[&s.id].clone();
                m.insert(COMPLETION.into(), truth.true_completion(s, &m).unwrap());
                service_fulfillment(&m, &s.slos).unwrap()
            })
            .collect();
        assert!((global_fulfillment(&per).unwrap() - r.value).abs() < 1e-12);
    }

    #[test]
    fn larger_budget_never_hurts() {
        let specs = default_services();
        let mut truth = GroundTruthModel::default();
        for t in truth.services.values_mut() {
            t.base_demand *= 3.0;
        }
        let c = OracleCoarsening::default();
        let small = oracle_solve_truth(&specs, &truth, 8.0, &c).unwrap();
        let large = oracle_solve_truth(&specs, &truth, 24.0, &c).unwrap();
        assert!(large.value >= small.value);
        assert!(small.value < 1.0);
    }
}
