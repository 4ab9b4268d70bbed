//! Global parameter assignment under the shared core budget.
//!
//! The search space is a product of per-service lattices (quality, model
//! size) and a continuous core simplex. [`solve`] runs random-restart block
//! coordinate ascent: each block is one service, searched exhaustively over
//! its own lattice crossed with core shares `current ± k·δ`, followed by
//! pairwise δ core transfers and a final single-move polish.

mod objective;
mod oracle;

pub use objective::{
    assemble_objective, CompletionModel, ObjectiveError, ObjectiveSpec, TruthModel,
};
pub use oracle::{oracle_solve, oracle_solve_truth, OracleCoarsening, OracleResult};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::explore_action;
use crate::domain::{Assignment, Granularity, MIN_CORES};
use objective::{Point, ServiceObjective};

/// Values closer than this count as ties.
const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub sweep_cap: usize,
    /// Core increment δ used by block moves and transfers.
    pub core_step: f64,
    /// Random starting points in addition to the incumbent.
    pub restarts: usize,
    /// A sweep improving by less than this ends the ascent.
    pub tolerance: f64,
    /// Lattices longer than this are searched coarse-then-fine.
    pub coarsen_above: usize,
    pub coarse_stride: usize,
    /// Fine-pass half width, in lattice steps.
    pub fine_radius: usize,
    /// Upper bound on single-move polish iterations.
    pub polish_cap: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            sweep_cap: 20,
            core_step: 0.25,
            restarts: 8,
            tolerance: 1e-4,
            coarsen_above: 100,
            coarse_stride: 25,
            fine_radius: 25,
            polish_cap: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub assignment: Assignment,
    /// Predicted global fulfillment.
    pub value: f64,
}

/// Best valid assignment found from `incumbent` (when valid) and
/// `settings.restarts` random starts. Never worse than the incumbent.
pub fn solve<R: Rng + ?Sized>(
    obj: &ObjectiveSpec,
    incumbent: Option<&Assignment>,
    rng: &mut R,
) -> Solution {
    let specs = obj.specs();
    let mut starts: Vec<Point> = Vec::new();
    if let Some(a) = incumbent.filter(|a| obj.validate(a).is_ok()) {
        starts.push(obj.to_point(a));
    }
    for _ in 0..obj.settings.restarts {
        starts.push(obj.to_point(&explore_action(&specs, obj.budget, rng)));
    }
    if starts.is_empty() {
        starts.push(obj.to_point(&Assignment::baseline(&specs, obj.budget)));
    }

    let mut best: Option<(Point, f64)> = None;
    for start in starts {
        let mut search = Search::new(obj, start);
        search.ascend();
        search.polish();
        let value = search.value();
        let better = match &best {
            None => true,
            Some((p, v)) => {
                value > v + EPS
                    || ((value - v).abs() <= EPS
                        && frugality(obj, &search.point) < frugality(obj, p))
            }
        };
        if better {
            best = Some((search.point, value));
        }
    }
    let (point, value) = best.expect("at least one start");
    Solution {
        assignment: obj.to_assignment(&point),
        value,
    }
}

fn frugality(obj: &ObjectiveSpec, p: &Point) -> (f64, f64, f64) {
    obj.services
        .iter()
        .zip(p)
        .fold((0.0, 0.0, 0.0), |acc, (s, v)| {
            let f = s.frugality(v);
            (acc.0 + f.0, acc.1 + f.1, acc.2 + f.2)
        })
}

/// Candidate values for a non-core parameter: its full lattice, or a coarse
/// subset for long lattices. Returns `(values, coarsened)`.
fn block_candidates(
    obj: &ObjectiveSpec,
    s: &ServiceObjective,
    var: usize,
    current: f64,
) -> (Vec<f64>, bool) {
    let p = &s.vars[var];
    match p.granularity {
        Granularity::Discrete { .. } => {
            let n = p.lattice_len().unwrap_or(1);
            if n > obj.settings.coarsen_above {
                let stride = obj.settings.coarse_stride.max(1);
                let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
                if idx.last() != Some(&(n - 1)) {
                    idx.push(n - 1);
                }
                (idx.into_iter().map(|i| p.lattice_value(i)).collect(), true)
            } else {
                (p.lattice().unwrap_or_default(), false)
            }
        }
        Granularity::Continuous => {
            let mut v: Vec<f64> = (0..=8)
                .map(|k| p.lower + (p.upper - p.lower) * k as f64 / 8.0)
                .collect();
            v.push(current);
            (v, false)
        }
    }
}

struct Search<'a> {
    obj: &'a ObjectiveSpec,
    point: Point,
    values: Vec<f64>,
}

impl<'a> Search<'a> {
    fn new(obj: &'a ObjectiveSpec, point: Point) -> Self {
        let values = obj
            .services
            .iter()
            .zip(&point)
            .map(|(s, v)| s.value(v))
            .collect();
        Self { obj, point, values }
    }

    fn value(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    fn others_cores(&self, s: usize) -> f64 {
        self.obj
            .services
            .iter()
            .zip(&self.point)
            .enumerate()
            .filter(|(i, _)| *i != s)
            .map(|(_, (svc, v))| v[svc.cores])
            .sum()
    }

    fn core_candidates(&self, s: usize) -> Vec<f64> {
        let svc = &self.obj.services[s];
        let current = self.point[s][svc.cores];
        let remaining = self.obj.budget - self.others_cores(s);
        let step = self.obj.settings.core_step;
        let mut out = Vec::new();
        if remaining < MIN_CORES {
            out.push(current);
            return out;
        }
        let k_lo = ((MIN_CORES - current) / step).ceil() as i64;
        let k_hi = ((remaining - current) / step).floor() as i64;
        for k in k_lo..=k_hi {
            let c = current + k as f64 * step;
            if c >= MIN_CORES && c <= remaining {
                out.push(c);
            }
        }
        if !out.contains(&remaining) {
            out.push(remaining);
        }
        out
    }

    /// Better than the incumbent block value: higher, or tied and more frugal.
    fn beats(&self, s: usize, cand: (f64, &[f64]), inc: (f64, &[f64])) -> bool {
        let svc = &self.obj.services[s];
        cand.0 > inc.0 + EPS
            || ((cand.0 - inc.0).abs() <= EPS && svc.frugality(cand.1) < svc.frugality(inc.1))
    }

    /// Exhaustive search of one service's block with the others held fixed.
    fn optimize_block(&mut self, s: usize) -> bool {
        let obj = self.obj;
        let svc = &obj.services[s];
        let cores = self.core_candidates(s);
        let others: Vec<usize> = (0..svc.vars.len()).filter(|&i| i != svc.cores).collect();
        let lists: Vec<(Vec<f64>, bool)> = others
            .iter()
            .map(|&i| block_candidates(obj, svc, i, self.point[s][i]))
            .collect();

        let mut best_vals = self.point[s].clone();
        let mut best = self.values[s];
        let scan = |lists: &[Vec<f64>], best_vals: &mut Vec<f64>, best: &mut f64, this: &Self| {
            let mut cand = this.point[s].clone();
            let mut odo = vec![0usize; lists.len()];
            if lists.iter().any(|l| l.is_empty()) {
                return;
            }
            loop {
                for (k, &var) in others.iter().enumerate() {
                    cand[var] = lists[k][odo[k]];
                }
                for &c in &cores {
                    cand[svc.cores] = c;
                    let v = svc.value(&cand);
                    if this.beats(s, (v, &cand), (*best, best_vals)) {
                        *best = v;
                        best_vals.clone_from(&cand);
                    }
                }
                // advance odometer
                let mut k = 0;
                loop {
                    if k == odo.len() {
                        return;
                    }
                    odo[k] += 1;
                    if odo[k] < lists[k].len() {
                        break;
                    }
                    odo[k] = 0;
                    k += 1;
                }
            }
        };

        let coarse: Vec<Vec<f64>> = lists.iter().map(|(l, _)| l.clone()).collect();
        scan(&coarse, &mut best_vals, &mut best, self);

        if lists.iter().any(|(_, coarsened)| *coarsened) {
            let radius = obj.settings.fine_radius;
            let fine: Vec<Vec<f64>> = others
                .iter()
                .zip(&lists)
                .map(|(&var, (_, coarsened))| {
                    let p = &svc.vars[var];
                    if !coarsened {
                        return vec![best_vals[var]];
                    }
                    let n = p.lattice_len().unwrap_or(1);
                    let centre = p.lattice_index(best_vals[var]).unwrap_or(0);
                    let lo = centre.saturating_sub(radius);
                    let hi = (centre + radius).min(n - 1);
                    (lo..=hi).map(|i| p.lattice_value(i)).collect()
                })
                .collect();
            scan(&fine, &mut best_vals, &mut best, self);
        }

        if self.beats(s, (best, &best_vals), (self.values[s], &self.point[s])) {
            self.point[s] = best_vals;
            self.values[s] = best;
            true
        } else {
            false
        }
    }

    /// Moves δ cores from `from` to `to` if that raises the objective.
    fn try_transfer(&mut self, from: usize, to: usize) -> bool {
        let step = self.obj.settings.core_step;
        let (cf, ct) = (self.obj.services[from].cores, self.obj.services[to].cores);
        if self.point[from][cf] - step < MIN_CORES {
            return false;
        }
        let mut a = self.point[from].clone();
        let mut b = self.point[to].clone();
        a[cf] -= step;
        b[ct] += step;
        let va = self.obj.services[from].value(&a);
        let vb = self.obj.services[to].value(&b);
        if va + vb > self.values[from] + self.values[to] + EPS {
            self.point[from] = a;
            self.point[to] = b;
            self.values[from] = va;
            self.values[to] = vb;
            true
        } else {
            false
        }
    }

    fn transfers(&mut self) -> bool {
        let n = self.point.len();
        let mut any = false;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    while self.try_transfer(i, j) {
                        any = true;
                    }
                }
            }
        }
        any
    }

    fn ascend(&mut self) {
        for _ in 0..self.obj.settings.sweep_cap {
            let before = self.value();
            for s in 0..self.point.len() {
                self.optimize_block(s);
            }
            self.transfers();
            if self.value() - before < self.obj.settings.tolerance {
                break;
            }
        }
    }

    /// Replaces service `s` values with `vals` if strictly better.
    fn try_move(&mut self, s: usize, vals: Vec<f64>) -> bool {
        let v = self.obj.services[s].value(&vals);
        if v > self.values[s] + EPS {
            self.point[s] = vals;
            self.values[s] = v;
            true
        } else {
            false
        }
    }

    /// Hill-climbs over single-variable lattice moves and pairwise transfers
    /// until none improves.
    fn polish(&mut self) {
        for _ in 0..self.obj.settings.polish_cap {
            if !self.polish_once() {
                return;
            }
        }
    }

    fn polish_once(&mut self) -> bool {
        let step = self.obj.settings.core_step;
        let obj = self.obj;
        for s in 0..self.point.len() {
            let svc = &obj.services[s];
            let slack = self.obj.budget - self.others_cores(s) - self.point[s][svc.cores];
            for (i, p) in svc.vars.iter().enumerate() {
                let cur = self.point[s][i];
                let moves: Vec<f64> = if i == svc.cores {
                    let mut m = Vec::new();
                    if cur - step >= MIN_CORES {
                        m.push(cur - step);
                    }
                    if step <= slack {
                        m.push(cur + step);
                    }
                    m
                } else {
                    match p.step() {
                        Some(h) => [cur - h, cur + h]
                            .into_iter()
                            .filter(|&v| p.in_bounds(v))
                            .collect(),
                        None => {
                            let h = (p.upper - p.lower) / 100.0;
                            [cur - h, cur + h]
                                .into_iter()
                                .filter(|&v| p.in_bounds(v))
                                .collect()
                        }
                    }
                };
                for v in moves {
                    let mut vals = self.point[s].clone();
                    vals[i] = v;
                    if self.try_move(s, vals) {
                        return true;
                    }
                }
            }
        }
        self.transfers()
    }
}
