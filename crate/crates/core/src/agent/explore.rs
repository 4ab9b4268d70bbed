use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::domain::{Assignment, Granularity, ServiceSpec, CORES, MIN_CORES};

/// A uniformly random valid assignment: every lattice value equally likely
/// and core shares uniform on `{cores >= MIN_CORES, sum = budget}`.
pub fn explore_action<R: Rng + ?Sized>(
    specs: &[ServiceSpec],
    budget: f64,
    rng: &mut R,
) -> Assignment {
    let n = specs.len();
    let free = (budget - MIN_CORES * n as f64).max(0.0);
    // normalized exponentials are uniform on the simplex
    let weights: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = weights.iter().sum();
    let mut cores: Vec<f64> = weights
        .iter()
        .map(|w| MIN_CORES + free * w / total)
        .collect();
    let excess = cores.iter().sum::<f64>() - budget;
    if excess > 0.0 {
        if let Some(max) = cores.iter_mut().max_by(|a, b| a.total_cmp(b)) {
            *max -= excess;
        }
    }

    let mut a = Assignment::new(budget);
    for (spec, c) in specs.iter().zip(cores) {
        for p in spec.adjustable() {
            let v = if p.name == CORES {
                c
            } else {
                match p.granularity {
                    Granularity::Discrete { .. } => {
                        let len = p.lattice_len().unwrap_or(1);
                        p.lattice_value(rng.random_range(0..len))
                    }
                    Granularity::Continuous => rng.random_range(p.lower..=p.upper),
                }
            };
            a.set(&spec.id, &p.name, v);
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{default_services, validate_assignment, DATA_QUALITY, DEFAULT_BUDGET};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn valid_and_budget_exhausting() {
        let specs = default_services();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let a = explore_action(&specs, DEFAULT_BUDGET, &mut rng);
            assert_eq!(validate_assignment(&a, &specs, DEFAULT_BUDGET), Ok(()));
            assert!((a.total_cores() - 8.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cv_quality_is_uniform() {
        // chi-squared over the 7 lattice values, 1000 draws
        let specs = default_services();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 7];
        for _ in 0..1000 {
            let q = explore_action(&specs, DEFAULT_BUDGET, &mut rng)
                .get(&"cv".into(), DATA_QUALITY)
                .unwrap();
            let k = ((q - 128.0) / 32.0).round() as usize;
            assert_eq!(128.0 + 32.0 * k as f64, q);
            counts[k] += 1;
        }
        let expected = 1000.0 / 7.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 6 dof, p = 0.001 critical value
        assert!(chi2 < 22.46, "chi2 = {chi2}, counts = {counts:?}");
        let sd = (1000.0 * (1.0 / 7.0) * (6.0 / 7.0f64)).sqrt();
        assert!(counts
            .iter()
            .all(|&c| (c as f64 - expected).abs() <= 3.0 * sd));
    }

    #[test]
    fn seeded_sequences_repeat() {
        let specs = default_services();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10)
                .map(|_| explore_action(&specs, DEFAULT_BUDGET, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
        assert_ne!(draw(4), draw(5));
    }
}
