use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lpgp::baselines::{candidate_pool, fit_tree};
use lpgp::bench::{run_single, Algo, ExperimentConfig};
use lpgp::geometry::Cell;
use lpgp::local_poly::solve_weights;
use lpgp::optimizer::{round_bound, Action};

fn assert_tiles(cells: &[Cell], dim: usize, rng: &mut ChaCha8Rng) {
    let volume: f64 = cells.iter().map(Cell::volume).sum();
    assert!((volume - 1.0).abs() < 1e-9, "volume {volume}");
    for _ in 0..200 {
        let p: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        assert_eq!(cells.iter().filter(|c| c.owns(&p)).count(), 1, "probe {p:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn lpgpucb_spends_exact_budget(seed in 0u64..1000, dim in 1usize..=2, budget in 1usize..40) {
        let config = ExperimentConfig { dim, budget, holder_bound: None, ..ExperimentConfig::default() };
        let trace = run_single(Algo::LpGpUcb, &config, seed).unwrap();
        prop_assert_eq!(trace.evaluations(), budget);
        prop_assert!(trace.rows.len() as f64 <= round_bound(budget, dim));
        for row in &trace.rows {
            let r = &row.record;
            prop_assert!(r.cell_lower.iter().zip(&r.cell_upper).all(|(l, u)| *l >= 0.0 && *u <= 1.0 && l < u));
            prop_assert_eq!(row.true_value.is_some(), r.action == Action::Evaluate);
        }
    }

    #[test]
    fn cumulative_regret_never_decreases(seed in 0u64..1000, algo in 0usize..6) {
        let config = ExperimentConfig { budget: 25, pool_size: 50, ..ExperimentConfig::default() };
        let trace = run_single(Algo::ALL[algo], &config, seed).unwrap();
        let mut last = 0.0;
        for (_, cum) in trace.per_evaluation() {
            prop_assert!(cum >= last - 1e-9);
            last = cum;
        }
        prop_assert!((last - trace.final_cumulative).abs() < 1e-12);
    }

    #[test]
    fn tree_leaves_tile_the_cube(seed in 0u64..1000, dim in 1usize..=3, count in 0usize..60, max_leaves in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Vec<f64>> = (0..count).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.iter().map(|v| (6.0 * v).sin()).sum()).collect();
        let tree = fit_tree(&points, &ys, dim, max_leaves, 2);
        prop_assert!(tree.leaves().len() <= max_leaves.max(1));
        let cells = tree.cells(&ys);
        assert_tiles(&cells, dim, &mut rng);
        let owned: usize = tree.leaves().iter().map(|l| l.samples.len()).sum();
        prop_assert_eq!(owned, count);
    }

    #[test]
    fn acquisition_pool_inside_cube(seed in 0u64..1000, dim in 1usize..=3, edge in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let incumbent = vec![if edge { 1.0 } else { 0.5 }; dim];
        let pool = candidate_pool(dim, 20, Some(&incumbent), &mut rng);
        prop_assert!(pool.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn solver_weights_sum_to_one(seed in 0u64..1000, degree in 0u32..=2, extra in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = Cell::from_bounds(vec![0.25, 0.5], vec![0.375, 0.625], 0.125, 0);
        let count = (degree as usize + 2).pow(2) + extra;
        let points: Vec<Vec<f64>> =
            (0..count).map(|_| vec![rng.random_range(0.25..0.375), rng.random_range(0.5..0.625)]).collect();
        let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
        let w = solve_weights(&refs, &[0.3, 0.55], degree, &cell);
        if w.fallback_uniform {
            prop_assert!(w.weights.iter().all(|v| *v == 1.0 / count as f64));
        } else if w.feasible {
            prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(w.l1 >= 1.0 - 1e-9);
        }
    }
}
