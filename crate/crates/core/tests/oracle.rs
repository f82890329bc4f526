use drdqn_core::envs::GridWorld;
use drdqn_core::oracle::{
    bias_experiment, enumerate_mdp, greedy_return, value_iteration, BiasExperiment, QTable, DEFAULT_TOLERANCE,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GAMMA: f64 = 0.99;

fn optimum(env: &GridWorld) -> f64 {
    let mut q = value_iteration(&enumerate_mdp(env), GAMMA, DEFAULT_TOLERANCE).unwrap();
    let mut env = env.clone();
    greedy_return(&mut q, &mut env, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().mean
}

#[test]
fn optimal_return_is_minus_shortest_path_plus_goal() {
    for (w, h) in [(2, 2), (3, 5), (5, 5), (7, 4)] {
        let env = GridWorld::new(w, h);
        // Every move but the last costs 1; the goal step pays 0.
        let expected = -((w - 1 + h - 1) as f64 - 1.0);
        assert_eq!(optimum(&env), expected, "{w}x{h}");
    }
}

#[test]
fn value_iteration_residual_below_tolerance() {
    let mdp = enumerate_mdp(&GridWorld::new(5, 5));
    let q = value_iteration(&mdp, GAMMA, DEFAULT_TOLERANCE).unwrap();
    assert!(q.bellman_residual(&mdp, GAMMA) < DEFAULT_TOLERANCE);
    // Start value equals the discounted cost of the 8-move shortest path.
    let start = (0..7).map(|k| -GAMMA.powi(k)).sum::<f64>();
    assert!((q.max_value(0) - start).abs() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_tables_never_beat_the_optimum(seed in any::<u64>()) {
        let mut env = GridWorld::new(5, 5);
        let best = optimum(&env);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = QTable::random(env.state_count(), 4, -1.0, 1.0, &mut rng);
        let r = greedy_return(&mut q, &mut env, 1, &mut rng).unwrap().mean;
        prop_assert!(r <= best);
    }
}

#[test]
fn max_estimator_overestimates_beyond_three_standard_errors() {
    let report = bias_experiment(&BiasExperiment::new(10_000, 1.0, GAMMA), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert!(report.max_estimator_bias > 3.0 * report.max_estimator_std_err, "{report:?}");
    assert!(report.double_estimator_bias.abs() < report.max_estimator_bias);
}

#[test]
fn double_estimator_smaller_in_nearly_all_repetitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let wins = (0..20)
        .filter(|_| {
            let r = bias_experiment(&BiasExperiment::new(10_000, 1.0, GAMMA), &mut rng).unwrap();
            r.double_estimator_bias.abs() < r.max_estimator_bias
        })
        .count();
    assert!(wins >= 18, "{wins}/20");
}

#[test]
fn bias_grows_with_action_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let biases: Vec<f64> = [2, 4, 8, 16]
        .iter()
        .map(|&actions| {
            let exp = BiasExperiment { actions, ..BiasExperiment::new(10_000, 1.0, GAMMA) };
            bias_experiment(&exp, &mut rng).unwrap().max_estimator_bias
        })
        .collect();
    assert!(biases.windows(2).all(|w| w[0] < w[1]), "{biases:?}");
    // E[max of 2 standard normals] = 1/sqrt(pi).
    assert!((biases[0] - GAMMA / std::f64::consts::PI.sqrt()).abs() < 0.05, "{biases:?}");
}
