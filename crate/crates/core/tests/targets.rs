use drdqn_core::agents::{ddqn_target, dqn_target, epsilon_at};
use drdqn_core::{AgentConfig, Tensor};
use proptest::prelude::*;

fn q_vector(actions: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, actions)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn double_rule_equals_max_rule_on_equal_vectors(
        q in (1usize..10).prop_flat_map(q_vector),
        reward in -10.0f64..10.0,
        gamma in 0.0f64..=1.0,
        terminal in any::<bool>(),
    ) {
        let t = Tensor::vector(q);
        let double = ddqn_target(reward, terminal, &t, &t, gamma).unwrap();
        prop_assert_eq!(double, dqn_target(reward, terminal, &t, gamma));
    }

    #[test]
    fn double_rule_never_exceeds_max_rule(
        (online, target) in (1usize..10).prop_flat_map(|n| (q_vector(n), q_vector(n))),
        reward in -10.0f64..10.0,
        gamma in 0.0f64..=1.0,
    ) {
        let target = Tensor::vector(target);
        let double = ddqn_target(reward, false, &Tensor::vector(online), &target, gamma).unwrap();
        prop_assert!(double <= reward + gamma * target.max());
    }

    #[test]
    fn targets_are_invariant_under_joint_permutation(
        (online, target, rot) in (2usize..8).prop_flat_map(|n| (q_vector(n), q_vector(n), 0..n)),
        reward in -10.0f64..10.0,
    ) {
        // Continuous draws make ties (and so tie-break order) irrelevant.
        let mut o2 = online.clone();
        let mut t2 = target.clone();
        o2.rotate_left(rot);
        t2.rotate_left(rot);
        let a = ddqn_target(reward, false, &Tensor::vector(online), &Tensor::vector(target.clone()), 0.9).unwrap();
        let b = ddqn_target(reward, false, &Tensor::vector(o2), &Tensor::vector(t2.clone()), 0.9).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(
            dqn_target(reward, false, &Tensor::vector(target), 0.9),
            dqn_target(reward, false, &Tensor::vector(t2), 0.9)
        );
    }

    #[test]
    fn terminal_targets_ignore_next_values(q in q_vector(4), reward in -10.0f64..10.0) {
        let t = Tensor::vector(q);
        prop_assert_eq!(dqn_target(reward, true, &t, 0.99), reward);
        prop_assert_eq!(ddqn_target(reward, true, &t, &t, 0.99).unwrap(), reward);
    }
}

proptest! {
    #[test]
    fn epsilon_is_monotone_and_bounded(a in 0u64..2_000_000, b in 0u64..2_000_000) {
        let cfg = AgentConfig::paper();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (e_lo, e_hi) = (epsilon_at(lo, &cfg), epsilon_at(hi, &cfg));
        prop_assert!(e_hi <= e_lo);
        prop_assert!((cfg.eps_min..=cfg.eps_max).contains(&e_hi));
    }
}

#[test]
fn schedule_endpoints_under_full_scale_config() {
    let cfg = AgentConfig::paper();
    assert_eq!(epsilon_at(0, &cfg), 1.0);
    assert_eq!(epsilon_at(850_000, &cfg), 0.1);
    assert!(epsilon_at(849_999, &cfg) > 0.1);
}
