use std::sync::Arc;

use impulse_core::budget::{augment_mdp, augmented_index, BudgetMode, BudgetSpec};
use impulse_core::envs::instances::make_instance;
use impulse_core::envs::instances::{random_cost, random_mdp, FIXED_SUITE};
use impulse_core::fa::{train_fa, FaSchedule, FeatureMap, StepRule};
use impulse_core::qlearn::RunSpec;
use impulse_core::solver::{bellman_apply, flat_value_iteration};
use impulse_core::{
    evaluate_policy, extract_policy, train, value_iteration, CostSpec, LearnSchedule, MdpEnv, SeedTree, StartDist,
    ValueFunction,
};
use proptest::prelude::*;

fn values(n: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bellman_operator_contracts(
        (seed, n, m, gamma) in (0u64..1_000_000, 1usize..=20, 1usize..=5, 0.0f64..0.99),
        scale in 0.1f64..100.0,
        raw in values(40, 1.0),
    ) {
        let mdp = random_mdp(seed, n, m, gamma);
        let cost = random_cost(seed, m);
        let v = ValueFunction(raw[..n].iter().map(|x| x * scale).collect());
        let w = ValueFunction(raw[20..20 + n].iter().map(|x| x * scale * 0.5).collect());
        let lhs = bellman_apply(&mdp, &cost, &v).sup_distance(&bellman_apply(&mdp, &cost, &w));
        prop_assert!(lhs <= gamma * v.sup_distance(&w) + 1e-12);
    }

    #[test]
    fn residuals_decay_geometrically(seed in 0u64..1_000_000, n in 1usize..=15, m in 1usize..=4, gamma in 0.0f64..0.98) {
        let mdp = random_mdp(seed, n, m, gamma);
        let cost = random_cost(seed, m);
        let vi = value_iteration(&mdp, &cost, 1e-12, 1_000_000).unwrap();
        for w in vi.residuals.windows(2) {
            prop_assert!(w[1] <= gamma * w[0] + 1e-12, "{} after {}", w[1], w[0]);
        }
        prop_assert!(bellman_apply(&mdp, &cost, &vi.value).sup_distance(&vi.value) < 1e-8);
    }

    #[test]
    fn greedy_policy_reproduces_value(seed in 0u64..1_000_000, n in 1usize..=15, m in 1usize..=4, gamma in 0.0f64..0.95) {
        let mdp = random_mdp(seed, n, m, gamma);
        let cost = random_cost(seed, m);
        let tol = 1e-10;
        let v = value_iteration(&mdp, &cost, tol, 1_000_000).unwrap().value;
        let policy = extract_policy(&mdp, &cost, &v);
        let exact = evaluate_policy(&mdp, &cost, &policy).unwrap();
        prop_assert!(exact.sup_distance(&v) <= 10.0 * tol / (1.0 - gamma));
    }

    #[test]
    fn zero_cost_matches_flat_iteration(seed in 0u64..1_000_000, n in 1usize..=15, m in 1usize..=4, gamma in 0.0f64..0.95) {
        let mdp = random_mdp(seed, n, m, gamma);
        let a = value_iteration(&mdp, &CostSpec::Zero, 1e-13, 1_000_000).unwrap().value;
        let b = flat_value_iteration(&mdp, &CostSpec::Zero, 1e-13, 1_000_000).unwrap().value;
        prop_assert!(a.sup_distance(&b) < 1e-10);
    }

    #[test]
    fn prohibitive_fixed_cost_never_intervenes(seed in 0u64..1_000_000, n in 1usize..=15, m in 1usize..=4, gamma in 0.0f64..0.99, margin in 1e-6f64..2.0) {
        let mdp = random_mdp(seed, n, m, gamma);
        let kappa = 2.0 * mdp.max_abs_reward() / (1.0 - gamma) * (1.0 + margin);
        let cost = CostSpec::Fixed { kappa };
        let v = value_iteration(&mdp, &cost, 1e-12, 1_000_000).unwrap().value;
        prop_assert!(extract_policy(&mdp, &cost, &v).intervention_set().is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmented_problem_is_valid_and_monotone(seed in 0u64..1_000_000, n in 1usize..=6, m in 1usize..=3, budget in 0u32..4, hard in any::<bool>()) {
        let mdp = random_mdp(seed, n, m, 0.9);
        let cost = random_cost(seed, m);
        let mode = if hard { BudgetMode::Hard } else { BudgetMode::Soft };
        let aug = augment_mdp(&mdp, &cost, &BudgetSpec::new(budget, mode)).unwrap();
        prop_assert!(aug.mdp.validate().is_empty());
        let vi = value_iteration(&aug.mdp, &aug.cost, 1e-10, 1_000_000).unwrap();
        for w in vi.residuals.windows(2) {
            prop_assert!(w[1] <= 0.9 * w[0] + 1e-12);
        }
        for s in 0..n {
            for z in 0..budget as i64 {
                let lo = vi.value.0[augmented_index(n, s, z)];
                let hi = vi.value.0[augmented_index(n, s, z + 1)];
                prop_assert!(lo <= hi + 1e-9, "s={} z={}: {} > {}", s, z, lo, hi);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn learned_values_stay_bounded(seed in 0u64..1_000_000, n in 1usize..=8, m in 1usize..=3) {
        let mdp = Arc::new(random_mdp(seed, n, m, 0.9));
        let cost = random_cost(seed, m);
        let bound = 2.0 * (mdp.max_abs_reward() + mdp.max_cost(&cost)) / (1.0 - mdp.gamma());
        let mut env = MdpEnv::new(mdp, cost).with_start(StartDist::Uniform).unwrap();
        let out = train(&mut env, &LearnSchedule::default(), &RunSpec::steps(20_000, 50), SeedTree::new(seed), None).unwrap();
        prop_assert!(out.diagnostics.max_abs_value <= bound);
        prop_assert!(out.q.max_abs() <= bound);
    }

    #[test]
    fn training_is_deterministic(seed in 0u64..1_000_000) {
        let mdp = Arc::new(random_mdp(seed, 5, 2, 0.9));
        let cost = random_cost(seed, 2);
        let run = RunSpec::episodes(50, 40);
        let mut env = MdpEnv::new(mdp, cost).with_start(StartDist::Uniform).unwrap();
        let a = train(&mut env, &LearnSchedule::default(), &run, SeedTree::new(seed), None).unwrap();
        let b = train(&mut env, &LearnSchedule::default(), &run, SeedTree::new(seed), None).unwrap();
        prop_assert_eq!(a.diagnostics, b.diagnostics);
        prop_assert_eq!(a.q, b.q);
    }
}

#[test]
fn fa_training_does_not_diverge_on_fixed_suite() {
    for name in FIXED_SUITE {
        let (mdp, cost) = make_instance(name).unwrap();
        let n = mdp.n_states();
        let m = mdp.n_actions();
        let groups: Vec<usize> = (0..n).map(|s| s / 2).collect();
        let features = FeatureMap::aggregation(&groups, m).unwrap();
        let schedule = FaSchedule {
            step: StepRule::PerPair {
                alpha0: 1.0,
                omega: 0.7,
            },
            ..Default::default()
        };
        let mut env = MdpEnv::new(Arc::new(mdp), cost).with_start(StartDist::Uniform).unwrap();
        for seed in 0..20 {
            let out = train_fa(
                &mut env,
                &features,
                &LearnSchedule::default(),
                &schedule,
                &RunSpec::steps(10_000, 50),
                SeedTree::new(seed),
                None,
            )
            .unwrap_or_else(|e| panic!("{name} seed {seed}: {e}"));
            assert!(out.weights.r.iter().all(|x| x.is_finite()), "{name} seed {seed}");
        }
    }
}
