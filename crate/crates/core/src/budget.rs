//! Budget-constrained impulse control by state augmentation.
//!
//! The augmented state is `(s, z)` where `z ∈ {-1, 0, …, n}` is the
//! remaining budget. An intervention lowers `z` by its charge; the null
//! branch leaves it unchanged. In soft mode the reward becomes `-Δ` once
//! `z < 0` and all over-budget levels share the single absorbing stratum
//! `z = -1`. In hard mode an intervention whose charge exceeds `z`
//! executes as the null action while still paying its cost, so it is never
//! preferred and `z` never drops below 0.
//!
//! Augmented index: `(z + 1) · n_base + s`.

use serde::{Deserialize, Serialize};

use crate::env::{DiscreteEnv, EnvStep};
use crate::error::{Error, Result};
use crate::mdp::{Action, CostSpec, TabularMdp};
use crate::rng::{SeedTree, StreamRng};

/// Largest augmented state space built by default.
pub const DEFAULT_PRODUCT_LIMIT: usize = 2_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    #[default]
    Soft,
    Hard,
}

/// Budget units consumed by one intervention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BudgetCharge {
    #[default]
    Unit,
    /// `ceil(cost / unit)`, at least 1.
    CostProportional { unit: f64 },
}

impl BudgetCharge {
    pub fn units(&self, cost: f64) -> i64 {
        match *self {
            BudgetCharge::Unit => 1,
            BudgetCharge::CostProportional { unit } => ((cost / unit).ceil() as i64).max(1),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    #[default]
    Auto,
}

/// Over-budget penalty: a value or `"auto"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Penalty {
    Value(f64),
    Auto(AutoTag),
}

impl Default for Penalty {
    fn default() -> Self {
        Penalty::Auto(AutoTag::Auto)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub n: u32,
    #[serde(default)]
    pub delta: Penalty,
    #[serde(default)]
    pub mode: BudgetMode,
    #[serde(default)]
    pub charge: BudgetCharge,
}

impl BudgetSpec {
    pub fn new(n: u32, mode: BudgetMode) -> Self {
        Self {
            n,
            delta: Penalty::default(),
            mode,
            charge: BudgetCharge::Unit,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = Penalty::Value(delta);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Penalty::Value(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidCost(format!("budget penalty must be positive, got {d}")));
            }
        }
        if let BudgetCharge::CostProportional { unit } = self.charge {
            if !(unit > 0.0 && unit.is_finite()) {
                return Err(Error::InvalidCost(format!("charge unit must be positive, got {unit}")));
            }
        }
        Ok(())
    }

    pub fn resolve_delta(&self, mdp: &TabularMdp, cost: &CostSpec) -> f64 {
        match self.delta {
            Penalty::Value(d) => d,
            Penalty::Auto(_) => auto_delta(mdp, cost),
        }
    }
}

/// `10 · (max|R| + max gain) / (1 - γ)` where the gain of an intervention
/// is how much its net reward exceeds the null reward.
pub fn auto_delta(mdp: &TabularMdp, cost: &CostSpec) -> f64 {
    let mut gain: f64 = 0.0;
    for s in 0..mdp.n_states() {
        let stay = mdp.reward(Action::NULL, s);
        for i in 0..mdp.n_actions() {
            let a = Action::intervene(i);
            gain = gain.max(mdp.reward(a, s) - mdp.cost(cost, s, a) - stay);
        }
    }
    let delta = 10.0 * (mdp.max_abs_reward() + gain) / (1.0 - mdp.gamma());
    if delta > 0.0 {
        delta
    } else {
        1.0
    }
}

pub fn augmented_index(n_base: usize, s: usize, z: i64) -> usize {
    (z + 1) as usize * n_base + s
}

/// `(s, z)` for an augmented index.
pub fn split_index(n_base: usize, index: usize) -> (usize, i64) {
    (index % n_base, (index / n_base) as i64 - 1)
}

#[derive(Clone, Debug)]
pub struct AugmentedMdp {
    pub mdp: TabularMdp,
    pub cost: CostSpec,
    pub n_base: usize,
    pub budget: BudgetSpec,
    pub delta: f64,
}

impl AugmentedMdp {
    pub fn index(&self, s: usize, z: i64) -> usize {
        augmented_index(self.n_base, s, z)
    }

    pub fn split(&self, index: usize) -> (usize, i64) {
        split_index(self.n_base, index)
    }

    /// The start state `(s, n)`.
    pub fn start(&self, s: usize) -> usize {
        self.index(s, self.budget.n as i64)
    }
}

pub fn augment_mdp(mdp: &TabularMdp, cost: &CostSpec, budget: &BudgetSpec) -> Result<AugmentedMdp> {
    augment_mdp_limited(mdp, cost, budget, DEFAULT_PRODUCT_LIMIT)
}

pub fn augment_mdp_limited(
    mdp: &TabularMdp,
    cost: &CostSpec,
    budget: &BudgetSpec,
    limit: usize,
) -> Result<AugmentedMdp> {
    budget.validate()?;
    let n = mdp.n_states();
    let levels = budget.n as usize + 2;
    let states = levels.checked_mul(n).ok_or(Error::ProductTooLarge {
        states: usize::MAX,
        limit,
    })?;
    if states > limit {
        return Err(Error::ProductTooLarge { states, limit });
    }
    let delta = budget.resolve_delta(mdp, cost);
    let nb = mdp.n_branches();
    let mut rows = vec![Vec::new(); nb * states];
    let mut reward = vec![0.0; nb * states];
    let shift = |row: &[(usize, f64)], z: i64| -> Vec<(usize, f64)> {
        row.iter().map(|&(t, p)| (augmented_index(n, t, z), p)).collect()
    };
    for z in -1..=budget.n as i64 {
        for s in 0..n {
            let i = augmented_index(n, s, z);
            for b in 0..nb {
                let a = Action::from_branch(b);
                let k = if a.is_null() {
                    0
                } else {
                    budget.charge.units(mdp.cost(cost, s, a))
                };
                let (executed, next_z) = match budget.mode {
                    _ if a.is_null() => (a, z),
                    BudgetMode::Soft => (a, if z < 0 { -1 } else { (z - k).max(-1) }),
                    BudgetMode::Hard if z >= k => (a, z - k),
                    BudgetMode::Hard => (Action::NULL, z),
                };
                rows[b * states + i] = shift(mdp.row(executed, s), next_z);
                reward[b * states + i] = if z < 0 { -delta } else { mdp.reward(executed, s) };
            }
        }
    }
    let aug = TabularMdp::from_rows(states, mdp.n_actions(), mdp.gamma(), rows, reward)?
        .with_magnitudes(mdp.magnitudes().to_vec())?;
    Ok(AugmentedMdp {
        mdp: aug,
        cost: cost.reindexed(move |i| i % n),
        n_base: n,
        budget: *budget,
        delta,
    })
}

/// Online counterpart of [`augment_mdp`] for any environment. Observations
/// are augmented indices.
#[derive(Clone, Debug)]
pub struct BudgetEnv<E> {
    inner: E,
    budget: BudgetSpec,
    delta: f64,
    z: i64,
    base: usize,
}

impl<E: DiscreteEnv> BudgetEnv<E> {
    /// `delta` is the resolved penalty.
    pub fn new(inner: E, budget: BudgetSpec, delta: f64) -> Self {
        Self {
            inner,
            budget,
            delta,
            z: budget.n as i64,
            base: 0,
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn remaining(&self) -> i64 {
        self.z
    }

    fn index(&self) -> usize {
        augmented_index(self.inner.n_states(), self.base, self.z)
    }
}

impl<E: DiscreteEnv> DiscreteEnv for BudgetEnv<E> {
    fn n_states(&self) -> usize {
        (self.budget.n as usize + 2) * self.inner.n_states()
    }

    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    fn reset(&mut self, rng: &mut StreamRng) -> usize {
        self.base = self.inner.reset(rng);
        self.z = self.budget.n as i64;
        self.index()
    }

    fn step(&mut self, action: Action, rng: &mut StreamRng) -> Result<EnvStep> {
        let state = self.index();
        let cost = self.inner.cost_of(action);
        let k = if action.is_null() {
            0
        } else {
            self.budget.charge.units(cost)
        };
        let blocked = self.budget.mode == BudgetMode::Hard && !action.is_null() && self.z < k;
        let mut step = self.inner.step(if blocked { Action::NULL } else { action }, rng)?;
        if blocked {
            step.sample.action = action;
            step.sample.cost = cost;
        } else if !action.is_null() {
            self.z = if self.z < 0 { -1 } else { (self.z - k).max(-1) };
        }
        if state / self.inner.n_states() == 0 {
            step.sample.reward = -self.delta;
        }
        self.base = step.sample.next_state;
        step.sample.state = state;
        step.sample.next_state = self.index();
        Ok(step)
    }

    fn cost_of(&self, a: Action) -> f64 {
        self.inner.cost_of(a)
    }

    fn can_intervene(&self) -> bool {
        self.budget.mode == BudgetMode::Soft || self.z > 0
    }

    fn reward_bound(&self) -> f64 {
        self.inner.reward_bound().max(self.delta)
    }
}

/// Fraction of `episodes` rollouts whose consumed budget exceeds `n`.
pub fn check_budget_satisfaction<E: DiscreteEnv>(
    policy: impl Fn(usize) -> Action,
    env: &mut BudgetEnv<E>,
    episodes: usize,
    horizon: usize,
    seeds: SeedTree,
) -> f64 {
    let mut rng = seeds.stream("env");
    let mut violations = 0usize;
    for _ in 0..episodes {
        let mut s = env.reset(&mut rng);
        let mut used = 0i64;
        for _ in 0..horizon {
            let a = policy(s);
            let Ok(step) = env.step(a, &mut rng) else { break };
            if step.sample.intervened {
                used += env.budget.charge.units(step.sample.cost);
            }
            s = step.sample.next_state;
            if step.done {
                break;
            }
        }
        if used > env.budget.n as i64 {
            violations += 1;
        }
    }
    violations as f64 / episodes.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{MdpEnv, StartDist};
    use crate::envs::instances::{chain, chain2, make_instance, random_cost, random_mdp, FIXED_SUITE};
    use crate::solver::{extract_policy, value_iteration};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn solve(aug: &AugmentedMdp) -> crate::solver::ValueIteration {
        value_iteration(&aug.mdp, &aug.cost, 1e-10, 1_000_000).unwrap()
    }

    #[test]
    fn augmented_shape_and_validity() {
        for mode in [BudgetMode::Soft, BudgetMode::Hard] {
            let (mdp, cost) = make_instance("machine4").unwrap();
            let aug = augment_mdp(&mdp, &cost, &BudgetSpec::new(3, mode)).unwrap();
            assert_eq!(aug.mdp.n_states(), 5 * mdp.n_states());
            assert!(aug.mdp.validate().is_empty());
            assert_eq!(aug.split(aug.start(2)), (2, 3));
        }
    }

    #[test]
    fn product_limit_is_enforced() {
        let (mdp, cost) = chain2();
        let err = augment_mdp_limited(&mdp, &cost, &BudgetSpec::new(100, BudgetMode::Soft), 50).unwrap_err();
        assert_eq!(err, Error::ProductTooLarge { states: 204, limit: 50 });
    }

    #[test]
    fn zero_budget_soft_never_intervenes() {
        for name in FIXED_SUITE {
            let (mdp, cost) = make_instance(name).unwrap();
            let aug = augment_mdp(&mdp, &cost, &BudgetSpec::new(0, BudgetMode::Soft)).unwrap();
            let policy = extract_policy(&aug.mdp, &aug.cost, &solve(&aug).value);
            for s in 0..mdp.n_states() {
                assert!(!policy.intervene[aug.index(s, 0)], "{name} state {s}");
            }
        }
    }

    #[test]
    fn slack_budget_matches_unconstrained() {
        let (mdp, cost) = chain(4).unwrap();
        let v = value_iteration(&mdp, &cost, 1e-12, 100_000).unwrap().value;
        let aug = augment_mdp(&mdp, &cost, &BudgetSpec::new(5, BudgetMode::Soft)).unwrap();
        let va = solve(&aug).value;
        for s in 0..4 {
            assert!((va.0[aug.start(s)] - v.0[s]).abs() < 1e-8);
        }
    }

    #[test]
    fn chain2_single_budget_intervenes_once() {
        let (mdp, cost) = chain2();
        for mode in [BudgetMode::Soft, BudgetMode::Hard] {
            let aug = augment_mdp(&mdp, &cost, &BudgetSpec::new(1, mode)).unwrap();
            let policy = extract_policy(&aug.mdp, &aug.cost, &solve(&aug).value);
            let mut s = aug.start(0);
            let mut count = 0;
            for _ in 0..50 {
                let a = policy.act(s);
                if !a.is_null() {
                    count += 1;
                }
                s = aug.mdp.row(a, s)[0].0;
            }
            assert_eq!(count, 1);
        }
    }

    #[test]
    fn value_is_monotone_in_budget() {
        for name in FIXED_SUITE {
            let (mdp, cost) = make_instance(name).unwrap();
            for mode in [BudgetMode::Soft, BudgetMode::Hard] {
                let aug = augment_mdp(&mdp, &cost, &BudgetSpec::new(4, mode)).unwrap();
                let v = solve(&aug).value;
                for s in 0..mdp.n_states() {
                    for z in -1..4 {
                        assert!(
                            v.0[aug.index(s, z + 1)] >= v.0[aug.index(s, z)] - 1e-8,
                            "{name} {mode:?} s={s} z={z}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hard_mode_always_intervene_never_violates() {
        let (mdp, cost) = chain(3).unwrap();
        let env = MdpEnv::new(Arc::new(mdp), cost).with_start(StartDist::Uniform).unwrap();
        let mut env = BudgetEnv::new(env, BudgetSpec::new(2, BudgetMode::Hard), 100.0);
        let frac = check_budget_satisfaction(|_| Action::intervene(0), &mut env, 10_000, 20, SeedTree::new(0));
        assert_eq!(frac, 0.0);
    }

    #[test]
    fn always_and_never_policies() {
        let (mdp, cost) = chain(3).unwrap();
        let env = MdpEnv::new(Arc::new(mdp), cost);
        let mut env = BudgetEnv::new(env, BudgetSpec::new(2, BudgetMode::Soft), 100.0);
        assert_eq!(
            check_budget_satisfaction(|_| Action::intervene(0), &mut env, 100, 10, SeedTree::new(0)),
            1.0
        );
        assert_eq!(
            check_budget_satisfaction(|_| Action::NULL, &mut env, 100, 10, SeedTree::new(0)),
            0.0
        );
    }

    #[test]
    fn soft_penalty_after_budget_is_spent() {
        let (mdp, cost) = chain(3).unwrap();
        let env = MdpEnv::new(Arc::new(mdp), cost)
            .with_start(StartDist::Fixed(0))
            .unwrap();
        let mut env = BudgetEnv::new(env, BudgetSpec::new(3, BudgetMode::Soft), 50.0);
        let mut rng = SeedTree::new(1).stream("env");
        env.reset(&mut rng);
        let rewards: Vec<f64> = (0..10)
            .map(|_| env.step(Action::intervene(0), &mut rng).unwrap().sample.reward)
            .collect();
        assert!(rewards[..4].iter().all(|&r| r != -50.0));
        assert!(rewards[4..].iter().all(|&r| r == -50.0), "{rewards:?}");
    }

    #[test]
    fn slack_wrapper_is_transparent() {
        let mdp = Arc::new(random_mdp(3, 5, 2, 0.9));
        let cost = random_cost(3, 2);
        let mut plain = MdpEnv::new(mdp.clone(), cost.clone());
        let mut wrapped = BudgetEnv::new(MdpEnv::new(mdp, cost), BudgetSpec::new(20, BudgetMode::Soft), 10.0);
        let mut r1 = SeedTree::new(5).stream("env");
        let mut r2 = SeedTree::new(5).stream("env");
        let s1 = plain.reset(&mut r1);
        let s2 = wrapped.reset(&mut r2);
        assert_eq!(split_index(5, s2).0, s1);
        for _ in 0..20 {
            let a = plain.step(Action::NULL, &mut r1).unwrap().sample;
            let b = wrapped.step(Action::NULL, &mut r2).unwrap().sample;
            assert_eq!(
                (a.reward, a.cost, a.next_state),
                (b.reward, b.cost, split_index(5, b.next_state).0)
            );
        }
    }

    #[test]
    fn penalty_parses_from_toml() {
        let b: BudgetSpec = toml::from_str("n = 2\ndelta = \"auto\"\nmode = \"hard\"").unwrap();
        assert_eq!(b.delta, Penalty::Auto(AutoTag::Auto));
        let b: BudgetSpec =
            toml::from_str("n = 2\ndelta = 5.0\ncharge = { type = \"cost_proportional\", unit = 0.5 }").unwrap();
        assert_eq!(b.delta, Penalty::Value(5.0));
        assert_eq!(b.charge.units(1.2), 3);
        assert!(toml::from_str::<BudgetSpec>("n = 2\nbogus = 1").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn augmented_contraction_and_soft_zero_budget(seed in 0u64..10_000, n in 2usize..6, m in 1usize..3, budget in 0u32..3) {
            let mdp = random_mdp(seed, n, m, 0.85);
            let cost = random_cost(seed, m);
            let aug = augment_mdp(&mdp, &cost, &BudgetSpec::new(budget, BudgetMode::Soft)).unwrap();
            prop_assert!(aug.mdp.validate().is_empty());
            let vi = solve(&aug);
            for w in vi.residuals.windows(2) {
                if w[0] > 1e-9 {
                    prop_assert!(w[1] <= 0.85 * w[0] + 1e-12);
                }
            }
            let policy = extract_policy(&aug.mdp, &aug.cost, &vi.value);
            for s in 0..n {
                prop_assert!(!policy.intervene[aug.index(s, 0)]);
            }
        }
    }
}
