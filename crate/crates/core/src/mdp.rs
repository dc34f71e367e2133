//! Finite MDPs with a distinguished null action and intervention costs.
//!
//! The action axis of every tensor has `n_actions + 1` entries ("branches"):
//! branch 0 is the null action, branches `1..=n_actions` are the costly
//! interventions. Transition rows are stored sparsely in a fixed order, so
//! every expectation is summed in the same order on every run.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::rng::StreamRng;

/// Tolerance for transition rows summing to one.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// An action on the dense branch axis. `Action::NULL` is "do nothing".
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Action(usize);

impl Action {
    pub const NULL: Action = Action(0);

    /// The `a`-th intervention (zero-based over the non-null actions).
    pub const fn intervene(a: usize) -> Action {
        Action(a + 1)
    }

    pub const fn from_branch(branch: usize) -> Action {
        Action(branch)
    }

    pub const fn branch(self) -> usize {
        self.0
    }

    pub const fn is_null(self) -> bool {
        self.0 == 0
    }

    /// Zero-based index among the non-null actions, `None` for null.
    pub const fn act_index(self) -> Option<usize> {
        match self.0 {
            0 => None,
            b => Some(b - 1),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.act_index() {
            None => f.write_str("null"),
            Some(a) => write!(f, "a{a}"),
        }
    }
}

/// State-dependent part `f(s, a)` of a `κ + f(s, a)` cost.
#[derive(Clone)]
pub struct StateCost {
    label: String,
    f: Arc<dyn Fn(usize, Action) -> f64 + Send + Sync>,
}

impl StateCost {
    pub fn new(label: impl Into<String>, f: impl Fn(usize, Action) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, s: usize, a: Action) -> f64 {
        (self.f)(s, a)
    }
}

impl fmt::Debug for StateCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateCost({})", self.label)
    }
}

/// The intervention cost `c(s, a)`. Every non-`Zero` form is bounded below
/// by `kappa > 0` on non-null actions; the null action is always free.
#[derive(Clone, Debug)]
pub enum CostSpec {
    Zero,
    Fixed {
        kappa: f64,
    },
    /// `κ + λ·|magnitude(a)|`.
    FixedPlusProportional {
        kappa: f64,
        lambda: f64,
    },
    /// `κ + f(s, a)` with `f ≥ 0`.
    FixedPlusStateDependent {
        kappa: f64,
        extra: StateCost,
    },
}

impl CostSpec {
    pub fn cost(&self, s: usize, a: Action, magnitude: f64) -> f64 {
        if a.is_null() {
            return 0.0;
        }
        match self {
            CostSpec::Zero => 0.0,
            CostSpec::Fixed { kappa } => *kappa,
            CostSpec::FixedPlusProportional { kappa, lambda } => kappa + lambda * magnitude.abs(),
            CostSpec::FixedPlusStateDependent { kappa, extra } => kappa + extra.eval(s, a),
        }
    }

    /// The lower bound κ (0 for `Zero`).
    pub fn kappa(&self) -> f64 {
        match self {
            CostSpec::Zero => 0.0,
            CostSpec::Fixed { kappa }
            | CostSpec::FixedPlusProportional { kappa, .. }
            | CostSpec::FixedPlusStateDependent { kappa, .. } => *kappa,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, CostSpec::Zero)
    }

    pub fn validate(&self) -> Result<()> {
        let kappa = self.kappa();
        if !self.is_zero() && !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidCost(format!(
                "kappa must be a positive finite number, got {kappa}"
            )));
        }
        if let CostSpec::FixedPlusProportional { lambda, .. } = self {
            if !(*lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::InvalidCost(format!(
                    "lambda must be nonnegative and finite, got {lambda}"
                )));
            }
        }
        Ok(())
    }

    /// Re-key a state-dependent cost through `base`, e.g. from augmented
    /// states back to the original state space. Closed forms are unchanged.
    pub fn reindexed(&self, base: impl Fn(usize) -> usize + Send + Sync + 'static) -> CostSpec {
        match self {
            CostSpec::FixedPlusStateDependent { kappa, extra } => {
                let inner = extra.clone();
                CostSpec::FixedPlusStateDependent {
                    kappa: *kappa,
                    extra: StateCost::new(inner.label().to_string(), move |s, a| inner.eval(base(s), a)),
                }
            }
            other => other.clone(),
        }
    }
}

/// Serializable closed-form cost block `{form, kappa, lambda}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub form: CostForm,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostForm {
    Zero,
    Fixed,
    FixedPlusProportional,
}

impl CostConfig {
    pub fn to_spec(&self) -> Result<CostSpec> {
        let spec = match self.form {
            CostForm::Zero => CostSpec::Zero,
            CostForm::Fixed => CostSpec::Fixed { kappa: self.kappa },
            CostForm::FixedPlusProportional => CostSpec::FixedPlusProportional {
                kappa: self.kappa,
                lambda: self.lambda,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl TryFrom<&CostSpec> for CostConfig {
    type Error = Error;

    fn try_from(spec: &CostSpec) -> Result<Self> {
        Ok(match spec {
            CostSpec::Zero => CostConfig {
                form: CostForm::Zero,
                kappa: 0.0,
                lambda: 0.0,
            },
            CostSpec::Fixed { kappa } => CostConfig {
                form: CostForm::Fixed,
                kappa: *kappa,
                lambda: 0.0,
            },
            CostSpec::FixedPlusProportional { kappa, lambda } => CostConfig {
                form: CostForm::FixedPlusProportional,
                kappa: *kappa,
                lambda: *lambda,
            },
            CostSpec::FixedPlusStateDependent { extra, .. } => {
                return Err(Error::InvalidCost(format!(
                    "state-dependent cost `{}` has no closed form",
                    extra.label()
                )))
            }
        })
    }
}

/// A finite MDP with rewards `reward[b][s]` and kernel `P(·|s, b)` over
/// the branch axis (null plus `n_actions` interventions).
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rows: Vec<Vec<(usize, f64)>>,
    reward: Vec<f64>,
    magnitudes: Vec<f64>,
}

impl TabularMdp {
    /// Build from sparse rows indexed `[branch * n_states + s]`.
    /// Only shapes are checked here; see [`TabularMdp::validate`].
    pub fn from_rows(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        rows: Vec<Vec<(usize, f64)>>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        let cells = (n_actions + 1) * n_states;
        if n_states == 0 {
            return Err(Error::InvalidMdp(vec!["n_states must be positive".into()]));
        }
        if rows.len() != cells {
            return Err(Error::DimensionMismatch {
                expected: cells,
                got: rows.len(),
            });
        }
        if reward.len() != cells {
            return Err(Error::DimensionMismatch {
                expected: cells,
                got: reward.len(),
            });
        }
        for row in &rows {
            for &(next, _) in row {
                check_index("next state", next, n_states)?;
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            gamma,
            rows,
            reward,
            magnitudes: (1..=n_actions).map(|a| a as f64).collect(),
        })
    }

    /// Build from dense tensors `transition[b][s][s']` and `reward[b][s]`.
    pub fn from_dense(gamma: f64, transition: &[Vec<Vec<f64>>], reward: &[Vec<f64>]) -> Result<Self> {
        let branches = transition.len();
        if branches == 0 {
            return Err(Error::InvalidMdp(vec!["transition tensor is empty".into()]));
        }
        let n_states = transition[0].len();
        if reward.len() != branches {
            return Err(Error::DimensionMismatch {
                expected: branches,
                got: reward.len(),
            });
        }
        let mut rows = Vec::with_capacity(branches * n_states);
        let mut flat_reward = Vec::with_capacity(branches * n_states);
        for (b, block) in transition.iter().enumerate() {
            if block.len() != n_states {
                return Err(Error::DimensionMismatch {
                    expected: n_states,
                    got: block.len(),
                });
            }
            if reward[b].len() != n_states {
                return Err(Error::DimensionMismatch {
                    expected: n_states,
                    got: reward[b].len(),
                });
            }
            for row in block {
                if row.len() != n_states {
                    return Err(Error::DimensionMismatch {
                        expected: n_states,
                        got: row.len(),
                    });
                }
                rows.push(row.iter().copied().enumerate().filter(|&(_, p)| p != 0.0).collect());
            }
            flat_reward.extend_from_slice(&reward[b]);
        }
        Self::from_rows(n_states, branches - 1, gamma, rows, flat_reward)
    }

    /// Action magnitudes used by proportional costs (default `1, 2, …`).
    pub fn with_magnitudes(mut self, magnitudes: Vec<f64>) -> Result<Self> {
        if magnitudes.len() != self.n_actions {
            return Err(Error::DimensionMismatch {
                expected: self.n_actions,
                got: magnitudes.len(),
            });
        }
        self.magnitudes = magnitudes;
        Ok(self)
    }

    /// `self` if [`validate`](Self::validate) reports nothing.
    pub fn validated(self) -> Result<Self> {
        let v = self.validate();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidMdp(v))
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_branches(&self) -> usize {
        self.n_actions + 1
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn magnitude(&self, a: Action) -> f64 {
        a.act_index().map_or(0.0, |i| self.magnitudes[i])
    }

    #[inline]
    fn cell(&self, a: Action, s: usize) -> usize {
        a.branch() * self.n_states + s
    }

    pub fn check(&self, s: usize, a: Action) -> Result<()> {
        check_index("state", s, self.n_states)?;
        check_index("action", a.branch(), self.n_branches())
    }

    /// Sparse row `P(·|s, a)`.
    pub fn row(&self, a: Action, s: usize) -> &[(usize, f64)] {
        &self.rows[self.cell(a, s)]
    }

    pub fn reward(&self, a: Action, s: usize) -> f64 {
        self.reward[self.cell(a, s)]
    }

    pub fn cost(&self, spec: &CostSpec, s: usize, a: Action) -> f64 {
        spec.cost(s, a, self.magnitude(a))
    }

    /// `Σ_{s'} P(s'|s, a) v(s')`, summed in stored row order.
    #[inline]
    pub fn expect(&self, a: Action, s: usize, v: &[f64]) -> f64 {
        self.row(a, s).iter().fold(0.0, |acc, &(next, p)| acc + p * v[next])
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Largest cost over all states and non-null actions.
    pub fn max_cost(&self, spec: &CostSpec) -> f64 {
        let mut m = 0.0f64;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                m = m.max(self.cost(spec, s, Action::intervene(a)));
            }
        }
        m
    }

    /// Dense `[b][s][s']` copy of the kernel.
    pub fn dense_transition(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_branches())
            .map(|b| {
                (0..self.n_states)
                    .map(|s| {
                        let mut dense = vec![0.0; self.n_states];
                        for &(next, p) in self.row(Action::from_branch(b), s) {
                            dense[next] += p;
                        }
                        dense
                    })
                    .collect()
            })
            .collect()
    }

    pub fn dense_reward(&self) -> Vec<Vec<f64>> {
        self.reward.chunks(self.n_states).map(<[f64]>::to_vec).collect()
    }

    /// Every broken invariant, each naming the offending index.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            out.push(format!("gamma = {} is outside [0, 1)", self.gamma));
        }
        for b in 0..self.n_branches() {
            let a = Action::from_branch(b);
            for s in 0..self.n_states {
                let row = self.row(a, s);
                let mut sum = 0.0;
                for &(next, p) in row {
                    if !p.is_finite() || p < 0.0 {
                        out.push(format!("transition[{a}][{s}][{next}] = {p} is not a probability"));
                    }
                    sum += p;
                }
                if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                    out.push(format!("transition row ({a}, {s}) sums to {sum}"));
                }
                let r = self.reward(a, s);
                if !r.is_finite() {
                    out.push(format!("reward[{a}][{s}] = {r} is not finite"));
                }
            }
        }
        for (i, m) in self.magnitudes.iter().enumerate() {
            if !m.is_finite() {
                out.push(format!("magnitude[{i}] = {m} is not finite"));
            }
        }
        out
    }
}

/// One observed step. `reward` and `cost` are kept apart; the learning
/// signal is `reward - cost`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionSample {
    pub state: usize,
    pub action: Action,
    pub reward: f64,
    pub cost: f64,
    pub next_state: usize,
    pub intervened: bool,
}

impl TransitionSample {
    pub fn net(&self) -> f64 {
        self.reward - self.cost
    }
}

/// `ℛ(s, a) − 𝒞(s, a)`; for the null action this is just `R(s, null)`.
pub fn effective_reward(mdp: &TabularMdp, cost: &CostSpec, s: usize, a: Action) -> Result<f64> {
    mdp.check(s, a)?;
    Ok(mdp.reward(a, s) - mdp.cost(cost, s, a))
}

/// Inverse-CDF draw from a sparse row using one uniform variate.
pub(crate) fn draw_next(row: &[(usize, f64)], u: f64) -> usize {
    let mut acc = 0.0;
    for &(next, p) in row {
        acc += p;
        if u < acc {
            return next;
        }
    }
    row.last().map(|&(n, _)| n).unwrap_or(0)
}

/// Draw `s' ~ P(·|s, a)`. Consumes exactly one uniform from `rng`.
pub fn sample_transition(
    mdp: &TabularMdp,
    cost: &CostSpec,
    s: usize,
    a: Action,
    rng: &mut StreamRng,
) -> Result<TransitionSample> {
    mdp.check(s, a)?;
    let u: f64 = rng.random();
    Ok(TransitionSample {
        state: s,
        action: a,
        reward: mdp.reward(a, s),
        cost: mdp.cost(cost, s, a),
        next_state: draw_next(mdp.row(a, s), u),
        intervened: !a.is_null(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use proptest::prelude::*;

    fn two_state(r_act: f64) -> TabularMdp {
        TabularMdp::from_dense(
            0.9,
            &[
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            ],
            &[vec![0.0, 1.0], vec![r_act, r_act]],
        )
        .unwrap()
    }

    #[test]
    fn effective_reward_fixed_cost() {
        let mdp = two_state(1.0);
        let cost = CostSpec::Fixed { kappa: 0.5 };
        assert_eq!(effective_reward(&mdp, &cost, 0, Action::intervene(0)).unwrap(), 0.5);
    }

    #[test]
    fn effective_reward_null_ignores_cost() {
        let mdp = two_state(1.0);
        for cost in [CostSpec::Zero, CostSpec::Fixed { kappa: 3.0 }] {
            assert_eq!(effective_reward(&mdp, &cost, 1, Action::NULL).unwrap(), 1.0);
        }
    }

    #[test]
    fn effective_reward_proportional() {
        let mdp = two_state(2.0).with_magnitudes(vec![2.0]).unwrap();
        let cost = CostSpec::FixedPlusProportional {
            kappa: 1.0,
            lambda: 0.5,
        };
        // 2 - (1 + 0.5 * 2)
        assert_eq!(effective_reward(&mdp, &cost, 0, Action::intervene(0)).unwrap(), 0.0);
    }

    #[test]
    fn effective_reward_rejects_bad_index() {
        let mdp = two_state(1.0);
        assert!(matches!(
            effective_reward(&mdp, &CostSpec::Zero, 2, Action::NULL),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            effective_reward(&mdp, &CostSpec::Zero, 0, Action::intervene(1)),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn deterministic_row_is_always_taken() {
        let mdp = two_state(0.0);
        let mut rng = SeedTree::new(1).stream("t");
        for _ in 0..100 {
            let t = sample_transition(&mdp, &CostSpec::Zero, 0, Action::intervene(0), &mut rng).unwrap();
            assert_eq!(t.next_state, 1);
        }
    }

    #[test]
    fn uniform_row_frequencies() {
        let mdp = TabularMdp::from_dense(0.5, &[vec![vec![0.5, 0.5], vec![0.5, 0.5]]], &[vec![0.0, 0.0]]).unwrap();
        let mut rng = SeedTree::new(9).stream("t");
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| {
                sample_transition(&mdp, &CostSpec::Zero, 0, Action::NULL, &mut rng)
                    .unwrap()
                    .next_state
                    == 1
            })
            .count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn null_sample_is_free() {
        let mdp = two_state(1.0);
        let mut rng = SeedTree::new(1).stream("t");
        let t = sample_transition(&mdp, &CostSpec::Fixed { kappa: 2.0 }, 0, Action::NULL, &mut rng).unwrap();
        assert!(!t.intervened);
        assert_eq!(t.cost, 0.0);
    }

    #[test]
    fn validate_reports_violations() {
        assert!(two_state(1.0).validate().is_empty());

        let short = TabularMdp::from_dense(0.9, &[vec![vec![0.9, 0.0], vec![0.0, 1.0]]], &[vec![0.0, 0.0]]).unwrap();
        let v = short.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("(null, 0)"), "{v:?}");

        let negative =
            TabularMdp::from_dense(0.9, &[vec![vec![1.2, -0.2], vec![0.0, 1.0]]], &[vec![0.0, 0.0]]).unwrap();
        let v = negative.validate();
        assert!(v.iter().any(|m| m.contains("transition[null][0][1]")), "{v:?}");

        let undiscounted = TabularMdp::from_dense(1.0, &[vec![vec![1.0]]], &[vec![0.0]]).unwrap();
        assert_eq!(undiscounted.validate().len(), 1);
    }

    #[test]
    fn cost_validation() {
        assert!(CostSpec::Fixed { kappa: 0.0 }.validate().is_err());
        assert!(CostSpec::FixedPlusProportional {
            kappa: 1.0,
            lambda: -1.0
        }
        .validate()
        .is_err());
        assert!(CostSpec::Zero.validate().is_ok());
    }

    fn arb_cost() -> impl Strategy<Value = CostSpec> {
        prop_oneof![
            (1e-3..10.0f64).prop_map(|kappa| CostSpec::Fixed { kappa }),
            (1e-3..10.0f64, 0.0..5.0f64).prop_map(|(kappa, lambda)| CostSpec::FixedPlusProportional { kappa, lambda }),
            (1e-3..10.0f64, 0.0..3.0f64).prop_map(|(kappa, w)| CostSpec::FixedPlusStateDependent {
                kappa,
                extra: StateCost::new("w*s*a", move |s, a| w * (s as f64) * (a.branch() as f64)),
            }),
        ]
    }

    proptest! {
        #[test]
        fn costs_are_minimally_bounded(cost in arb_cost(), s in 0usize..50, a in 0usize..8, mag in -5.0..5.0f64) {
            let c = cost.cost(s, Action::intervene(a), mag);
            prop_assert!(c >= cost.kappa());
            prop_assert_eq!(cost.cost(s, Action::NULL, mag), 0.0);
        }

        #[test]
        fn sample_streams_are_deterministic(seed in any::<u64>(), s in 0usize..2) {
            let mdp = TabularMdp::from_dense(0.5, &[vec![vec![0.3, 0.7], vec![0.6, 0.4]]], &[vec![1.0, 2.0]]).unwrap();
            let run = |seed| {
                let mut rng = SeedTree::new(seed).stream("x");
                (0..50).map(|_| sample_transition(&mdp, &CostSpec::Zero, s, Action::NULL, &mut rng).unwrap().next_state).collect::<Vec<_>>()
            };
            prop_assert_eq!(run(seed), run(seed));
        }
    }
}
