//! Exact dynamic programming for impulse-control MDPs.
//!
//! The Bellman operator compares two branches at every state:
//!
//! ```text
//! (Tv)(s) = max{ max_a [R(s,a) - c(s,a) + γ Σ P(s'|s,a) v(s')],   intervention
//!                R(s,null) + γ Σ P(s'|s,null) v(s') }                null
//! ```
//!
//! An intervention is optimal exactly where the intervention branch attains
//! the value (the obstacle condition). These routines are also the oracle
//! that the learning modules are checked against.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_index, Error, Result};
use crate::mdp::{Action, CostSpec, TabularMdp};

/// Margin by which intervening must beat waiting. Ties go to the null
/// action, which costs nothing.
pub const TIE_EPSILON: f64 = 1e-9;

/// Dense linear solves are used up to this many states.
pub const DIRECT_SOLVE_LIMIT: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction(pub Vec<f64>);

impl ValueFunction {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        sup_distance(&self.0, &other.0)
    }
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// The pair (𝔤, π): whether to intervene at each state and with which action.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImpulsePolicy {
    pub intervene: Vec<bool>,
    /// Zero-based non-null action; only meaningful where `intervene` is set.
    pub action: Vec<usize>,
}

impl ImpulsePolicy {
    pub fn never(n_states: usize) -> Self {
        Self {
            intervene: vec![false; n_states],
            action: vec![0; n_states],
        }
    }

    pub fn act(&self, s: usize) -> Action {
        if self.intervene[s] {
            Action::intervene(self.action[s])
        } else {
            Action::NULL
        }
    }

    pub fn intervention_set(&self) -> Vec<usize> {
        (0..self.intervene.len()).filter(|&s| self.intervene[s]).collect()
    }

    pub fn n_states(&self) -> usize {
        self.intervene.len()
    }
}

/// `ℳv(s, a) = R(s,a) - c(s,a) + γ Σ P(s'|s,a) v(s')` for a non-null `a`.
pub fn intervention_operator(mdp: &TabularMdp, cost: &CostSpec, v: &ValueFunction, s: usize, a: Action) -> Result<f64> {
    if a.is_null() {
        return Err(Error::NullIntervention);
    }
    mdp.check(s, a)?;
    check_index("value", mdp.n_states() - 1, v.len())?;
    Ok(intervention_value(mdp, cost, &v.0, s, a))
}

#[inline]
pub(crate) fn intervention_value(mdp: &TabularMdp, cost: &CostSpec, v: &[f64], s: usize, a: Action) -> f64 {
    mdp.reward(a, s) - mdp.cost(cost, s, a) + mdp.gamma() * mdp.expect(a, s, v)
}

#[inline]
pub(crate) fn null_value(mdp: &TabularMdp, v: &[f64], s: usize) -> f64 {
    mdp.reward(Action::NULL, s) + mdp.gamma() * mdp.expect(Action::NULL, s, v)
}

/// Best intervention at `s`: `(value, action index)`, lowest index on ties.
/// `None` when the MDP has no non-null actions.
fn best_intervention(mdp: &TabularMdp, cost: &CostSpec, v: &[f64], s: usize) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for a in 0..mdp.n_actions() {
        let q = intervention_value(mdp, cost, v, s, Action::intervene(a));
        if best.is_none_or(|(b, _)| q > b) {
            best = Some((q, a));
        }
    }
    best
}

/// One application of the impulse Bellman operator. `v` is not modified.
pub fn bellman_apply(mdp: &TabularMdp, cost: &CostSpec, v: &ValueFunction) -> ValueFunction {
    let mut out = vec![0.0; mdp.n_states()];
    bellman_into(mdp, cost, &v.0, &mut out);
    ValueFunction(out)
}

fn bellman_into(mdp: &TabularMdp, cost: &CostSpec, v: &[f64], out: &mut [f64]) {
    for (s, slot) in out.iter_mut().enumerate() {
        let stay = null_value(mdp, v, s);
        *slot = match best_intervention(mdp, cost, v, s) {
            Some((act, _)) => act.max(stay),
            None => stay,
        };
    }
}

/// The classical optimality operator over all branches with net rewards
/// `R - c`, with no distinction between acting and waiting.
pub fn flat_bellman_apply(mdp: &TabularMdp, cost: &CostSpec, v: &ValueFunction) -> ValueFunction {
    let out = (0..mdp.n_states())
        .map(|s| {
            (0..mdp.n_branches())
                .map(|b| {
                    let a = Action::from_branch(b);
                    mdp.reward(a, s) - mdp.cost(cost, s, a) + mdp.gamma() * mdp.expect(a, s, &v.0)
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    ValueFunction(out)
}

#[derive(Clone, Debug)]
pub struct ValueIteration {
    pub value: ValueFunction,
    pub iterations: usize,
    pub residual: f64,
    /// `‖v_{k+1} - v_k‖_∞` for every sweep.
    pub residuals: Vec<f64>,
}

/// Iterate `v ← Tv` from `v ≡ 0` until the sup-norm step is below `tol`.
pub fn value_iteration(mdp: &TabularMdp, cost: &CostSpec, tol: f64, max_iters: usize) -> Result<ValueIteration> {
    iterate(mdp, tol, max_iters, |v, out| bellman_into(mdp, cost, v, out))
}

/// Value iteration with [`flat_bellman_apply`]; the classical baseline.
pub fn flat_value_iteration(mdp: &TabularMdp, cost: &CostSpec, tol: f64, max_iters: usize) -> Result<ValueIteration> {
    iterate(mdp, tol, max_iters, |v, out| {
        let next = flat_bellman_apply(mdp, cost, &ValueFunction(v.to_vec()));
        out.copy_from_slice(&next.0);
    })
}

fn iterate(
    mdp: &TabularMdp,
    tol: f64,
    max_iters: usize,
    mut step: impl FnMut(&[f64], &mut [f64]),
) -> Result<ValueIteration> {
    if !(tol > 0.0) {
        return Err(Error::Numerical(format!("tolerance must be positive, got {tol}")));
    }
    let n = mdp.n_states();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut residuals = Vec::new();
    for k in 1..=max_iters {
        step(&v, &mut next);
        let res = sup_distance(&v, &next);
        if !res.is_finite() {
            return Err(Error::Numerical(format!("non-finite residual at sweep {k}")));
        }
        residuals.push(res);
        std::mem::swap(&mut v, &mut next);
        if res < tol {
            return Ok(ValueIteration {
                value: ValueFunction(v),
                iterations: k,
                residual: res,
                residuals,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Sweeps needed for `tol` from `v ≡ 0` when net rewards are bounded by
/// `reward_bound`: `ceil(log(tol (1-γ) / C) / log γ)`.
pub fn iteration_bound(gamma: f64, reward_bound: f64, tol: f64) -> usize {
    if gamma <= 0.0 || reward_bound <= 0.0 {
        return 1;
    }
    let k = (tol * (1.0 - gamma) / reward_bound).ln() / gamma.ln();
    k.ceil().max(1.0) as usize
}

/// Branch values at every state under `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchValues {
    /// `R(s,null) + γ P_null v`.
    pub null: Vec<f64>,
    /// `ℳv(s, a)`, indexed `[s * n_actions + a]`.
    pub act: Vec<f64>,
    pub n_actions: usize,
}

impl BranchValues {
    pub fn get(&self, s: usize, a: Action) -> f64 {
        match a.act_index() {
            None => self.null[s],
            Some(i) => self.act[s * self.n_actions + i],
        }
    }
}

pub fn branch_values(mdp: &TabularMdp, cost: &CostSpec, v: &ValueFunction) -> BranchValues {
    let n = mdp.n_states();
    let m = mdp.n_actions();
    let mut act = Vec::with_capacity(n * m);
    for s in 0..n {
        for a in 0..m {
            act.push(intervention_value(mdp, cost, &v.0, s, Action::intervene(a)));
        }
    }
    BranchValues {
        null: (0..n).map(|s| null_value(mdp, &v.0, s)).collect(),
        act,
        n_actions: m,
    }
}

/// Obstacle-condition policy: intervene where the best intervention beats
/// the null branch by more than [`TIE_EPSILON`].
pub fn extract_policy(mdp: &TabularMdp, cost: &CostSpec, v_star: &ValueFunction) -> ImpulsePolicy {
    let n = mdp.n_states();
    let mut policy = ImpulsePolicy::never(n);
    for s in 0..n {
        let stay = null_value(mdp, &v_star.0, s);
        if let Some((act, a)) = best_intervention(mdp, cost, &v_star.0, s) {
            policy.action[s] = a;
            policy.intervene[s] = act > stay + TIE_EPSILON;
        }
    }
    policy
}

/// Exact value of a fixed policy: solves `(I - γ P_π) v = r_π`.
pub fn evaluate_policy(mdp: &TabularMdp, cost: &CostSpec, policy: &ImpulsePolicy) -> Result<ValueFunction> {
    let n = mdp.n_states();
    if policy.n_states() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: policy.n_states(),
        });
    }
    for s in 0..n {
        if policy.intervene[s] {
            check_index("policy action", policy.action[s], mdp.n_actions())?;
        }
    }
    let gamma = mdp.gamma();
    let r: Vec<f64> = (0..n)
        .map(|s| {
            let a = policy.act(s);
            mdp.reward(a, s) - mdp.cost(cost, s, a)
        })
        .collect();

    let apply = |v: &[f64], s: usize| v[s] - gamma * mdp.expect(policy.act(s), s, v);
    let residual = |v: &[f64]| (0..n).fold(0.0f64, |m, s| m.max((apply(v, s) - r[s]).abs()));

    let v = if n <= DIRECT_SOLVE_LIMIT {
        let mut a = DMatrix::<f64>::identity(n, n);
        for s in 0..n {
            for &(next, p) in mdp.row(policy.act(s), s) {
                a[(s, next)] -= gamma * p;
            }
        }
        let lu = a.lu();
        let mut x = lu
            .solve(&DVector::from_vec(r.clone()))
            .ok_or_else(|| Error::Numerical("singular policy evaluation system".into()))?;
        // One round of iterative refinement.
        let res: Vec<f64> = (0..n).map(|s| r[s] - apply(x.as_slice(), s)).collect();
        if let Some(dx) = lu.solve(&DVector::from_vec(res)) {
            x += dx;
        }
        x.as_slice().to_vec()
    } else {
        let mut v = vec![0.0; n];
        let mut next = vec![0.0; n];
        loop {
            for s in 0..n {
                next[s] = r[s] + gamma * mdp.expect(policy.act(s), s, &v);
            }
            let d = sup_distance(&v, &next);
            std::mem::swap(&mut v, &mut next);
            if d < 1e-10 * (1.0 - gamma) {
                break;
            }
        }
        v
    };
    let scale = 1.0 + r.iter().fold(0.0f64, |m, x| m.max(x.abs())) / (1.0 - gamma).max(1e-12);
    let res = residual(&v);
    if !(res < 1e-10 * scale) {
        return Err(Error::Numerical(format!("policy evaluation residual {res:e}")));
    }
    Ok(ValueFunction(v))
}
