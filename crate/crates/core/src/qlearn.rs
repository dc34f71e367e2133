//! Online impulse-control Q-learning.
//!
//! The learner keeps two tables: `q_act[s][a]`, the value of intervening
//! with `a` at `s`, and `q_null[s]`, the value of letting the system run.
//! The state value is the larger of the two branches. A sampled transition
//! only reveals the branch that was executed, so each sample updates only
//! that branch; [`q_update_model_based`] updates both branches from the
//! known kernel and is used to validate against exact value iteration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::DiscreteEnv;
use crate::error::{Error, Result};
use crate::mdp::{Action, CostSpec, TabularMdp, TransitionSample};
use crate::rng::{SeedTree, StreamRng};
use crate::solver::{ImpulsePolicy, ValueFunction, TIE_EPSILON};

/// How exploratory steps pick a branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exploration {
    /// Uniform over `{null} ∪ actions`.
    Uniform,
    /// A fair coin for the intervene gate, then a uniform action if the
    /// gate opens: the switching policy and the action policy explore
    /// separately.
    #[default]
    Gated,
}

/// Step sizes and exploration. The step size for the `n`-th update of a
/// (state, branch) pair is `alpha0 / (1 + n)^omega`; with `omega` in
/// (0.5, 1] the sums satisfy Σα = ∞ and Σα² < ∞.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnSchedule {
    pub alpha0: f64,
    pub omega: f64,
    pub epsilon0: f64,
    pub epsilon_min: f64,
    /// Multiplicative per-episode decay of ε.
    pub epsilon_decay: f64,
    pub exploration: Exploration,
    /// Initial value for every table entry; zero when absent.
    pub optimistic_init: Option<f64>,
}

impl Default for LearnSchedule {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            omega: 0.7,
            epsilon0: 1.0,
            epsilon_min: 0.05,
            epsilon_decay: 0.999,
            exploration: Exploration::Gated,
            optimistic_init: None,
        }
    }
}

impl LearnSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSchedule(m));
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            return bad(format!("alpha0 = {} must lie in (0, 1]", self.alpha0));
        }
        if !(self.omega > 0.5 && self.omega <= 1.0) {
            return bad(format!("omega = {} must lie in (0.5, 1]", self.omega));
        }
        for (name, x) in [
            ("epsilon0", self.epsilon0),
            ("epsilon_min", self.epsilon_min),
            ("epsilon_decay", self.epsilon_decay),
        ] {
            if !(0.0..=1.0).contains(&x) {
                return bad(format!("{name} = {x} must lie in [0, 1]"));
            }
        }
        if let Some(q0) = self.optimistic_init {
            if !q0.is_finite() {
                return bad("optimistic_init must be finite".into());
            }
        }
        Ok(())
    }

    pub fn alpha(&self, prior_visits: u64) -> f64 {
        self.alpha0 / (1.0 + prior_visits as f64).powf(self.omega)
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        let decayed = self.epsilon0 * self.epsilon_decay.powi(episode.min(i32::MAX as usize) as i32);
        decayed.max(self.epsilon_min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    q_act: Vec<f64>,
    q_null: Vec<f64>,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, init: f64) -> Self {
        Self {
            n_states,
            n_actions,
            q_act: vec![init; n_states * n_actions],
            q_null: vec![init; n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn q_null(&self, s: usize) -> f64 {
        self.q_null[s]
    }

    pub fn q_act(&self, s: usize, a: usize) -> f64 {
        self.q_act[s * self.n_actions + a]
    }

    pub fn act_row(&self, s: usize) -> &[f64] {
        &self.q_act[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn get(&self, s: usize, a: Action) -> f64 {
        match a.act_index() {
            None => self.q_null[s],
            Some(i) => self.q_act(s, i),
        }
    }

    fn slot(&mut self, s: usize, a: Action) -> &mut f64 {
        match a.act_index() {
            None => &mut self.q_null[s],
            Some(i) => &mut self.q_act[s * self.n_actions + i],
        }
    }

    /// `v(s) = max(q_null[s], max_a q_act[s][a])`.
    pub fn value(&self, s: usize) -> f64 {
        self.act_row(s).iter().copied().fold(self.q_null[s], f64::max)
    }

    pub fn values(&self) -> ValueFunction {
        ValueFunction((0..self.n_states).map(|s| self.value(s)).collect())
    }

    /// Obstacle-condition choice at `s`; null unless some intervention is
    /// better by more than [`TIE_EPSILON`].
    pub fn greedy(&self, s: usize) -> Action {
        greedy_branch(self.q_null[s], self.act_row(s).iter().copied())
    }

    pub fn greedy_policy(&self) -> ImpulsePolicy {
        policy_from(
            self.n_states,
            |s| self.greedy(s),
            |s| best_index(self.act_row(s).iter().copied()),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.q_act.iter().chain(&self.q_null).fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn apply(&mut self, delta: &QDelta) {
        self.q_null[delta.state] = delta.q_null;
        let m = self.n_actions;
        self.q_act[delta.state * m..(delta.state + 1) * m].copy_from_slice(&delta.q_act);
    }
}

fn best_index(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, q) in values.enumerate() {
        if q > best.0 {
            best = (q, i);
        }
    }
    best.1
}

pub(crate) fn greedy_branch(q_null: f64, act: impl Iterator<Item = f64>) -> Action {
    let mut best: Option<(f64, usize)> = None;
    for (i, q) in act.enumerate() {
        if best.is_none_or(|(b, _)| q > b) {
            best = Some((q, i));
        }
    }
    match best {
        Some((q, i)) if q > q_null + TIE_EPSILON => Action::intervene(i),
        _ => Action::NULL,
    }
}

pub(crate) fn policy_from(n: usize, greedy: impl Fn(usize) -> Action, best: impl Fn(usize) -> usize) -> ImpulsePolicy {
    let mut p = ImpulsePolicy::never(n);
    for s in 0..n {
        let a = greedy(s);
        p.intervene[s] = !a.is_null();
        p.action[s] = a.act_index().unwrap_or_else(|| best(s));
    }
    p
}

/// New branch values at one state after a model-based update.
#[derive(Clone, Debug, PartialEq)]
pub struct QDelta {
    pub state: usize,
    pub q_null: f64,
    pub q_act: Vec<f64>,
}

/// Both branches at `s` move toward their expected targets under the known
/// kernel, with `v(s') = max` of the current branches.
pub fn q_update_model_based(q: &QTable, mdp: &TabularMdp, cost: &CostSpec, s: usize, alpha: f64) -> QDelta {
    let v = q.values();
    let gamma = mdp.gamma();
    let null_target = mdp.reward(Action::NULL, s) + gamma * mdp.expect(Action::NULL, s, &v.0);
    let q_act = (0..q.n_actions)
        .map(|i| {
            let a = Action::intervene(i);
            let target = mdp.reward(a, s) - mdp.cost(cost, s, a) + gamma * mdp.expect(a, s, &v.0);
            let old = q.q_act(s, i);
            old + alpha * (target - old)
        })
        .collect();
    let old = q.q_null[s];
    QDelta {
        state: s,
        q_null: old + alpha * (null_target - old),
        q_act,
    }
}

/// A synchronous model-based sweep: every state is updated from the same
/// table. With `alpha = 1` this is one step of value iteration.
pub fn model_based_sweep(q: &QTable, mdp: &TabularMdp, cost: &CostSpec, alpha: f64) -> QTable {
    let mut next = q.clone();
    for s in 0..q.n_states {
        next.apply(&q_update_model_based(q, mdp, cost, s, alpha));
    }
    next
}

/// Update the executed branch only. Returns the TD error.
pub fn q_update_sampled(q: &mut QTable, sample: &TransitionSample, alpha: f64, gamma: f64) -> f64 {
    let target = sample.net() + gamma * q.value(sample.next_state);
    let slot = q.slot(sample.state, sample.action);
    let td = target - *slot;
    *slot += alpha * td;
    td
}

/// ε-greedy over branches: greedy with probability `1 - ε`, otherwise
/// uniform over `{null} ∪ actions`.
pub fn behavior_policy(q: &QTable, s: usize, epsilon: f64, rng: &mut StreamRng) -> Action {
    explore(q.greedy(s), q.n_actions, epsilon, Exploration::Uniform, rng)
}

pub(crate) fn explore(
    greedy: Action,
    n_actions: usize,
    epsilon: f64,
    mode: Exploration,
    rng: &mut StreamRng,
) -> Action {
    let u: f64 = rng.random();
    if u >= epsilon {
        return greedy;
    }
    match mode {
        Exploration::Uniform => Action::from_branch(rng.random_range(0..=n_actions)),
        Exploration::Gated => {
            if n_actions == 0 || rng.random_bool(0.5) {
                Action::NULL
            } else {
                Action::intervene(rng.random_range(0..n_actions))
            }
        }
    }
}

/// Something that learns branch values from transitions.
pub trait Learner {
    fn greedy(&self, s: usize) -> Action;

    fn state_value(&self, s: usize) -> f64;

    fn observe(&mut self, sample: &TransitionSample, gamma: f64) -> Result<()>;

    /// Largest absolute value currently stored; tracked for divergence.
    fn magnitude(&self) -> f64;
}

/// Tabular impulse learner with per-(state, branch) visit-count step sizes.
#[derive(Clone, Debug)]
pub struct ImpulseLearner {
    pub q: QTable,
    visits: Vec<u64>,
    schedule: LearnSchedule,
}

impl ImpulseLearner {
    pub fn new(n_states: usize, n_actions: usize, schedule: LearnSchedule) -> Self {
        Self {
            q: QTable::new(n_states, n_actions, schedule.optimistic_init.unwrap_or(0.0)),
            visits: vec![0; n_states * (n_actions + 1)],
            schedule,
        }
    }
}

impl Learner for ImpulseLearner {
    fn greedy(&self, s: usize) -> Action {
        self.q.greedy(s)
    }

    fn state_value(&self, s: usize) -> f64 {
        self.q.value(s)
    }

    fn observe(&mut self, sample: &TransitionSample, gamma: f64) -> Result<()> {
        let k = sample.state * (self.q.n_actions + 1) + sample.action.branch();
        let alpha = self.schedule.alpha(self.visits[k]);
        self.visits[k] += 1;
        q_update_sampled(&mut self.q, sample, alpha, gamma);
        Ok(())
    }

    fn magnitude(&self) -> f64 {
        self.q.max_abs()
    }
}

/// One Q table over all `n_actions + 1` branches; the standard approach of
/// adding a zero action to the action set.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatQ {
    n_states: usize,
    n_branches: usize,
    q: Vec<f64>,
}

impl FlatQ {
    pub fn new(n_states: usize, n_actions: usize, init: f64) -> Self {
        Self {
            n_states,
            n_branches: n_actions + 1,
            q: vec![init; n_states * (n_actions + 1)],
        }
    }

    pub fn get(&self, s: usize, a: Action) -> f64 {
        self.q[s * self.n_branches + a.branch()]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_branches..(s + 1) * self.n_branches]
    }

    pub fn value(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn values(&self) -> ValueFunction {
        ValueFunction((0..self.n_states).map(|s| self.value(s)).collect())
    }

    /// Argmax with lowest-index tie-breaking (null is index 0).
    pub fn greedy(&self, s: usize) -> Action {
        Action::from_branch(best_index(self.row(s).iter().copied()))
    }

    pub fn greedy_policy(&self) -> ImpulsePolicy {
        policy_from(
            self.n_states,
            |s| self.greedy(s),
            |s| best_index(self.row(s)[1..].iter().copied()),
        )
    }
}

#[derive(Clone, Debug)]
pub struct FlatLearner {
    pub q: FlatQ,
    visits: Vec<u64>,
    schedule: LearnSchedule,
}

impl FlatLearner {
    pub fn new(n_states: usize, n_actions: usize, schedule: LearnSchedule) -> Self {
        Self {
            q: FlatQ::new(n_states, n_actions, schedule.optimistic_init.unwrap_or(0.0)),
            visits: vec![0; n_states * (n_actions + 1)],
            schedule,
        }
    }
}

impl Learner for FlatLearner {
    fn greedy(&self, s: usize) -> Action {
        self.q.greedy(s)
    }

    fn state_value(&self, s: usize) -> f64 {
        self.q.value(s)
    }

    fn observe(&mut self, sample: &TransitionSample, gamma: f64) -> Result<()> {
        let k = sample.state * self.q.n_branches + sample.action.branch();
        let alpha = self.schedule.alpha(self.visits[k]);
        self.visits[k] += 1;
        let target = sample.net() + gamma * self.q.value(sample.next_state);
        self.q.q[k] += alpha * (target - self.q.q[k]);
        Ok(())
    }

    fn magnitude(&self) -> f64 {
        self.q.q.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Episode budget for a training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunSpec {
    pub episodes: usize,
    /// Step limit per episode.
    pub horizon: usize,
    /// Stop after this many environment steps in total.
    pub max_steps: Option<u64>,
}

impl RunSpec {
    pub fn episodes(episodes: usize, horizon: usize) -> Self {
        Self {
            episodes,
            horizon,
            max_steps: None,
        }
    }

    /// Horizon-length episodes until exactly `steps` steps have been taken.
    pub fn steps(steps: u64, horizon: usize) -> Self {
        let h = horizon.max(1) as u64;
        Self {
            episodes: steps.div_ceil(h) as usize,
            horizon,
            max_steps: Some(steps),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Undiscounted sum of `reward - cost`.
    pub ret: f64,
    pub interventions: u32,
    pub epsilon: f64,
    pub sup_norm_to_oracle: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearnerDiagnostics {
    pub episodes: Vec<EpisodeRecord>,
    pub state_visits: Vec<u64>,
    pub total_interventions: u64,
    pub steps: u64,
    /// Largest table magnitude seen at any episode end.
    pub max_abs_value: f64,
}

impl LearnerDiagnostics {
    /// Mean return and interventions over the last `k` episodes.
    pub fn tail_means(&self, k: usize) -> (f64, f64) {
        let tail = &self.episodes[self.episodes.len().saturating_sub(k)..];
        if tail.is_empty() {
            return (0.0, 0.0);
        }
        let n = tail.len() as f64;
        (
            tail.iter().map(|e| e.ret).sum::<f64>() / n,
            tail.iter().map(|e| e.interventions as f64).sum::<f64>() / n,
        )
    }
}

/// The episodic loop shared by every learner: pick a branch (greedy or
/// exploratory), step the environment, learn from the sample.
pub fn drive<E: DiscreteEnv, L: Learner>(
    env: &mut E,
    learner: &mut L,
    schedule: &LearnSchedule,
    exploration: Exploration,
    run: &RunSpec,
    seeds: SeedTree,
    oracle: Option<&ValueFunction>,
) -> Result<LearnerDiagnostics> {
    schedule.validate()?;
    let mut env_rng = seeds.stream("env");
    let mut policy_rng = seeds.stream("policy");
    let n = env.n_states();
    let m = env.n_actions();
    let gamma = env.gamma();
    let mut diag = LearnerDiagnostics {
        state_visits: vec![0; n],
        ..Default::default()
    };
    'episodes: for episode in 0..run.episodes {
        if run.max_steps.is_some_and(|cap| diag.steps >= cap) {
            break;
        }
        let epsilon = schedule.epsilon(episode);
        let mut s = env.reset(&mut env_rng);
        let mut ret = 0.0;
        let mut interventions = 0u32;
        for _ in 0..run.horizon {
            if run.max_steps.is_some_and(|cap| diag.steps >= cap) {
                break;
            }
            let mut a = explore(learner.greedy(s), m, epsilon, exploration, &mut policy_rng);
            if !env.can_intervene() {
                a = Action::NULL;
            }
            let step = env.step(a, &mut env_rng).map_err(|e| Error::Episode {
                episode,
                source: Box::new(e),
            })?;
            learner.observe(&step.sample, gamma)?;
            diag.state_visits[s] += 1;
            diag.steps += 1;
            ret += step.sample.net();
            if step.sample.intervened {
                interventions += 1;
            }
            s = step.sample.next_state;
            if step.done {
                break;
            }
        }
        diag.total_interventions += interventions as u64;
        diag.max_abs_value = diag.max_abs_value.max(learner.magnitude());
        let sup_norm_to_oracle =
            oracle.map(|v| (0..n).fold(0.0f64, |acc, s| acc.max((learner.state_value(s) - v.0[s]).abs())));
        diag.episodes.push(EpisodeRecord {
            episode,
            ret,
            interventions,
            epsilon,
            sup_norm_to_oracle,
        });
        if !learner.magnitude().is_finite() {
            break 'episodes;
        }
    }
    Ok(diag)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub q: QTable,
    pub policy: ImpulsePolicy,
    pub diagnostics: LearnerDiagnostics,
}

/// Train the two-branch impulse learner. Fully determined by `seeds`.
pub fn train<E: DiscreteEnv>(
    env: &mut E,
    schedule: &LearnSchedule,
    run: &RunSpec,
    seeds: SeedTree,
    oracle: Option<&ValueFunction>,
) -> Result<TrainOutcome> {
    let mut learner = ImpulseLearner::new(env.n_states(), env.n_actions(), schedule.clone());
    let diagnostics = drive(env, &mut learner, schedule, schedule.exploration, run, seeds, oracle)?;
    Ok(TrainOutcome {
        policy: learner.q.greedy_policy(),
        q: learner.q,
        diagnostics,
    })
}

#[derive(Clone, Debug)]
pub struct FlatOutcome {
    pub q: FlatQ,
    pub policy: ImpulsePolicy,
    pub diagnostics: LearnerDiagnostics,
}

/// Standard one-table Q-learning over `{null} ∪ actions` on `reward - cost`,
/// with uniform ε-exploration over all branches.
pub fn train_flat_baseline<E: DiscreteEnv>(
    env: &mut E,
    schedule: &LearnSchedule,
    run: &RunSpec,
    seeds: SeedTree,
    oracle: Option<&ValueFunction>,
) -> Result<FlatOutcome> {
    let mut learner = FlatLearner::new(env.n_states(), env.n_actions(), schedule.clone());
    let diagnostics = drive(env, &mut learner, schedule, Exploration::Uniform, run, seeds, oracle)?;
    Ok(FlatOutcome {
        policy: learner.q.greedy_policy(),
        q: learner.q,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{MdpEnv, StartDist};
    use crate::envs::instances::{chain2, random_cost, random_mdp};
    use crate::solver::{bellman_apply, value_iteration};
    use std::sync::Arc;

    fn loop_mdp(r: f64, gamma: f64) -> TabularMdp {
        TabularMdp::from_dense(gamma, &[vec![vec![1.0]], vec![vec![1.0]]], &[vec![r], vec![0.0]]).unwrap()
    }

    #[test]
    fn schedule_validation() {
        assert!(LearnSchedule::default().validate().is_ok());
        assert!(LearnSchedule {
            omega: 0.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LearnSchedule {
            alpha0: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LearnSchedule {
            epsilon_decay: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        let s = LearnSchedule::default();
        assert_eq!(s.alpha(0), 1.0);
        assert!(s.alpha(10) < s.alpha(9));
        assert_eq!(s.epsilon(0), 1.0);
        assert_eq!(s.epsilon(100_000), 0.05);
    }

    #[test]
    fn model_based_step_without_discount() {
        let mdp = random_mdp(1, 4, 2, 0.0);
        let cost = CostSpec::FixedPlusProportional {
            kappa: 0.2,
            lambda: 0.1,
        };
        let q = QTable::new(4, 2, 0.0);
        for s in 0..4 {
            let d = q_update_model_based(&q, &mdp, &cost, s, 1.0);
            for a in 0..2 {
                let act = Action::intervene(a);
                assert_eq!(d.q_act[a], mdp.reward(act, s) - mdp.cost(&cost, s, act));
            }
        }
    }

    #[test]
    fn model_based_sweeps_track_value_iteration() {
        for seed in 0..5 {
            let mdp = random_mdp(seed, 6, 3, 0.9);
            let cost = random_cost(seed, 3);
            let mut q = QTable::new(6, 3, 0.0);
            let mut v = ValueFunction::zeros(6);
            for _ in 0..60 {
                q = model_based_sweep(&q, &mdp, &cost, 1.0);
                v = bellman_apply(&mdp, &cost, &v);
                assert!(q.values().sup_distance(&v) < 1e-10);
            }
        }
    }

    #[test]
    fn model_based_converges_on_chain2() {
        let (mdp, cost) = chain2();
        let mut q = QTable::new(2, 1, 0.0);
        for k in 0..5000u64 {
            q = model_based_sweep(&q, &mdp, &cost, 1.0 / (1.0 + k as f64).powf(0.51));
        }
        let v = q.values();
        assert!((v.0[0] - 8.8).abs() < 1e-3 && (v.0[1] - 10.0).abs() < 1e-3, "{v:?}");
    }

    #[test]
    fn sampled_loop_converges_to_geometric_sum() {
        let mdp = loop_mdp(1.0, 0.5);
        let mut env = MdpEnv::new(Arc::new(mdp), CostSpec::Fixed { kappa: 1.0 });
        let mut rng = SeedTree::new(0).stream("env");
        let sched = LearnSchedule::default();
        let mut q = QTable::new(1, 1, 0.0);
        env.reset(&mut rng);
        for n in 0..10_000u64 {
            let step = env.step(Action::NULL, &mut rng).unwrap();
            q_update_sampled(&mut q, &step.sample, sched.alpha(n), 0.5);
        }
        assert!((q.q_null(0) - 2.0).abs() < 1e-3, "{}", q.q_null(0));
    }

    #[test]
    fn sampled_update_touches_only_executed_branch() {
        let mut q = QTable::new(2, 2, 0.0);
        let s = TransitionSample {
            state: 0,
            action: Action::intervene(1),
            reward: 1.0,
            cost: 0.25,
            next_state: 1,
            intervened: true,
        };
        q_update_sampled(&mut q, &s, 0.5, 0.9);
        assert_eq!(q.q_act(0, 1), 0.375);
        assert_eq!((q.q_null(0), q.q_act(0, 0)), (0.0, 0.0));
    }

    #[test]
    fn greedy_prefers_null_on_ties_and_very_negative_actions() {
        let mut q = QTable::new(1, 3, -1e9);
        q.q_null[0] = 0.0;
        let mut rng = SeedTree::new(0).stream("p");
        assert_eq!(behavior_policy(&q, 0, 0.0, &mut rng), Action::NULL);
        let mut tie = QTable::new(1, 2, 1.5);
        tie.q_act[1] = 1.5;
        assert_eq!(tie.greedy(0), Action::NULL);
    }

    #[test]
    fn uniform_exploration_frequencies() {
        let q = QTable::new(1, 3, 0.0);
        let mut rng = SeedTree::new(3).stream("p");
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[behavior_policy(&q, 0, 1.0, &mut rng).branch()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn gated_exploration_opens_gate_half_the_time() {
        let mut rng = SeedTree::new(4).stream("p");
        let n = 100_000;
        let null = (0..n)
            .filter(|_| explore(Action::NULL, 3, 1.0, Exploration::Gated, &mut rng).is_null())
            .count();
        assert!((null as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn zero_episodes_returns_initial_table() {
        let (mdp, cost) = chain2();
        let mut env = MdpEnv::new(Arc::new(mdp), cost);
        let out = train(
            &mut env,
            &LearnSchedule::default(),
            &RunSpec::episodes(0, 10),
            SeedTree::new(1),
            None,
        )
        .unwrap();
        assert_eq!(out.q, QTable::new(2, 1, 0.0));
        assert!(out.policy.intervention_set().is_empty());
        assert!(out.diagnostics.episodes.is_empty());
    }

    #[test]
    fn prohibitive_cost_learns_never_intervene() {
        let mdp = random_mdp(21, 4, 2, 0.8);
        let kappa = 2.0 * mdp.max_abs_reward() / (1.0 - mdp.gamma()) * 1.05;
        let mut env = MdpEnv::new(Arc::new(mdp), CostSpec::Fixed { kappa });
        let out = train(
            &mut env,
            &LearnSchedule::default(),
            &RunSpec::episodes(2000, 50),
            SeedTree::new(5),
            None,
        )
        .unwrap();
        assert!(out.policy.intervention_set().is_empty());
    }

    #[test]
    fn flat_single_state_loop() {
        let mut env = MdpEnv::new(Arc::new(loop_mdp(1.0, 0.5)), CostSpec::Fixed { kappa: 5.0 });
        let out = train_flat_baseline(
            &mut env,
            &LearnSchedule::default(),
            &RunSpec::episodes(200, 100),
            SeedTree::new(2),
            None,
        )
        .unwrap();
        assert!((out.q.get(0, Action::NULL) - 2.0).abs() < 1e-3);
    }

    #[test]
    fn chain2_learns_oracle_policy() {
        let (mdp, cost) = chain2();
        let oracle = value_iteration(&mdp, &cost, 1e-12, 10_000).unwrap().value;
        let mut env = MdpEnv::new(Arc::new(mdp), cost).with_start(StartDist::Uniform).unwrap();
        let out = train(
            &mut env,
            &LearnSchedule::default(),
            &RunSpec::episodes(2000, 100),
            SeedTree::new(11),
            Some(&oracle),
        )
        .unwrap();
        assert_eq!(out.policy.intervene, vec![true, false]);
        assert!(out.diagnostics.episodes.last().unwrap().sup_norm_to_oracle.unwrap() < 0.05);
    }

    #[test]
    fn max_steps_caps_the_run() {
        let (mdp, cost) = chain2();
        let mut env = MdpEnv::new(Arc::new(mdp), cost);
        let out = train(
            &mut env,
            &LearnSchedule::default(),
            &RunSpec::steps(1234, 100),
            SeedTree::new(1),
            None,
        )
        .unwrap();
        assert_eq!(out.diagnostics.steps, 1234);
        assert_eq!(out.diagnostics.episodes.len(), 13);
    }
}
