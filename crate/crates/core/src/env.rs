//! Episodic environments with discrete observations.

use std::sync::Arc;

use rand::Rng;

use crate::error::{check_index, Result};
use crate::mdp::{sample_transition, Action, CostSpec, TabularMdp, TransitionSample};
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvStep {
    pub sample: TransitionSample,
    /// The episode reached a terminal state.
    pub done: bool,
}

pub trait DiscreteEnv {
    fn n_states(&self) -> usize;

    /// Number of non-null actions.
    fn n_actions(&self) -> usize;

    fn gamma(&self) -> f64;

    fn reset(&mut self, rng: &mut StreamRng) -> usize;

    fn step(&mut self, action: Action, rng: &mut StreamRng) -> Result<EnvStep>;

    /// Cost of intervening with `a` from the current state.
    fn cost_of(&self, a: Action) -> f64;

    /// Whether an intervention may be executed from the current state.
    fn can_intervene(&self) -> bool {
        true
    }

    /// Upper bound on `|reward|` plus the largest cost; used by divergence
    /// checks.
    fn reward_bound(&self) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartDist {
    Fixed(usize),
    Uniform,
}

/// Simulates a [`TabularMdp`] episodically.
#[derive(Clone, Debug)]
pub struct MdpEnv {
    mdp: Arc<TabularMdp>,
    cost: CostSpec,
    start: StartDist,
    terminal: Vec<bool>,
    state: usize,
    bound: f64,
}

impl MdpEnv {
    pub fn new(mdp: Arc<TabularMdp>, cost: CostSpec) -> Self {
        let n = mdp.n_states();
        let bound = mdp.max_abs_reward() + mdp.max_cost(&cost);
        Self {
            mdp,
            cost,
            start: StartDist::Uniform,
            terminal: vec![false; n],
            state: 0,
            bound,
        }
    }

    pub fn with_start(mut self, start: StartDist) -> Result<Self> {
        if let StartDist::Fixed(s) = start {
            check_index("start state", s, self.mdp.n_states())?;
        }
        self.start = start;
        Ok(self)
    }

    /// States that end the episode when entered.
    pub fn with_terminal(mut self, states: &[usize]) -> Result<Self> {
        for &s in states {
            check_index("terminal state", s, self.mdp.n_states())?;
            self.terminal[s] = true;
        }
        Ok(self)
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn state(&self) -> usize {
        self.state
    }
}

impl DiscreteEnv for MdpEnv {
    fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    fn gamma(&self) -> f64 {
        self.mdp.gamma()
    }

    fn reset(&mut self, rng: &mut StreamRng) -> usize {
        self.state = match self.start {
            StartDist::Fixed(s) => s,
            StartDist::Uniform => rng.random_range(0..self.mdp.n_states()),
        };
        self.state
    }

    fn step(&mut self, action: Action, rng: &mut StreamRng) -> Result<EnvStep> {
        let sample = sample_transition(&self.mdp, &self.cost, self.state, action, rng)?;
        self.state = sample.next_state;
        Ok(EnvStep {
            sample,
            done: self.terminal[sample.next_state],
        })
    }

    fn cost_of(&self, a: Action) -> f64 {
        self.mdp.cost(&self.cost, self.state, a)
    }

    fn reward_bound(&self) -> f64 {
        self.bound
    }
}
