//! Reinforcement learning with costly interventions.
//!
//! An agent chooses at every step between letting the system evolve (the
//! null branch) and paying a cost to apply one of finitely many actions.
//! The crate provides exact dynamic programming for such problems, the
//! two-branch Q-learner, linear function approximation, budget-constrained
//! variants through state augmentation and a few desk-scale environments.

// `!(x > 0.0)` style checks are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod env;
pub mod envs;
pub mod error;
pub mod fa;
pub mod mdp;
pub mod mdp_file;
pub mod qlearn;
pub mod rng;
pub mod solver;

pub use env::{DiscreteEnv, EnvStep, MdpEnv, StartDist};
pub use error::{Error, Result};
pub use mdp::{
    effective_reward, sample_transition, Action, CostConfig, CostForm, CostSpec, StateCost, TabularMdp,
    TransitionSample,
};
pub use qlearn::{train, train_flat_baseline, Exploration, LearnSchedule, LearnerDiagnostics, QTable, RunSpec};
pub use rng::{SeedTree, StreamRng};
pub use solver::{evaluate_policy, extract_policy, value_iteration, ImpulsePolicy, ValueFunction};
