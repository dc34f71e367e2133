//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use impulse_core::envs::instances::{random_cost, random_mdp};
use impulse_core::{CostSpec, MdpEnv, StartDist, TabularMdp};

/// Seeded random MDP with γ = 0.95 and a random cost.
pub fn instance(n: usize, m: usize) -> (TabularMdp, CostSpec) {
    (random_mdp(n as u64, n, m, 0.95), random_cost(n as u64, m))
}

pub fn env(n: usize, m: usize) -> MdpEnv {
    let (mdp, cost) = instance(n, m);
    MdpEnv::new(Arc::new(mdp), cost)
        .with_start(StartDist::Uniform)
        .expect("uniform start")
}
