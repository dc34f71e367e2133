//! Named tabular instances used as oracle test beds.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{CostSpec, StateCost, TabularMdp};
use crate::rng::SeedTree;

/// Names accepted by [`make_instance`] besides the parameterised
/// `chain(n)` and `random(seed, n, m)`.
pub const FIXED_SUITE: [&str; 5] = ["chain2", "drift3", "machine4", "ladder5", "random3"];

/// An `n`-state chain: the null action stays put, the single action moves
/// one state right, and only the last state pays 1 per step. Costs 0.2,
/// γ = 0.9. `chain(2)` is the hand-solved instance with `v* = (8.8, 10)`.
pub fn chain(n: usize) -> Result<(TabularMdp, CostSpec)> {
    if n == 0 {
        return Err(Error::UnknownInstance("chain(0)".into()));
    }
    let stay: Vec<Vec<(usize, f64)>> = (0..n).map(|s| vec![(s, 1.0)]).collect();
    let right: Vec<Vec<(usize, f64)>> = (0..n).map(|s| vec![((s + 1).min(n - 1), 1.0)]).collect();
    let pay: Vec<f64> = (0..n).map(|s| if s + 1 == n { 1.0 } else { 0.0 }).collect();
    let rows = stay.into_iter().chain(right).collect();
    let reward = pay.iter().chain(pay.iter()).copied().collect();
    let mdp = TabularMdp::from_rows(n, 1, 0.9, rows, reward)?.validated()?;
    Ok((mdp, CostSpec::Fixed { kappa: 0.2 }))
}

pub fn chain2() -> (TabularMdp, CostSpec) {
    chain(2).expect("chain2 is well formed")
}

/// Seeded random MDP: rewards uniform in [-1, 1], each row supported on
/// `min(n, 8)` distinct successors with random weights.
pub fn random_mdp(seed: u64, n: usize, m: usize, gamma: f64) -> TabularMdp {
    let mut rng = SeedTree::new(seed).stream("random_mdp");
    let support = n.min(8);
    let mut rows = Vec::with_capacity((m + 1) * n);
    for _ in 0..(m + 1) * n {
        let mut next: Vec<usize> = sample(&mut rng, n, support).into_vec();
        next.sort_unstable();
        let w: Vec<f64> = next.iter().map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        rows.push(next.into_iter().zip(w.into_iter().map(|x| x / total)).collect());
    }
    let reward = (0..(m + 1) * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    TabularMdp::from_rows(n, m, gamma, rows, reward).expect("shapes are consistent")
}

/// A random cost of one of the three minimally bounded forms.
pub fn random_cost(seed: u64, m: usize) -> CostSpec {
    let mut rng = SeedTree::new(seed).stream("random_cost");
    let kappa = rng.random_range(0.05..1.0);
    match rng.random_range(0..3) {
        0 => CostSpec::Fixed { kappa },
        1 => CostSpec::FixedPlusProportional {
            kappa,
            lambda: rng.random_range(0.0..0.5),
        },
        _ => {
            let table: Vec<f64> = (0..64 * (m + 1)).map(|_| rng.random_range(0.0..0.5)).collect();
            CostSpec::FixedPlusStateDependent {
                kappa,
                extra: StateCost::new("random table", move |s, a| table[(s % 64) * (m + 1) + a.branch()]),
            }
        }
    }
}

fn dense(gamma: f64, transition: &[Vec<Vec<f64>>], reward: &[Vec<f64>]) -> TabularMdp {
    TabularMdp::from_dense(gamma, transition, reward)
        .and_then(TabularMdp::validated)
        .expect("built-in instance is well formed")
}

/// Wear process: the null action degrades 0 → 1 → 2 with probability 0.3
/// per step; the repair action returns to state 0.
fn drift3() -> (TabularMdp, CostSpec) {
    let null = vec![vec![0.7, 0.3, 0.0], vec![0.0, 0.7, 0.3], vec![0.0, 0.0, 1.0]];
    let repair = vec![vec![1.0, 0.0, 0.0]; 3];
    let r = vec![1.0, 0.5, 0.0];
    (
        dense(0.9, &[null, repair], &[r.clone(), r]),
        CostSpec::Fixed { kappa: 0.5 },
    )
}

/// Machine replacement with a cheap one-step maintenance and an expensive
/// full replacement, costed `0.3 + 0.2·magnitude`.
fn machine4() -> (TabularMdp, CostSpec) {
    let mut null = vec![vec![0.0; 4]; 4];
    let mut maintain = vec![vec![0.0; 4]; 4];
    for s in 0..4 {
        if s < 3 {
            null[s][s] = 0.6;
            null[s][s + 1] = 0.4;
        } else {
            null[s][s] = 1.0;
        }
        maintain[s][s.saturating_sub(1)] = 1.0;
    }
    let replace = vec![vec![1.0, 0.0, 0.0, 0.0]; 4];
    let r = vec![1.0, 0.8, 0.4, 0.0];
    let mdp = dense(0.9, &[null, maintain, replace], &[r.clone(), r.clone(), r])
        .with_magnitudes(vec![1.0, 2.0])
        .expect("two actions");
    (
        mdp,
        CostSpec::FixedPlusProportional {
            kappa: 0.3,
            lambda: 0.2,
        },
    )
}

/// Deterministic ladder: waiting slides one rung down, acting climbs one.
/// Only the top rung pays.
fn ladder5() -> (TabularMdp, CostSpec) {
    let mut down = vec![vec![0.0; 5]; 5];
    let mut up = vec![vec![0.0; 5]; 5];
    for s in 0..5 {
        down[s][s.saturating_sub(1)] = 1.0;
        up[s][(s + 1).min(4)] = 1.0;
    }
    let r = vec![0.0, 0.0, 0.0, 0.0, 1.0];
    (dense(0.9, &[down, up], &[r.clone(), r]), CostSpec::Fixed { kappa: 0.3 })
}

fn random3() -> (TabularMdp, CostSpec) {
    (random_mdp(17, 3, 2, 0.9), CostSpec::Fixed { kappa: 0.3 })
}

fn parse_args(name: &str, prefix: &str) -> Option<Vec<u64>> {
    let inner = name.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?;
    inner.split(',').map(|x| x.trim().parse().ok()).collect()
}

/// Resolve a registered instance name: `chain2`, `drift3`, `machine4`,
/// `ladder5`, `random3`, `chain(n)` or `random(seed, n, m)`.
///
/// `random(...)` instances use γ = 0.9 and a fixed cost of 0.3.
pub fn make_instance(name: &str) -> Result<(TabularMdp, CostSpec)> {
    match name {
        "chain2" => return Ok(chain2()),
        "drift3" => return Ok(drift3()),
        "machine4" => return Ok(machine4()),
        "ladder5" => return Ok(ladder5()),
        "random3" => return Ok(random3()),
        _ => {}
    }
    if let Some(args) = parse_args(name, "chain") {
        if let [n] = args[..] {
            return chain(n as usize);
        }
    }
    if let Some(args) = parse_args(name, "random") {
        if let [seed, n, m] = args[..] {
            if n >= 1 {
                return Ok((
                    random_mdp(seed, n as usize, m as usize, 0.9),
                    CostSpec::Fixed { kappa: 0.3 },
                ));
            }
        }
    }
    Err(Error::UnknownInstance(name.to_string()))
}
