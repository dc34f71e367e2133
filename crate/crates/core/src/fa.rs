//! Linear function approximation over block features.
//!
//! Every feature map here has the form `φ(s, b) = e_b ⊗ ψ(s)`: a state
//! feature vector `ψ(s)` of length `k` placed in the block of branch `b`,
//! so the weight vector has `p = (n_actions + 1) · k` entries and the null
//! branch and each intervention get their own linear estimate.
//!
//! Pair distributions `d` used by the exact routines are indexed
//! `[s * (n_actions + 1) + branch]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::DiscreteEnv;
use crate::error::{check_index, Error, Result};
use crate::mdp::{Action, CostSpec, TabularMdp, TransitionSample};
use crate::qlearn::{drive, greedy_branch, policy_from, LearnSchedule, Learner, LearnerDiagnostics, RunSpec};
use crate::rng::SeedTree;
use crate::solver::{branch_values, value_iteration, ImpulsePolicy, ValueFunction};

/// Smallest admissible eigenvalue of the weighted Gram matrix.
pub const GRAM_EIGEN_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    n_states: usize,
    n_branches: usize,
    k: usize,
    psi: Vec<f64>,
    labels: Vec<String>,
}

impl FeatureMap {
    /// Block features from explicit state feature rows.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<String>, n_actions: usize) -> Result<Self> {
        let k = labels.len();
        if k == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        let mut psi = Vec::with_capacity(rows.len() * k);
        for row in rows {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical("non-finite feature value".into()));
            }
            psi.extend_from_slice(row);
        }
        Ok(Self {
            n_states: rows.len(),
            n_branches: n_actions + 1,
            k,
            psi,
            labels,
        })
    }

    pub fn one_hot(n_states: usize, n_actions: usize) -> Self {
        let rows: Vec<Vec<f64>> = (0..n_states)
            .map(|s| (0..n_states).map(|j| if j == s { 1.0 } else { 0.0 }).collect())
            .collect();
        let labels = (0..n_states).map(|s| format!("s{s}")).collect();
        Self::from_rows(&rows, labels, n_actions).expect("one-hot rows are well formed")
    }

    /// Indicator of the group containing each state.
    pub fn aggregation(groups: &[usize], n_actions: usize) -> Result<Self> {
        let k = groups.iter().max().map_or(0, |g| g + 1);
        let rows: Vec<Vec<f64>> = groups
            .iter()
            .map(|&g| (0..k).map(|j| if j == g { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::from_rows(&rows, (0..k).map(|g| format!("group{g}")).collect(), n_actions)
    }

    /// A constant plus Gaussian bumps `exp(-|x - c|² / (2 w²))` around each
    /// center, with state coordinates rescaled to the unit cube.
    pub fn radial_bumps(coords: &[Vec<f64>], centers: &[Vec<f64>], width: f64, n_actions: usize) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::Numerical(format!("bump width {width} must be positive")));
        }
        let x = normalize(coords)?;
        let mut labels = vec!["1".to_string()];
        labels.extend((0..centers.len()).map(|i| format!("bump{i}")));
        let rows: Vec<Vec<f64>> = x
            .iter()
            .map(|p| {
                let mut row = vec![1.0];
                for c in centers {
                    let d2: f64 = p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    row.push((-d2 / (2.0 * width * width)).exp());
                }
                row
            })
            .collect();
        Self::from_rows(&rows, labels, n_actions)
    }

    /// Monomials of degree at most `degree` (1 or 2) in the rescaled
    /// coordinates.
    pub fn polynomial(coords: &[Vec<f64>], degree: u32, n_actions: usize) -> Result<Self> {
        if !(1..=2).contains(&degree) {
            return Err(Error::Numerical(format!("polynomial degree {degree} must be 1 or 2")));
        }
        let x = normalize(coords)?;
        let dim = x.first().map_or(0, Vec::len);
        let mut labels = vec!["1".to_string()];
        labels.extend((0..dim).map(|i| format!("x{i}")));
        if degree == 2 {
            for i in 0..dim {
                for j in i..dim {
                    labels.push(format!("x{i}*x{j}"));
                }
            }
        }
        let rows: Vec<Vec<f64>> = x
            .iter()
            .map(|p| {
                let mut row = vec![1.0];
                row.extend_from_slice(p);
                if degree == 2 {
                    for i in 0..dim {
                        for j in i..dim {
                            row.push(p[i] * p[j]);
                        }
                    }
                }
                row
            })
            .collect();
        Self::from_rows(&rows, labels, n_actions)
    }

    pub fn dimension(&self) -> usize {
        self.n_branches * self.k
    }

    pub fn state_dimension(&self) -> usize {
        self.k
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_branches - 1
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dimension());
        for b in 0..self.n_branches {
            let a = Action::from_branch(b);
            out.extend(self.labels.iter().map(|l| format!("{a}:{l}")));
        }
        out
    }

    pub fn psi(&self, s: usize) -> &[f64] {
        &self.psi[s * self.k..(s + 1) * self.k]
    }

    /// The full feature vector `φ(s, a)`.
    pub fn basis(&self, s: usize, a: Action) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension()];
        let b = a.branch();
        v[b * self.k..(b + 1) * self.k].copy_from_slice(self.psi(s));
        v
    }

    fn check(&self, s: usize, a: Action) -> Result<()> {
        check_index("state", s, self.n_states)?;
        check_index("branch", a.branch(), self.n_branches)
    }

    fn dot(&self, r: &[f64], s: usize, b: usize) -> f64 {
        let block = &r[b * self.k..(b + 1) * self.k];
        self.psi(s).iter().zip(block).map(|(x, w)| x * w).sum()
    }

    fn max_branch(&self, r: &[f64], s: usize) -> f64 {
        (1..self.n_branches).fold(self.dot(r, s, 0), |m, b| m.max(self.dot(r, s, b)))
    }

    /// Weighted Gram matrix `Φᵀ D Φ`.
    pub fn gram(&self, d: &[f64]) -> Result<DMatrix<f64>> {
        self.check_distribution(d)?;
        let p = self.dimension();
        let mut g = DMatrix::zeros(p, p);
        for s in 0..self.n_states {
            let x = self.psi(s);
            for b in 0..self.n_branches {
                let w = d[s * self.n_branches + b];
                if w == 0.0 {
                    continue;
                }
                let o = b * self.k;
                for i in 0..self.k {
                    for j in 0..self.k {
                        g[(o + i, o + j)] += w * x[i] * x[j];
                    }
                }
            }
        }
        Ok(g)
    }

    pub fn min_gram_eigenvalue(&self, d: &[f64]) -> Result<f64> {
        let g = self.gram(d)?;
        Ok(g.symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min))
    }

    fn check_distribution(&self, d: &[f64]) -> Result<()> {
        let expected = self.n_states * self.n_branches;
        if d.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: d.len() });
        }
        if d.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Numerical("pair weights must be finite and nonnegative".into()));
        }
        Ok(())
    }

    fn check_mdp(&self, mdp: &TabularMdp) -> Result<()> {
        if mdp.n_states() != self.n_states {
            return Err(Error::DimensionMismatch {
                expected: self.n_states,
                got: mdp.n_states(),
            });
        }
        if mdp.n_branches() != self.n_branches {
            return Err(Error::DimensionMismatch {
                expected: self.n_branches,
                got: mdp.n_branches(),
            });
        }
        Ok(())
    }
}

fn normalize(coords: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let dim = coords.first().map_or(0, Vec::len);
    if let Some(bad) = coords.iter().find(|c| c.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for c in coords {
        for i in 0..dim {
            lo[i] = lo[i].min(c[i]);
            hi[i] = hi[i].max(c[i]);
        }
    }
    Ok(coords
        .iter()
        .map(|c| {
            (0..dim)
                .map(|i| {
                    if hi[i] > lo[i] {
                        (c[i] - lo[i]) / (hi[i] - lo[i])
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect())
}

/// Feature block of an experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureConfig {
    OneHot,
    /// Consecutive runs of `group_size` states share a feature.
    Aggregation {
        group_size: usize,
    },
    /// `centers` evenly spaced bumps per coordinate.
    RadialBumps {
        centers: usize,
        width: f64,
    },
    Polynomial {
        degree: u32,
    },
}

impl FeatureConfig {
    /// Build for `n_states` states; `coords` default to the state index.
    pub fn build(&self, n_states: usize, n_actions: usize, coords: Option<&[Vec<f64>]>) -> Result<FeatureMap> {
        let index_coords: Vec<Vec<f64>>;
        let coords = match coords {
            Some(c) => c,
            None => {
                index_coords = (0..n_states).map(|s| vec![s as f64]).collect();
                &index_coords
            }
        };
        match *self {
            FeatureConfig::OneHot => Ok(FeatureMap::one_hot(n_states, n_actions)),
            FeatureConfig::Aggregation { group_size } => {
                if group_size == 0 {
                    return Err(Error::Numerical("group_size must be positive".into()));
                }
                let groups: Vec<usize> = (0..n_states).map(|s| s / group_size).collect();
                FeatureMap::aggregation(&groups, n_actions)
            }
            FeatureConfig::RadialBumps { centers, width } => {
                let dim = coords.first().map_or(1, Vec::len);
                let grid = grid_points(dim, centers.max(1));
                FeatureMap::radial_bumps(coords, &grid, width, n_actions)
            }
            FeatureConfig::Polynomial { degree } => FeatureMap::polynomial(coords, degree, n_actions),
        }
    }
}

fn grid_points(dim: usize, per_dim: usize) -> Vec<Vec<f64>> {
    let ticks: Vec<f64> = if per_dim == 1 {
        vec![0.5]
    } else {
        (0..per_dim).map(|i| i as f64 / (per_dim - 1) as f64).collect()
    };
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                ticks.iter().map(move |&t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    pub r: Vec<f64>,
    pub steps: u64,
}

impl WeightVector {
    pub fn zeros(p: usize) -> Self {
        Self {
            r: vec![0.0; p],
            steps: 0,
        }
    }

    pub fn norm(&self) -> f64 {
        self.r.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Text form: a `# weights p=<p> steps=<t>` header, then one value per
    /// line.
    pub fn to_text(&self) -> String {
        let mut out = format!("# weights p={} steps={}\n", self.r.len(), self.steps);
        for x in &self.r {
            out.push_str(&format!("{x}\n"));
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty weight file".into()))?;
        let field = |key: &str| -> Result<u64> {
            header
                .split_whitespace()
                .find_map(|t| t.strip_prefix(key))
                .ok_or_else(|| Error::Parse(format!("header lacks `{key}`")))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad `{key}`: {e}")))
        };
        if !header.starts_with("# weights") {
            return Err(Error::Parse("missing `# weights` header".into()));
        }
        let p = field("p=")? as usize;
        let steps = field("steps=")?;
        let r = lines
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad weight `{l}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if r.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: r.len(),
            });
        }
        Ok(Self { r, steps })
    }
}

/// `(Φr)(s, a)`.
pub fn q_hat(features: &FeatureMap, r: &WeightVector, s: usize, a: Action) -> Result<f64> {
    if r.r.len() != features.dimension() {
        return Err(Error::DimensionMismatch {
            expected: features.dimension(),
            got: r.r.len(),
        });
    }
    features.check(s, a)?;
    Ok(features.dot(&r.r, s, a.branch()))
}

/// One stochastic-approximation step `r ← r + step · φ(z) · δ`, where
/// `δ = reward - cost + γ max_b (Φr)(s', b) - (Φr)(z)`. Returns `δ`.
pub fn fa_update(
    r: &mut WeightVector,
    features: &FeatureMap,
    sample: &TransitionSample,
    gamma: f64,
    step: f64,
) -> Result<f64> {
    if r.r.len() != features.dimension() {
        return Err(Error::DimensionMismatch {
            expected: features.dimension(),
            got: r.r.len(),
        });
    }
    features.check(sample.state, sample.action)?;
    check_index("state", sample.next_state, features.n_states)?;
    let b = sample.action.branch();
    let target = sample.net() + gamma * features.max_branch(&r.r, sample.next_state);
    let td = target - features.dot(&r.r, sample.state, b);
    if !td.is_finite() {
        return Err(Error::Numerical(format!("non-finite TD error at update {}", r.steps)));
    }
    let k = features.k;
    for (w, x) in r.r[b * k..(b + 1) * k].iter_mut().zip(features.psi(sample.state)) {
        *w += step * td * x;
    }
    r.steps += 1;
    Ok(td)
}

/// Step-size sequence for [`train_fa`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepRule {
    /// `c / (1 + t)^omega` in the global update count.
    Global { c: f64, omega: f64 },
    /// `alpha0 / (1 + visits(s, b))^omega`, as in the tabular learner.
    PerPair { alpha0: f64, omega: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaSchedule {
    pub step: StepRule,
    /// Abort when `‖r‖` exceeds this.
    pub max_norm: f64,
    /// Average the iterates over this trailing fraction of the run.
    pub tail_fraction: f64,
    /// Steps per Bellman-error window.
    pub window: u64,
}

impl Default for FaSchedule {
    fn default() -> Self {
        Self {
            step: StepRule::Global { c: 0.5, omega: 0.7 },
            max_norm: 1e6,
            tail_fraction: 0.5,
            window: 1000,
        }
    }
}

impl FaSchedule {
    pub fn validate(&self) -> Result<()> {
        let (scale, omega) = match self.step {
            StepRule::Global { c, omega } => (c, omega),
            StepRule::PerPair { alpha0, omega } => (alpha0, omega),
        };
        if !(scale > 0.0 && scale.is_finite()) || !(omega > 0.5 && omega <= 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "step scale {scale} and exponent {omega} violate step-size conditions"
            )));
        }
        if !(self.max_norm > 0.0) || !(0.0..=1.0).contains(&self.tail_fraction) || self.window == 0 {
            return Err(Error::InvalidSchedule(
                "max_norm, tail_fraction or window out of range".into(),
            ));
        }
        Ok(())
    }
}

struct FaLearner<'a> {
    features: &'a FeatureMap,
    schedule: FaSchedule,
    r: WeightVector,
    visits: Vec<u64>,
    tail_start: u64,
    avg: Vec<f64>,
    n_avg: u64,
    window_sq: f64,
    window_n: u64,
    bellman_error: Vec<f64>,
}

impl FaLearner<'_> {
    fn value(&self, s: usize) -> f64 {
        self.features.max_branch(&self.r.r, s)
    }
}

impl Learner for FaLearner<'_> {
    fn greedy(&self, s: usize) -> Action {
        let f = self.features;
        greedy_branch(
            f.dot(&self.r.r, s, 0),
            (1..f.n_branches).map(|b| f.dot(&self.r.r, s, b)),
        )
    }

    fn state_value(&self, s: usize) -> f64 {
        self.value(s)
    }

    fn observe(&mut self, sample: &TransitionSample, gamma: f64) -> Result<()> {
        let t = self.r.steps;
        let k = sample.state * self.features.n_branches + sample.action.branch();
        let n = self.visits[k];
        self.visits[k] += 1;
        let step = match self.schedule.step {
            StepRule::Global { c, omega } => c / (1.0 + t as f64).powf(omega),
            StepRule::PerPair { alpha0, omega } => alpha0 / (1.0 + n as f64).powf(omega),
        };
        let td = fa_update(&mut self.r, self.features, sample, gamma, step)?;
        let norm = self.r.norm();
        if !(norm <= self.schedule.max_norm) {
            return Err(Error::Divergence {
                step: t,
                norm,
                bound: self.schedule.max_norm,
            });
        }
        if t >= self.tail_start {
            self.n_avg += 1;
            let w = 1.0 / self.n_avg as f64;
            for (a, x) in self.avg.iter_mut().zip(&self.r.r) {
                *a += w * (x - *a);
            }
        }
        self.window_sq += td * td;
        self.window_n += 1;
        if self.window_n == self.schedule.window {
            self.bellman_error.push((self.window_sq / self.window_n as f64).sqrt());
            self.window_sq = 0.0;
            self.window_n = 0;
        }
        Ok(())
    }

    fn magnitude(&self) -> f64 {
        self.r.norm()
    }
}

#[derive(Clone, Debug)]
pub struct FaOutcome {
    pub weights: WeightVector,
    /// Mean of the iterates over the trailing `tail_fraction` of the run.
    pub averaged: WeightVector,
    pub policy: ImpulsePolicy,
    pub diagnostics: LearnerDiagnostics,
    /// Root-mean-square TD error per window.
    pub bellman_error: Vec<f64>,
    /// Visit counts per `(state, branch)` pair.
    pub pair_visits: Vec<u64>,
}

impl FaOutcome {
    pub fn values(&self, features: &FeatureMap, averaged: bool) -> Vec<f64> {
        let r = if averaged { &self.averaged.r } else { &self.weights.r };
        (0..features.n_states).map(|s| features.max_branch(r, s)).collect()
    }
}

/// Run linear Q-learning under the ε-greedy behavior of `explore`, which
/// supplies the exploration schedule; step sizes come from `schedule`.
pub fn train_fa<E: DiscreteEnv>(
    env: &mut E,
    features: &FeatureMap,
    explore: &LearnSchedule,
    schedule: &FaSchedule,
    run: &RunSpec,
    seeds: SeedTree,
    oracle: Option<&ValueFunction>,
) -> Result<FaOutcome> {
    schedule.validate()?;
    if env.n_states() != features.n_states || env.n_actions() + 1 != features.n_branches {
        return Err(Error::DimensionMismatch {
            expected: features.n_states * features.n_branches,
            got: env.n_states() * (env.n_actions() + 1),
        });
    }
    let total = run.max_steps.unwrap_or((run.episodes * run.horizon) as u64);
    let tail_start = total - (schedule.tail_fraction * total as f64).round() as u64;
    let p = features.dimension();
    let mut learner = FaLearner {
        features,
        schedule: schedule.clone(),
        r: WeightVector::zeros(p),
        visits: vec![0; features.n_states * features.n_branches],
        tail_start,
        avg: vec![0.0; p],
        n_avg: 0,
        window_sq: 0.0,
        window_n: 0,
        bellman_error: Vec::new(),
    };
    let diagnostics = drive(env, &mut learner, explore, explore.exploration, run, seeds, oracle)?;
    let averaged = if learner.n_avg == 0 {
        learner.r.r.clone()
    } else {
        learner.avg.clone()
    };
    let policy = policy_from(
        features.n_states,
        |s| learner.greedy(s),
        |s| {
            let mut best = (f64::NEG_INFINITY, 0);
            for b in 1..features.n_branches {
                let q = features.dot(&learner.r.r, s, b);
                if q > best.0 {
                    best = (q, b - 1);
                }
            }
            best.1
        },
    );
    Ok(FaOutcome {
        averaged: WeightVector {
            r: averaged,
            steps: learner.r.steps,
        },
        weights: learner.r,
        policy,
        diagnostics,
        bellman_error: learner.bellman_error,
        pair_visits: learner.visits,
    })
}

/// Expected pair occupancy of horizon-`h` episodes under uniformly random
/// branches from a uniform start state. Strictly positive and sums to 1.
pub fn uniform_behavior_occupancy(mdp: &TabularMdp, horizon: usize) -> Vec<f64> {
    let n = mdp.n_states();
    let nb = mdp.n_branches();
    let mut rho = vec![1.0 / n as f64; n];
    let mut occ = vec![0.0; n];
    for _ in 0..horizon.max(1) {
        let mut next = vec![0.0; n];
        for s in 0..n {
            occ[s] += rho[s];
            for b in 0..nb {
                for &(t, p) in mdp.row(Action::from_branch(b), s) {
                    next[t] += rho[s] * p / nb as f64;
                }
            }
        }
        rho = next;
    }
    let total: f64 = occ.iter().sum();
    occ.iter()
        .flat_map(|&o| std::iter::repeat_n(o / total / nb as f64, nb))
        .collect()
}

/// Normalized empirical pair distribution from visit counts.
pub fn empirical_distribution(pair_visits: &[u64]) -> Vec<f64> {
    let total: u64 = pair_visits.iter().sum();
    pair_visits.iter().map(|&c| c as f64 / total.max(1) as f64).collect()
}

/// `(F Φr)(s, b) = R̃(s, b) + γ P_b max_b' (Φr)(s', b')` for every pair.
fn apply_f(mdp: &TabularMdp, cost: &CostSpec, features: &FeatureMap, r: &[f64]) -> Vec<f64> {
    let n = mdp.n_states();
    let v: Vec<f64> = (0..n).map(|s| features.max_branch(r, s)).collect();
    let mut out = Vec::with_capacity(n * mdp.n_branches());
    for s in 0..n {
        for b in 0..mdp.n_branches() {
            let a = Action::from_branch(b);
            out.push(mdp.reward(a, s) - mdp.cost(cost, s, a) + mdp.gamma() * mdp.expect(a, s, &v));
        }
    }
    out
}

fn phi_values(features: &FeatureMap, r: &[f64]) -> Vec<f64> {
    (0..features.n_states)
        .flat_map(|s| (0..features.n_branches).map(move |b| (s, b)))
        .map(|(s, b)| features.dot(r, s, b))
        .collect()
}

/// `Φᵀ D y` for a pair vector `y`.
fn phi_t_d(features: &FeatureMap, d: &[f64], y: &[f64]) -> DVector<f64> {
    let k = features.k;
    let mut out = DVector::zeros(features.dimension());
    for s in 0..features.n_states {
        for b in 0..features.n_branches {
            let i = s * features.n_branches + b;
            let w = d[i] * y[i];
            for (j, x) in features.psi(s).iter().enumerate() {
                out[b * k + j] += w * x;
            }
        }
    }
    out
}

fn gram_solver(features: &FeatureMap, d: &[f64]) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let g = features.gram(d)?;
    let min_eigenvalue = g
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(min_eigenvalue > GRAM_EIGEN_TOL) {
        return Err(Error::RankDeficient { min_eigenvalue });
    }
    g.cholesky().ok_or(Error::RankDeficient { min_eigenvalue })
}

/// Weights of the `D`-weighted least-squares projection of a pair vector.
pub fn weighted_projection(features: &FeatureMap, d: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    let chol = gram_solver(features, d)?;
    Ok(chol.solve(&phi_t_d(features, d, target)).iter().copied().collect())
}

/// Mean update `Ξ̄(r) = Φᵀ D (F Φr - Φr)` under the exact kernel.
pub fn mean_update(
    mdp: &TabularMdp,
    cost: &CostSpec,
    features: &FeatureMap,
    d: &[f64],
    r: &WeightVector,
) -> Result<Vec<f64>> {
    features.check_mdp(mdp)?;
    features.check_distribution(d)?;
    if r.r.len() != features.dimension() {
        return Err(Error::DimensionMismatch {
            expected: features.dimension(),
            got: r.r.len(),
        });
    }
    let f = apply_f(mdp, cost, features, &r.r);
    let q = phi_values(features, &r.r);
    let diff: Vec<f64> = f.iter().zip(&q).map(|(a, b)| a - b).collect();
    Ok(phi_t_d(features, d, &diff).iter().copied().collect())
}

/// Fixed point of `Π F` by iterating `r ← G⁻¹ Φᵀ D F(Φr)`.
pub fn projected_fixed_point(
    mdp: &TabularMdp,
    cost: &CostSpec,
    features: &FeatureMap,
    d: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<WeightVector> {
    features.check_mdp(mdp)?;
    let chol = gram_solver(features, d)?;
    let mut r = vec![0.0; features.dimension()];
    let mut residual = f64::INFINITY;
    for it in 0..max_iters {
        let f = apply_f(mdp, cost, features, &r);
        let next: Vec<f64> = chol.solve(&phi_t_d(features, d, &f)).iter().copied().collect();
        residual = next.iter().zip(&r).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        r = next;
        if !residual.is_finite() {
            break;
        }
        if residual < tol {
            return Ok(WeightVector {
                r,
                steps: it as u64 + 1,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorBound {
    /// `‖Φr* - Q*‖_D`.
    pub lhs: f64,
    /// `(1 - γ²)^{-1/2} ‖ΠQ* - Q*‖_D`.
    pub rhs: f64,
    pub factor: f64,
    pub min_gram_eigenvalue: f64,
    pub holds: bool,
}

/// Slack added to the right-hand side.
pub const BOUND_SLACK: f64 = 1e-8;

/// Compare `Φr*` with the exact branch values `Q*` in the `D`-weighted norm.
pub fn verify_error_bound(
    mdp: &TabularMdp,
    cost: &CostSpec,
    features: &FeatureMap,
    r_star: &WeightVector,
    d: &[f64],
) -> Result<ErrorBound> {
    features.check_mdp(mdp)?;
    features.check_distribution(d)?;
    if r_star.r.len() != features.dimension() {
        return Err(Error::DimensionMismatch {
            expected: features.dimension(),
            got: r_star.r.len(),
        });
    }
    let total: f64 = d.iter().sum();
    let d: Vec<f64> = d.iter().map(|w| w / total).collect();
    let min_gram_eigenvalue = features.min_gram_eigenvalue(&d)?;
    if !(min_gram_eigenvalue > GRAM_EIGEN_TOL) {
        return Err(Error::RankDeficient {
            min_eigenvalue: min_gram_eigenvalue,
        });
    }
    let vi = value_iteration(mdp, cost, 1e-12, 1_000_000)?;
    let bv = branch_values(mdp, cost, &vi.value);
    let q_star: Vec<f64> = (0..mdp.n_states())
        .flat_map(|s| (0..mdp.n_branches()).map(move |b| (s, b)))
        .map(|(s, b)| bv.get(s, Action::from_branch(b)))
        .collect();
    let dnorm = |x: &[f64]| {
        x.iter()
            .zip(&q_star)
            .zip(&d)
            .map(|((a, b), w)| w * (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let proj = weighted_projection(features, &d, &q_star)?;
    let lhs = dnorm(&phi_values(features, &r_star.r));
    let gamma = mdp.gamma();
    let factor = 1.0 / (1.0 - gamma * gamma).sqrt();
    let rhs = factor * dnorm(&phi_values(features, &proj));
    Ok(ErrorBound {
        lhs,
        rhs,
        factor,
        min_gram_eigenvalue,
        holds: lhs <= rhs + BOUND_SLACK,
    })
}
