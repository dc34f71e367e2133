//! Merton portfolio allocation with a fixed transaction cost.
//!
//! Wealth is split between a risky asset `s` and a risk-free asset `c`.
//! Each step applies one Euler–Maruyama step of
//! `dW = (r + p(μ - r)) W dt + W p σ dB` with `p = s / (s + c)`, the noise
//! acting on the risky component only; then an optional move of
//! `move_fraction` of one asset into the other. Intermediate rewards are 0
//! and the final step pays `2 √(s_T + c_T)`. Each move costs
//! `transaction_cost`, charged to the return stream or, with
//! `deduct_cost_from_wealth`, taken out of the risk-free asset.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Action, CostSpec, TabularMdp};
use crate::rng::{SeedTree, StreamRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MertonParams {
    pub r: f64,
    pub mu: f64,
    pub sigma: f64,
    pub dt: f64,
    pub horizon: usize,
    pub move_fraction: f64,
    pub transaction_cost: f64,
    pub initial_risky: f64,
    pub initial_riskfree: f64,
    pub deduct_cost_from_wealth: bool,
}

impl Default for MertonParams {
    fn default() -> Self {
        Self {
            r: 0.01,
            mu: 0.05,
            sigma: 1.0,
            dt: 0.01,
            horizon: 75,
            move_fraction: 0.1,
            transaction_cost: 1.0,
            initial_risky: 50.0,
            initial_riskfree: 50.0,
            deduct_cost_from_wealth: false,
        }
    }
}

impl MertonParams {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.dt > 0.0) {
            bad.push(format!("dt = {} must be positive", self.dt));
        }
        if !(self.sigma >= 0.0) {
            bad.push(format!("sigma = {} must be nonnegative", self.sigma));
        }
        if !(self.move_fraction > 0.0 && self.move_fraction < 1.0) {
            bad.push(format!("move_fraction = {} must lie in (0, 1)", self.move_fraction));
        }
        if !(self.transaction_cost >= 0.0) {
            bad.push("transaction_cost must be nonnegative".into());
        }
        if !(self.initial_risky >= 0.0
            && self.initial_riskfree >= 0.0
            && self.initial_risky + self.initial_riskfree > 0.0)
        {
            bad.push("initial wealths must be nonnegative with a positive total".into());
        }
        if self.horizon == 0 {
            bad.push("horizon must be positive".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidMdp(bad))
        }
    }

    pub fn initial_state(&self) -> MertonState {
        MertonState {
            risky: self.initial_risky,
            riskfree: self.initial_riskfree,
            t: 0,
        }
    }

    /// Cost as charged to the return stream.
    pub fn cost_spec(&self) -> CostSpec {
        if self.deduct_cost_from_wealth || self.transaction_cost == 0.0 {
            CostSpec::Zero
        } else {
            CostSpec::Fixed {
                kappa: self.transaction_cost,
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MertonAction {
    Null,
    MoveToRiskFree,
    MoveToRisky,
}

impl MertonAction {
    pub fn from_action(a: Action) -> Result<Self> {
        match a.branch() {
            0 => Ok(Self::Null),
            1 => Ok(Self::MoveToRiskFree),
            2 => Ok(Self::MoveToRisky),
            b => Err(Error::IndexOutOfRange {
                what: "merton action",
                index: b - 1,
                len: 2,
            }),
        }
    }

    pub fn action(self) -> Action {
        match self {
            Self::Null => Action::NULL,
            Self::MoveToRiskFree => Action::intervene(0),
            Self::MoveToRisky => Action::intervene(1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MertonState {
    pub risky: f64,
    pub riskfree: f64,
    pub t: usize,
}

impl MertonState {
    pub fn wealth(&self) -> f64 {
        self.risky + self.riskfree
    }

    pub fn risky_share(&self) -> f64 {
        let w = self.wealth();
        if w > 0.0 {
            self.risky / w
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MertonStep {
    pub next: MertonState,
    pub reward: f64,
    /// Cost charged to the return stream.
    pub cost: f64,
    pub intervened: bool,
    pub done: bool,
}

pub fn utility(wealth: f64) -> f64 {
    2.0 * wealth.max(0.0).sqrt()
}

/// Move `move_fraction` of the source asset; total wealth is unchanged.
pub fn apply_move(state: &mut MertonState, params: &MertonParams, action: MertonAction) {
    match action {
        MertonAction::Null => {}
        MertonAction::MoveToRiskFree => {
            let m = params.move_fraction * state.risky;
            state.risky -= m;
            state.riskfree += m;
        }
        MertonAction::MoveToRisky => {
            let m = params.move_fraction * state.riskfree;
            state.riskfree -= m;
            state.risky += m;
        }
    }
}

fn advance(state: &MertonState, params: &MertonParams, action: MertonAction, xi: f64) -> MertonStep {
    let mut next = MertonState {
        risky: (state.risky * (1.0 + params.mu * params.dt + params.sigma * params.dt.sqrt() * xi)).max(0.0),
        riskfree: state.riskfree * (1.0 + params.r * params.dt),
        t: state.t + 1,
    };
    apply_move(&mut next, params, action);
    let intervened = action != MertonAction::Null;
    let mut cost = 0.0;
    if intervened {
        if params.deduct_cost_from_wealth {
            let from_cash = params.transaction_cost.min(next.riskfree);
            next.riskfree -= from_cash;
            next.risky = (next.risky - (params.transaction_cost - from_cash)).max(0.0);
        } else {
            cost = params.transaction_cost;
        }
    }
    let done = next.t >= params.horizon;
    MertonStep {
        reward: if done { utility(next.wealth()) } else { 0.0 },
        next,
        cost,
        intervened,
        done,
    }
}

/// One step from `state`. Draws exactly one standard normal.
pub fn merton_step(
    state: &MertonState,
    params: &MertonParams,
    action: MertonAction,
    rng: &mut StreamRng,
) -> Result<MertonStep> {
    if state.t >= params.horizon {
        return Err(Error::EpisodeOver {
            step: state.t,
            horizon: params.horizon,
        });
    }
    let xi: f64 = rng.sample(StandardNormal);
    Ok(advance(state, params, action, xi))
}

/// Grid over (total wealth, risky share) plus the step index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MertonGrid {
    pub wealth_buckets: usize,
    pub split_buckets: usize,
    /// Log-spaced wealth range; values outside fall in the edge buckets.
    pub wealth_min: f64,
    pub wealth_max: f64,
    /// Monte-Carlo draws per (wealth, split, action) cell.
    pub samples_per_cell: usize,
    pub gamma: f64,
}

impl Default for MertonGrid {
    fn default() -> Self {
        Self {
            wealth_buckets: 24,
            split_buckets: 11,
            wealth_min: 10.0,
            wealth_max: 1000.0,
            samples_per_cell: 2000,
            gamma: 0.999,
        }
    }
}

/// Smallest accepted `samples_per_cell`.
pub const MIN_SAMPLES_PER_CELL: usize = 100;

impl MertonGrid {
    pub fn wealth_bucket(&self, w: f64) -> usize {
        if self.wealth_buckets == 1 || w <= self.wealth_min {
            return 0;
        }
        let x = (w / self.wealth_min).ln() / (self.wealth_max / self.wealth_min).ln();
        ((x * self.wealth_buckets as f64) as usize).min(self.wealth_buckets - 1)
    }

    pub fn split_bucket(&self, p: f64) -> usize {
        ((p.clamp(0.0, 1.0) * self.split_buckets as f64) as usize).min(self.split_buckets - 1)
    }

    /// Geometric center of a wealth bucket.
    pub fn wealth_center(&self, i: usize) -> f64 {
        let ratio = self.wealth_max / self.wealth_min;
        self.wealth_min * ratio.powf((i as f64 + 0.5) / self.wealth_buckets as f64)
    }

    pub fn split_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.split_buckets as f64
    }

    fn validate(&self) -> Result<()> {
        if self.wealth_buckets == 0 || self.split_buckets == 0 {
            return Err(Error::Estimation("bucket counts must be positive".into()));
        }
        if !(self.wealth_min > 0.0 && self.wealth_max > self.wealth_min) {
            return Err(Error::Estimation("wealth range must satisfy 0 < min < max".into()));
        }
        if self.samples_per_cell < MIN_SAMPLES_PER_CELL {
            return Err(Error::Estimation(format!(
                "{} samples per cell is below the minimum of {MIN_SAMPLES_PER_CELL}",
                self.samples_per_cell
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Estimation(format!("gamma = {} must lie in [0, 1)", self.gamma)));
        }
        Ok(())
    }
}

/// Tabular approximation of the Merton problem. States are
/// `(t · wealth_buckets + w) · split_buckets + p` for `t < horizon`, then
/// one absorbing terminal state.
#[derive(Clone, Debug)]
pub struct MertonMdp {
    pub mdp: TabularMdp,
    pub cost: CostSpec,
    pub grid: MertonGrid,
    pub params: MertonParams,
    pub start: usize,
    pub terminal: usize,
}

impl MertonMdp {
    pub fn index(&self, t: usize, w: usize, p: usize) -> usize {
        (t * self.grid.wealth_buckets + w) * self.grid.split_buckets + p
    }

    pub fn observe(&self, state: &MertonState) -> usize {
        if state.t >= self.params.horizon {
            return self.terminal;
        }
        self.index(
            state.t,
            self.grid.wealth_bucket(state.wealth()),
            self.grid.split_bucket(state.risky_share()),
        )
    }
}

/// Estimate the bucket kernel by simulating `samples_per_cell` steps from
/// each cell center. Dynamics do not depend on `t`, so one estimate per
/// (cell, action) serves every step index.
pub fn merton_discretize(params: &MertonParams, grid: &MertonGrid, seeds: &SeedTree) -> Result<MertonMdp> {
    params.validate()?;
    grid.validate()?;
    let (nw, np, h) = (grid.wealth_buckets, grid.split_buckets, params.horizon);
    let cells = nw * np;
    let n = h * cells + 1;
    let terminal = n - 1;
    let nb = 3;
    let mut rows = vec![Vec::new(); nb * n];
    let mut reward = vec![0.0; nb * n];
    let kernel_seeds = seeds.child("merton-kernel");
    for w in 0..nw {
        for p in 0..np {
            let cell = w * np + p;
            let wealth = grid.wealth_center(w);
            let share = grid.split_center(p);
            let from = MertonState {
                risky: wealth * share,
                riskfree: wealth * (1.0 - share),
                t: 0,
            };
            for b in 0..nb {
                let action = MertonAction::from_action(Action::from_branch(b))?;
                let mut rng = kernel_seeds.stream(&format!("{w}/{p}/{b}"));
                let mut counts = vec![0usize; cells];
                let mut util = 0.0;
                for _ in 0..grid.samples_per_cell {
                    let xi: f64 = rng.sample(StandardNormal);
                    let step = advance(&from, params, action, xi);
                    counts[grid.wealth_bucket(step.next.wealth()) * np + grid.split_bucket(step.next.risky_share())] +=
                        1;
                    util += utility(step.next.wealth());
                }
                let total = grid.samples_per_cell as f64;
                let row: Vec<(usize, f64)> = counts
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(j, &c)| (j, c as f64 / total))
                    .collect();
                for t in 0..h {
                    let s = t * cells + cell;
                    if t + 1 == h {
                        rows[b * n + s] = vec![(terminal, 1.0)];
                        reward[b * n + s] = util / total;
                    } else {
                        rows[b * n + s] = row.iter().map(|&(j, q)| ((t + 1) * cells + j, q)).collect();
                    }
                }
            }
        }
    }
    for b in 0..nb {
        rows[b * n + terminal] = vec![(terminal, 1.0)];
    }
    let mdp = TabularMdp::from_rows(n, 2, grid.gamma, rows, reward)?.validated()?;
    let mut out = MertonMdp {
        mdp,
        cost: params.cost_spec(),
        grid: grid.clone(),
        params: params.clone(),
        start: 0,
        terminal,
    };
    out.start = out.observe(&params.initial_state());
    Ok(out)
}

/// Undiscounted return and intervention count of one continuous-dynamics
/// episode under `policy`, which sees the discretized observation.
pub fn merton_rollout(disc: &MertonMdp, policy: impl Fn(usize) -> Action, rng: &mut StreamRng) -> Result<(f64, u32)> {
    let params = &disc.params;
    let mut state = params.initial_state();
    let mut ret = 0.0;
    let mut interventions = 0;
    while state.t < params.horizon {
        let action = MertonAction::from_action(policy(disc.observe(&state)))?;
        let step = merton_step(&state, params, action, rng)?;
        ret += step.reward - step.cost;
        interventions += step.intervened as u32;
        state = step.next;
    }
    Ok((ret, interventions))
}
