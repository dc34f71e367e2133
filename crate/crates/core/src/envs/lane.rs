//! A vehicle on a straight track with three penalty zones.
//!
//! Each step the velocity decays by `drag` and, on an intervention, changes
//! by the chosen acceleration `a`; the position then advances by the new
//! velocity. Being inside zone `k` below `v_min` after a step costs
//! `penalties[k]`; reaching the end of the track pays `goal_reward` and ends
//! the episode. An intervention costs `K + a²`.

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::mdp::{Action, CostSpec, StateCost, TabularMdp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaneParams {
    /// Fixed part `K` of the intervention cost.
    pub k: f64,
    pub actions: Vec<f64>,
    pub v_min: f64,
    pub zones: [[f64; 2]; 3],
    /// Penalty magnitudes; the reward in zone `k` below `v_min` is
    /// `-penalties[k]`.
    pub penalties: [f64; 3],
    pub drag: f64,
    pub goal_reward: f64,
    pub track_length: f64,
    pub horizon: usize,
    pub gamma: f64,
    pub v_max: f64,
    pub position_step: f64,
    pub velocity_step: f64,
}

impl Default for LaneParams {
    fn default() -> Self {
        Self {
            k: 1.0,
            actions: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            v_min: 0.5,
            zones: [[20.0, 30.0], [45.0, 55.0], [70.0, 80.0]],
            penalties: [1.0, 2.0, 4.0],
            drag: 0.05,
            goal_reward: 20.0,
            track_length: 100.0,
            horizon: 200,
            gamma: 0.99,
            v_max: 5.0,
            position_step: 1.0,
            velocity_step: 0.05,
        }
    }
}

impl LaneParams {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.penalties[0] < self.penalties[1] && self.penalties[1] < self.penalties[2]) {
            bad.push(format!(
                "zone penalties {:?} must be strictly increasing",
                self.penalties
            ));
        }
        if self.penalties[0] <= 0.0 {
            bad.push("zone penalties must be positive".into());
        }
        for (i, z) in self.zones.iter().enumerate() {
            if !(z[0] < z[1]) {
                bad.push(format!("zone {} is empty", i + 1));
            }
            if i > 0 && self.zones[i - 1][1] > z[0] {
                bad.push(format!("zones {} and {} overlap or are out of order", i, i + 1));
            }
        }
        if self.actions.is_empty() || self.actions.iter().any(|a| !(-1.0..=1.0).contains(a)) {
            bad.push("actions must be a nonempty subset of [-1, 1]".into());
        }
        if !(self.k > 0.0) {
            bad.push(format!("K = {} must be positive", self.k));
        }
        if !(self.drag >= 0.0 && self.v_min >= 0.0 && self.track_length > 0.0 && self.v_max > 0.0) {
            bad.push("drag, v_min, track_length and v_max must be nonnegative".into());
        }
        if !(self.position_step > 0.0 && self.velocity_step > 0.0) {
            bad.push("grid steps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            bad.push(format!("gamma = {} must lie in [0, 1)", self.gamma));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidMdp(bad))
        }
    }

    /// The zone (0-based) containing `position`, if any.
    pub fn zone(&self, position: f64) -> Option<usize> {
        self.zones.iter().position(|z| position >= z[0] && position < z[1])
    }

    /// `K + a²` with the actions indexed as in [`LaneParams::actions`].
    pub fn cost_spec(&self) -> CostSpec {
        let grid = self.actions.clone();
        CostSpec::FixedPlusStateDependent {
            kappa: self.k,
            extra: StateCost::new("a^2", move |_, a| a.act_index().map_or(0.0, |i| grid[i] * grid[i])),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaneState {
    pub position: f64,
    pub velocity: f64,
    pub step: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaneStep {
    pub next: LaneState,
    pub reward: f64,
    pub cost: f64,
    /// Zone entered below `v_min`, if any.
    pub violation: Option<usize>,
    pub done: bool,
}

/// `a` is `None` for the null action.
pub fn lane_step(state: &LaneState, params: &LaneParams, a: Option<f64>) -> Result<LaneStep> {
    if state.step >= params.horizon {
        return Err(Error::EpisodeOver {
            step: state.step,
            horizon: params.horizon,
        });
    }
    let (accel, cost) = match a {
        None => (0.0, 0.0),
        Some(a) => (a, params.k + a * a),
    };
    let velocity = (state.velocity - params.drag + accel).clamp(0.0, params.v_max);
    let position = (state.position + velocity).min(params.track_length);
    let next = LaneState {
        position,
        velocity,
        step: state.step + 1,
    };
    let reached = position >= params.track_length;
    let violation = if reached {
        None
    } else {
        params.zone(position).filter(|_| velocity < params.v_min)
    };
    let reward = if reached {
        params.goal_reward
    } else {
        violation.map_or(0.0, |k| -params.penalties[k])
    };
    Ok(LaneStep {
        next,
        reward,
        cost,
        violation,
        done: reached || next.step >= params.horizon,
    })
}

fn action_value(params: &LaneParams, a: Action) -> Result<Option<f64>> {
    match a.act_index() {
        None => Ok(None),
        Some(i) => {
            check_index("lane action", i, params.actions.len())?;
            Ok(Some(params.actions[i]))
        }
    }
}

/// Grid over (position, velocity) with linear interpolation of off-grid
/// successors, plus an absorbing goal state. Time is not part of the state:
/// the episode horizon is replaced by discounting.
#[derive(Clone, Debug)]
pub struct LaneMdp {
    pub mdp: TabularMdp,
    pub cost: CostSpec,
    pub params: LaneParams,
    pub n_positions: usize,
    pub n_velocities: usize,
    pub goal: usize,
}

impl LaneMdp {
    pub fn index(&self, ip: usize, iv: usize) -> usize {
        ip * self.n_velocities + iv
    }

    /// Nearest grid state.
    pub fn observe(&self, state: &LaneState) -> usize {
        if state.position >= self.params.track_length {
            return self.goal;
        }
        let ip = ((state.position / self.params.position_step).round() as usize).min(self.n_positions - 1);
        let iv = ((state.velocity / self.params.velocity_step).round() as usize).min(self.n_velocities - 1);
        self.index(ip, iv)
    }

    pub fn coordinates(&self, s: usize) -> (f64, f64) {
        if s == self.goal {
            return (self.params.track_length, 0.0);
        }
        let (ip, iv) = (s / self.n_velocities, s % self.n_velocities);
        (
            ip as f64 * self.params.position_step,
            iv as f64 * self.params.velocity_step,
        )
    }
}

fn bracket(x: f64, step: f64, n: usize) -> [(usize, f64); 2] {
    let u = (x / step).clamp(0.0, (n - 1) as f64);
    let lo = (u.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let w = u - lo as f64;
    if hi == lo || w <= 0.0 {
        [(lo, 1.0), (hi, 0.0)]
    } else {
        [(lo, 1.0 - w), (hi, w)]
    }
}

pub fn lane_discretize(params: &LaneParams) -> Result<LaneMdp> {
    params.validate()?;
    let n_positions = (params.track_length / params.position_step).ceil() as usize;
    let n_velocities = (params.v_max / params.velocity_step).round() as usize + 1;
    let n = n_positions * n_velocities + 1;
    let goal = n - 1;
    let nb = params.actions.len() + 1;
    let mut rows = vec![Vec::new(); nb * n];
    let mut reward = vec![0.0; nb * n];
    let mut out = LaneMdp {
        mdp: TabularMdp::from_rows(1, 0, 0.0, vec![vec![(0, 1.0)]], vec![0.0])?,
        cost: params.cost_spec(),
        params: params.clone(),
        n_positions,
        n_velocities,
        goal,
    };
    for s in 0..goal {
        let (position, velocity) = out.coordinates(s);
        let state = LaneState {
            position,
            velocity,
            step: 0,
        };
        for b in 0..nb {
            let step = lane_step(&state, params, action_value(params, Action::from_branch(b))?)?;
            reward[b * n + s] = step.reward;
            rows[b * n + s] = if step.next.position >= params.track_length {
                vec![(goal, 1.0)]
            } else {
                let mut row = Vec::with_capacity(4);
                for (ip, wp) in bracket(step.next.position, params.position_step, n_positions) {
                    for (iv, wv) in bracket(step.next.velocity, params.velocity_step, n_velocities) {
                        if wp * wv > 0.0 {
                            row.push((out.index(ip, iv), wp * wv));
                        }
                    }
                }
                row
            };
        }
    }
    for b in 0..nb {
        rows[b * n + goal] = vec![(goal, 1.0)];
    }
    out.mdp = TabularMdp::from_rows(n, params.actions.len(), params.gamma, rows, reward)?;
    let problems = out.mdp.validate();
    if !problems.is_empty() {
        return Err(Error::InvalidMdp(problems));
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LaneRollout {
    pub ret: f64,
    pub interventions: u32,
    /// Steps spent in each zone below `v_min`.
    pub zone_violations: [u32; 3],
    pub reached_goal: bool,
    pub steps: usize,
}

/// One continuous episode from rest at position 0, choosing actions from
/// the nearest grid state.
pub fn lane_rollout(disc: &LaneMdp, policy: impl Fn(usize) -> Action) -> Result<LaneRollout> {
    let params = &disc.params;
    let mut state = LaneState {
        position: 0.0,
        velocity: 0.0,
        step: 0,
    };
    let mut out = LaneRollout::default();
    loop {
        let a = policy(disc.observe(&state));
        let step = lane_step(&state, params, action_value(params, a)?)?;
        out.ret += step.reward - step.cost;
        out.interventions += !a.is_null() as u32;
        if let Some(k) = step.violation {
            out.zone_violations[k] += 1;
        }
        state = step.next;
        out.steps = state.step;
        if step.done {
            out.reached_goal = state.position >= params.track_length;
            return Ok(out);
        }
    }
}
