//! Building problems from a config and running learners on them.

use std::sync::Arc;

use impulse_core::budget::{augment_mdp, split_index, AugmentedMdp, BudgetEnv};
use impulse_core::envs::instances::make_instance;
use impulse_core::envs::lane::{lane_discretize, lane_rollout, LaneMdp};
use impulse_core::envs::merton::{merton_discretize, merton_rollout, MertonMdp};
use impulse_core::fa::{train_fa, FeatureConfig, WeightVector};
use impulse_core::mdp_file::load_mdp;
use impulse_core::qlearn::{EpisodeRecord, RunSpec};
use impulse_core::solver::{extract_policy, value_iteration, ValueIteration};
use impulse_core::{
    train, train_flat_baseline, Action, CostSpec, DiscreteEnv, ImpulsePolicy, MdpEnv, SeedTree, StartDist, TabularMdp,
    ValueFunction,
};

use crate::config::{EnvConfig, ExperimentConfig, LearnerKind};
use crate::Failure;

pub enum ProblemKind {
    Tabular,
    Merton(Box<MertonMdp>),
    Lane(Box<LaneMdp>),
}

/// A resolved environment: the tabular model the learner faces plus what
/// is needed to simulate and evaluate it.
pub struct Problem {
    pub mdp: Arc<TabularMdp>,
    pub cost: CostSpec,
    pub start: StartDist,
    pub terminal: Vec<usize>,
    /// Coordinates of each base state, for feature maps.
    pub coords: Vec<Vec<f64>>,
    pub kind: ProblemKind,
    pub augmented: Option<AugmentedMdp>,
}

fn config_err(field: &str) -> impl Fn(impulse_core::Error) -> Failure + '_ {
    move |e| Failure::Config(format!("{field}: {e}"))
}

type Parts = (TabularMdp, CostSpec, StartDist, Vec<usize>, Vec<Vec<f64>>, ProblemKind);

fn tabular(
    cfg: &ExperimentConfig,
    mdp: TabularMdp,
    cost: CostSpec,
    start: Option<usize>,
    terminal: &[usize],
) -> Result<Parts, Failure> {
    let cost = match &cfg.cost {
        Some(c) => c.to_spec().map_err(config_err("cost"))?,
        None => cost,
    };
    let n = mdp.n_states();
    let start = match start {
        Some(s) if s >= n => {
            return Err(Failure::Config(format!(
                "env.start: state {s} out of range (n_states {n})"
            )))
        }
        Some(s) => StartDist::Fixed(s),
        None => StartDist::Uniform,
    };
    if let Some(t) = terminal.iter().find(|&&t| t >= n) {
        return Err(Failure::Config(format!(
            "env.terminal: state {t} out of range (n_states {n})"
        )));
    }
    let coords = (0..n).map(|s| vec![s as f64]).collect();
    Ok((mdp, cost, start, terminal.to_vec(), coords, ProblemKind::Tabular))
}

impl Problem {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, Failure> {
        let env_seeds = SeedTree::new(cfg.master_seed).child("env");
        let (mdp, cost, start, terminal, coords, kind) = match &cfg.env {
            EnvConfig::Instance { name, start, terminal } => {
                let (mdp, cost) = make_instance(name).map_err(config_err("env.name"))?;
                tabular(cfg, mdp, cost, *start, terminal)?
            }
            EnvConfig::File { path, start, terminal } => {
                let (mdp, cost) =
                    load_mdp(path).map_err(|e| Failure::Config(format!("env.path: {}: {e}", path.display())))?;
                tabular(cfg, mdp, cost, *start, terminal)?
            }
            EnvConfig::Merton { params, grid } => {
                let d = merton_discretize(params, grid, &env_seeds).map_err(config_err("env"))?;
                let h = params.horizon;
                let mut coords = Vec::with_capacity(d.mdp.n_states());
                for t in 0..h {
                    for w in 0..grid.wealth_buckets {
                        for p in 0..grid.split_buckets {
                            coords.push(vec![t as f64, grid.wealth_center(w).ln(), grid.split_center(p)]);
                        }
                    }
                }
                coords.push(vec![h as f64, grid.wealth_center(0).ln(), 0.0]);
                (
                    d.mdp.clone(),
                    d.cost.clone(),
                    StartDist::Fixed(d.start),
                    vec![d.terminal],
                    coords,
                    ProblemKind::Merton(Box::new(d)),
                )
            }
            EnvConfig::Lane { params } => {
                let d = lane_discretize(params).map_err(config_err("env.params"))?;
                let coords = (0..d.mdp.n_states())
                    .map(|s| {
                        let (p, v) = d.coordinates(s);
                        vec![p, v]
                    })
                    .collect();
                (
                    d.mdp.clone(),
                    d.cost.clone(),
                    StartDist::Fixed(d.index(0, 0)),
                    vec![d.goal],
                    coords,
                    ProblemKind::Lane(Box::new(d)),
                )
            }
        };
        let augmented = match &cfg.budget {
            Some(b) => Some(augment_mdp(&mdp, &cost, b).map_err(|e| match e {
                impulse_core::Error::ProductTooLarge { .. } => Failure::Runtime(format!("budget: {e}")),
                other => Failure::Config(format!("budget: {other}")),
            })?),
            None => None,
        };
        Ok(Self {
            mdp: Arc::new(mdp),
            cost,
            start,
            terminal,
            coords,
            kind,
            augmented,
        })
    }

    /// The model a learner faces: augmented when a budget is configured.
    pub fn target(&self) -> (&TabularMdp, &CostSpec) {
        match &self.augmented {
            Some(a) => (&a.mdp, &a.cost),
            None => (&self.mdp, &self.cost),
        }
    }

    /// Resolved facts about the problem for the manifest, including any
    /// defaults that come from the instance rather than the config.
    pub fn describe(&self) -> toml::Table {
        let (mdp, cost) = self.target();
        let mut t = toml::Table::new();
        t.insert("n_states".into(), (mdp.n_states() as i64).into());
        t.insert("n_actions".into(), (mdp.n_actions() as i64).into());
        t.insert("gamma".into(), mdp.gamma().into());
        t.insert("magnitudes".into(), mdp.magnitudes().to_vec().into());
        t.insert("cost".into(), format!("{:?}", self.cost).into());
        let start = match self.start {
            StartDist::Fixed(s) => format!("fixed({s})"),
            StartDist::Uniform => "uniform".into(),
        };
        t.insert("start".into(), start.into());
        t.insert(
            "terminal".into(),
            self.terminal.iter().map(|&s| s as i64).collect::<Vec<_>>().into(),
        );
        if let Some(a) = &self.augmented {
            t.insert("base_states".into(), (a.n_base as i64).into());
            t.insert("budget_delta".into(), a.delta.into());
            t.insert("augmented_cost".into(), format!("{cost:?}").into());
        }
        t
    }

    pub fn n_states(&self) -> usize {
        self.target().0.n_states()
    }

    pub fn oracle(&self, cfg: &ExperimentConfig) -> Result<ValueIteration, Failure> {
        let (mdp, cost) = self.target();
        Ok(value_iteration(mdp, cost, cfg.oracle.tol, cfg.oracle.max_iters)?)
    }

    fn base_env(&self) -> MdpEnv {
        MdpEnv::new(self.mdp.clone(), self.cost.clone())
            .with_start(self.start)
            .and_then(|e| e.with_terminal(&self.terminal))
            .expect("start and terminal states were checked")
    }

    fn state_coords(&self) -> Vec<Vec<f64>> {
        match &self.augmented {
            None => self.coords.clone(),
            Some(a) => (0..a.mdp.n_states())
                .map(|i| {
                    let (s, z) = split_index(a.n_base, i);
                    let mut c = self.coords[s].clone();
                    c.push(z as f64);
                    c
                })
                .collect(),
        }
    }
}

pub struct RunOutput {
    pub seed: u64,
    pub records: Vec<EpisodeRecord>,
    pub policy: ImpulsePolicy,
    pub values: Vec<f64>,
    pub weights: Option<WeightVector>,
}

pub fn run_seeds(cfg: &ExperimentConfig, seed: u64) -> SeedTree {
    SeedTree::new(cfg.master_seed).child(&format!("run-{seed}"))
}

pub fn run_spec(cfg: &ExperimentConfig) -> RunSpec {
    match cfg.steps {
        Some(steps) => RunSpec::steps(steps, cfg.horizon),
        None => RunSpec::episodes(cfg.episodes, cfg.horizon),
    }
}

type Learned = (Vec<EpisodeRecord>, ImpulsePolicy, Vec<f64>, Option<WeightVector>);

fn learn<E: DiscreteEnv>(
    cfg: &ExperimentConfig,
    problem: &Problem,
    env: &mut E,
    seeds: SeedTree,
    oracle: Option<&ValueFunction>,
) -> Result<Learned, Failure> {
    let run = run_spec(cfg);
    match cfg.learner.kind {
        LearnerKind::Tabular => {
            let out = train(env, &cfg.schedule, &run, seeds, oracle)?;
            Ok((out.diagnostics.episodes, out.policy, out.q.values().0, None))
        }
        LearnerKind::FlatBaseline => {
            let out = train_flat_baseline(env, &cfg.schedule, &run, seeds, oracle)?;
            Ok((out.diagnostics.episodes, out.policy, out.q.values().0, None))
        }
        LearnerKind::LinearFa => {
            let spec = cfg.learner.features.clone().unwrap_or(FeatureConfig::OneHot);
            let coords = problem.state_coords();
            let features = spec
                .build(env.n_states(), env.n_actions(), Some(&coords))
                .map_err(|e| Failure::Config(format!("learner.features: {e}")))?;
            let out = train_fa(env, &features, &cfg.schedule, &cfg.learner.fa, &run, seeds, oracle)?;
            let values = out.values(&features, false);
            Ok((out.diagnostics.episodes, out.policy, values, Some(out.weights)))
        }
        LearnerKind::Exact => {
            let vi = problem.oracle(cfg)?;
            let (mdp, cost) = problem.target();
            Ok((Vec::new(), extract_policy(mdp, cost, &vi.value), vi.value.0, None))
        }
    }
}

pub fn execute(
    cfg: &ExperimentConfig,
    problem: &Problem,
    seed: u64,
    oracle: Option<&ValueFunction>,
) -> Result<RunOutput, Failure> {
    let seeds = run_seeds(cfg, seed);
    let (records, policy, values, weights) = match &problem.augmented {
        None => learn(cfg, problem, &mut problem.base_env(), seeds, oracle)?,
        Some(a) => {
            let mut env = BudgetEnv::new(problem.base_env(), a.budget, a.delta);
            learn(cfg, problem, &mut env, seeds, oracle)?
        }
    };
    Ok(RunOutput {
        seed,
        records,
        policy,
        values,
        weights,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub mean_return: f64,
    pub mean_interventions: f64,
    /// Mean per-episode steps below `v_min` in each lane zone.
    pub zone_violations: [f64; 3],
}

/// Greedy rollouts of `policy`. Lane and Merton are simulated in their
/// continuous dynamics; tabular problems in the model itself.
pub fn evaluate(
    cfg: &ExperimentConfig,
    problem: &Problem,
    policy: &ImpulsePolicy,
    seed: u64,
) -> Result<Evaluation, Failure> {
    let act = |s: usize| policy.act(s);
    let mut rng = run_seeds(cfg, seed).stream("eval");
    let episodes = cfg.eval_episodes.max(1);
    let mut ev = Evaluation::default();
    match &problem.kind {
        ProblemKind::Lane(d) => {
            // Deterministic dynamics: one rollout is exact.
            let r = lane_rollout(d, act)?;
            ev.mean_return = r.ret;
            ev.mean_interventions = r.interventions as f64;
            for k in 0..3 {
                ev.zone_violations[k] = r.zone_violations[k] as f64;
            }
            return Ok(ev);
        }
        ProblemKind::Merton(d) => {
            for _ in 0..episodes {
                let (ret, k) = merton_rollout(d, act, &mut rng)?;
                ev.mean_return += ret;
                ev.mean_interventions += k as f64;
            }
        }
        ProblemKind::Tabular => {
            let mut base;
            let mut wrapped;
            let env: &mut dyn DiscreteEnv = match &problem.augmented {
                None => {
                    base = problem.base_env();
                    &mut base
                }
                Some(a) => {
                    wrapped = BudgetEnv::new(problem.base_env(), a.budget, a.delta);
                    &mut wrapped
                }
            };
            for _ in 0..episodes {
                let mut s = env.reset(&mut rng);
                for _ in 0..cfg.horizon {
                    let mut a = act(s);
                    if !env.can_intervene() {
                        a = Action::NULL;
                    }
                    let step = env.step(a, &mut rng)?;
                    ev.mean_return += step.sample.net();
                    ev.mean_interventions += step.sample.intervened as u32 as f64;
                    s = step.sample.next_state;
                    if step.done {
                        break;
                    }
                }
            }
        }
    }
    ev.mean_return /= episodes as f64;
    ev.mean_interventions /= episodes as f64;
    Ok(ev)
}
