//! Experiment configuration.
//!
//! ```toml
//! seeds = [1, 2]
//! master_seed = 0
//! episodes = 2000
//! horizon = 100
//!
//! [env]
//! kind = "instance"        # instance | file | merton | lane
//! name = "chain2"
//!
//! [learner]
//! kind = "tabular"         # tabular | flat_baseline | linear_fa | exact
//!
//! [schedule]
//! alpha0 = 1.0
//! ```
//!
//! Every block except `[env]` is optional. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use impulse_core::budget::BudgetSpec;
use impulse_core::envs::lane::LaneParams;
use impulse_core::envs::merton::{MertonGrid, MertonParams};
use impulse_core::fa::{FaSchedule, FeatureConfig};
use impulse_core::mdp::CostConfig;
use impulse_core::qlearn::LearnSchedule;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    /// Total step budget; overrides `episodes` when set.
    #[serde(default)]
    pub steps: Option<u64>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Greedy evaluation rollouts per run, used by `sweep`.
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub env: EnvConfig,
    #[serde(default)]
    pub cost: Option<CostConfig>,
    #[serde(default)]
    pub budget: Option<BudgetSpec>,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub schedule: LearnSchedule,
    #[serde(default)]
    pub oracle: OracleConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_episodes() -> usize {
    1000
}

fn default_horizon() -> usize {
    100
}

fn default_eval_episodes() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    /// A registered instance: `chain2`, `drift3`, `machine4`, `ladder5`,
    /// `random3`, `chain(n)` or `random(seed, n, m)`.
    Instance {
        name: String,
        /// Fixed start state; uniform when absent.
        #[serde(default)]
        start: Option<usize>,
        #[serde(default)]
        terminal: Vec<usize>,
    },
    /// An MDP in the TOML file format.
    File {
        path: PathBuf,
        #[serde(default)]
        start: Option<usize>,
        #[serde(default)]
        terminal: Vec<usize>,
    },
    Merton {
        #[serde(default)]
        params: MertonParams,
        #[serde(default)]
        grid: MertonGrid,
    },
    Lane {
        #[serde(default)]
        params: LaneParams,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    #[serde(default)]
    pub kind: LearnerKind,
    #[serde(default)]
    pub features: Option<FeatureConfig>,
    #[serde(default)]
    pub fa: FaSchedule,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    #[default]
    Tabular,
    FlatBaseline,
    LinearFa,
    /// No learning: the exact dynamic-programming policy.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub tol: f64,
    pub max_iters: usize,
    /// Report the sup-norm gap to `v*` in training curves.
    pub gap: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 1_000_000,
            gap: true,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let cfg: Self = toml::from_str(text).map_err(|e| Failure::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_value(value: toml::Value) -> Result<Self, Failure> {
        let cfg: Self = value
            .try_into()
            .map_err(|e: toml::de::Error| Failure::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|f| match f {
            Failure::Config(m) => Failure::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks that need more than the schema.
    pub fn check(&self) -> Result<(), Failure> {
        let bad = |m: String| Err(Failure::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds: at least one seed is required".into());
        }
        if self.horizon == 0 {
            return bad("horizon: must be positive".into());
        }
        self.schedule
            .validate()
            .map_err(|e| Failure::Config(format!("schedule: {e}")))?;
        if self.learner.kind == LearnerKind::LinearFa {
            self.learner
                .fa
                .validate()
                .map_err(|e| Failure::Config(format!("learner.fa: {e}")))?;
        }
        if let Some(b) = &self.budget {
            b.validate().map_err(|e| Failure::Config(format!("budget: {e}")))?;
            if matches!(self.env, EnvConfig::Merton { .. } | EnvConfig::Lane { .. }) {
                return bad("budget: only tabular instance and file environments support a budget".into());
            }
        }
        if let Some(c) = &self.cost {
            if matches!(self.env, EnvConfig::Merton { .. } | EnvConfig::Lane { .. }) {
                return bad("cost: merton and lane define their own costs; set them under env.params".into());
            }
            c.to_spec().map_err(|e| Failure::Config(format!("cost: {e}")))?;
        }
        match &self.env {
            EnvConfig::Merton { params, .. } => params
                .validate()
                .map_err(|e| Failure::Config(format!("env.params: {e}")))?,
            EnvConfig::Lane { params } => params
                .validate()
                .map_err(|e| Failure::Config(format!("env.params: {e}")))?,
            _ => {}
        }
        Ok(())
    }

    /// The config with every default written out.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
