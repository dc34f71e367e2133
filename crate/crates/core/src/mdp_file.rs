//! Text format for MDP definitions.
//!
//! ```toml
//! n_states = 2
//! n_actions = 1
//! gamma = 0.9
//! magnitudes = [1.0]              # one per non-null action
//! transition = [                  # [branch][state][next_state], branch 0 = null
//!   [[1.0, 0.0], [0.0, 1.0]],
//!   [[0.0, 1.0], [0.0, 1.0]],
//! ]
//! reward = [[0.0, 1.0], [0.0, 1.0]]   # [branch][state]
//!
//! [cost]
//! form = "fixed"                  # zero | fixed | fixed_plus_proportional
//! kappa = 0.2
//! lambda = 0.0
//! ```
//!
//! Floats are written in shortest round-trip form, so load → save → load is
//! the identity.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{CostConfig, CostSpec, TabularMdp};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpFile {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    #[serde(default)]
    magnitudes: Option<Vec<f64>>,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    cost: CostConfig,
}

pub fn parse_mdp(text: &str) -> Result<(TabularMdp, CostSpec)> {
    let file: MdpFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if file.transition.len() != file.n_actions + 1 {
        return Err(Error::Parse(format!(
            "transition has {} branches, expected n_actions + 1 = {}",
            file.transition.len(),
            file.n_actions + 1
        )));
    }
    if file.transition.first().map_or(0, Vec::len) != file.n_states {
        return Err(Error::Parse(format!(
            "transition blocks must have n_states = {} rows",
            file.n_states
        )));
    }
    let mut mdp = TabularMdp::from_dense(file.gamma, &file.transition, &file.reward)?;
    if let Some(m) = file.magnitudes {
        mdp = mdp.with_magnitudes(m)?;
    }
    let mdp = mdp.validated()?;
    let cost = file.cost.to_spec()?;
    Ok((mdp, cost))
}

pub fn render_mdp(mdp: &TabularMdp, cost: &CostSpec) -> Result<String> {
    let file = MdpFile {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        gamma: mdp.gamma(),
        magnitudes: Some(mdp.magnitudes().to_vec()),
        transition: mdp.dense_transition(),
        reward: mdp.dense_reward(),
        cost: CostConfig::try_from(cost)?,
    };
    toml::to_string(&file).map_err(|e| Error::Parse(e.to_string()))
}

pub fn load_mdp(path: impl AsRef<Path>) -> Result<(TabularMdp, CostSpec)> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::Parse(format!("{}: {e}", path.as_ref().display())))?;
    parse_mdp(&text)
}

pub fn save_mdp(path: impl AsRef<Path>, mdp: &TabularMdp, cost: &CostSpec) -> Result<()> {
    std::fs::write(path.as_ref(), render_mdp(mdp, cost)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.as_ref().display())))
}
