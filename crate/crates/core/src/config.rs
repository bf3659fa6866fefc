use serde::{Deserialize, Serialize};

use crate::activation::{ActivationSpec, HeuristicMode};
use crate::error::{Error, Result};
use crate::model::DEFAULT_ARRANGEMENT_CAP;

/// Which simulated attention decoder combines transitions and rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionOrder {
    #[default]
    First,
    Second,
}

impl std::fmt::Display for AttentionOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttentionOrder::First => "first",
            AttentionOrder::Second => "second",
        })
    }
}

impl std::str::FromStr for AttentionOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(AttentionOrder::First),
            "second" => Ok(AttentionOrder::Second),
            other => Err(Error::InvalidConfig(format!(
                "unknown attention order {other:?}"
            ))),
        }
    }
}

/// Full configuration of the permutation search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlaaConfig {
    pub clique_size: usize,
    pub attention: AttentionOrder,
    pub rollout: ActivationSpec,
    pub transition: ActivationSpec,
    pub dropout: ActivationSpec,
    pub dropout_enabled: bool,
    pub repetitions: usize,
    pub seed: u64,
    /// Keep the minimum-weight state from each spanning-tree ranking instead
    /// of the most central one.
    pub literal_pop: bool,
    /// Zero-probability transitions score as the transition floor instead of
    /// making the arrangement impossible.
    pub soft_transitions: bool,
    /// Gaussian branch of the real-valued observation heuristic.
    pub heuristic_mode: HeuristicMode,
    /// Threshold used by [`HeuristicMode::Literal`].
    pub heuristic_thresh: f64,
    /// Samples drawn from a Gaussian observation model when comparing two
    /// states' distributions by energy distance.
    pub real_dropout_samples: usize,
    /// Refuse searches larger than this many arrangements.
    pub cap: u64,
}

impl Default for MlaaConfig {
    fn default() -> Self {
        Self {
            clique_size: 3,
            attention: AttentionOrder::First,
            rollout: ActivationSpec::rollout(),
            transition: ActivationSpec::transition(),
            dropout: ActivationSpec::dropout(),
            dropout_enabled: true,
            repetitions: 1,
            seed: 0,
            literal_pop: false,
            soft_transitions: false,
            heuristic_mode: HeuristicMode::Closeness,
            heuristic_thresh: 3.0,
            real_dropout_samples: 32,
            cap: DEFAULT_ARRANGEMENT_CAP,
        }
    }
}

impl MlaaConfig {
    pub fn check(&self) -> Result<()> {
        if self.clique_size == 0 {
            return Err(Error::InvalidConfig(
                "clique_size must be at least 1".into(),
            ));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig(
                "repetitions must be at least 1".into(),
            ));
        }
        if self.real_dropout_samples == 0 {
            return Err(Error::InvalidConfig(
                "real_dropout_samples must be at least 1".into(),
            ));
        }
        self.rollout.check()?;
        self.transition.check()?;
        self.dropout.check()
    }
}
