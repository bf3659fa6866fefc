use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability {0} outside (0, 1]")]
    InvalidProbability(f64),

    #[error("transition probability {0} is negative")]
    NegativeTransition(f64),

    #[error("invalid model: {}", join(.0))]
    InvalidModel(Vec<Violation>),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("trail has {episodes} episodes but the model only has {states} states")]
    TrailTooLong { episodes: usize, states: usize },

    #[error("search space of {count} arrangements exceeds the cap of {cap}")]
    CapExceeded { count: String, cap: u64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("no feasible arrangement: all {scored} scored arrangements are impossible ({pruned} pruned)")]
    NoFeasibleArrangement { scored: u64, pruned: u64 },

    #[error("invalid real-valued input: {0}")]
    InvalidObservation(String),

    #[error("invalid cost matrix: {0}")]
    InvalidCostMatrix(String),

    #[error("exact tour oracle supports at most {max} nodes, got {got}")]
    TooManyNodes { got: usize, max: usize },
}

fn join(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
