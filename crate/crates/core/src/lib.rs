//! Randomized permutation search.
//!
//! Fits an ordered sequence of distinct states to a trail of noisy
//! observation sets (the travelling photographer problem) by scoring every
//! candidate arrangement with a stack of randomized activations, clique-product
//! rollouts and a simulated attention decoder, with a data-dependent inclusion
//! filter to prune the search. The same machinery, applied to edge and node
//! scores, gives a partition-and-concatenate heuristic and a 2-opt improvement
//! heuristic for the travelling salesman problem.

pub mod activation;
pub mod arrangement;
pub mod attention;
pub mod config;
pub mod dropout;
pub mod error;
pub mod model;
pub mod real_valued;
pub mod rng;
pub mod rollout;
pub mod solver;
pub mod tsp;

#[cfg(test)]
mod fixtures;

pub use error::{Error, Result};
