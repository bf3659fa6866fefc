//! Real-valued variant: each episode is a vector of readings and each state
//! carries one distribution per reading index.
//!
//! Episode scores multiply [`model_heuristic`] activations over every
//! 3-subset of indices. States are paired for the inclusion filter by the
//! reciprocal energy distance between their per-index distributions, and
//! arrangements are decoded with first-order attention.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::activation::{energy_distance, model_heuristic, DistModel, EPSILON};
use crate::attention::TransitionPolicy;
use crate::config::{AttentionOrder, MlaaConfig};
use crate::dropout::{predicate_from_capacity, CapacityMatrix, DropoutPredicate};
use crate::error::{Error, Result};
use crate::model::{check_search_space, TppModel};
use crate::rng::{tag, RngStream};
use crate::rollout::for_each_subset;
use crate::solver::{repetition_stream, search_relaxed, vote_over, ScoringTables, SolveResult};

/// Subset size of the real-valued rollout.
pub const INDEX_CLIQUE: usize = 3;

/// States with per-index observation distributions and a transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealValuedModel {
    pub states: Vec<String>,
    /// `distributions[s][i]`: distribution of reading `i` under state `s`.
    pub distributions: Vec<Vec<DistModel>>,
    pub transitions: Vec<Vec<f64>>,
}

/// Ordered episodes of real-valued readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealTrail {
    pub episodes: Vec<Vec<f64>>,
}

impl RealTrail {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }
}

impl RealValuedModel {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// Discrete view with empty emission tables, used for the transition
    /// checks and tables.
    fn skeleton(&self) -> TppModel {
        TppModel {
            states: self.states.clone(),
            emissions: vec![BTreeMap::new(); self.states.len()],
            transitions: self.transitions.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.skeleton().validate()?;
        if self.distributions.len() != self.states.len() {
            return Err(Error::InvalidObservation(format!(
                "{} distribution lists for {} states",
                self.distributions.len(),
                self.states.len()
            )));
        }
        for (state, dists) in self.states.iter().zip(&self.distributions) {
            for (i, d) in dists.iter().enumerate() {
                let ok = match d {
                    DistModel::Gaussian { mean, std } => {
                        mean.is_finite() && std.is_finite() && *std >= 0.0
                    }
                    DistModel::Samples(xs) => !xs.is_empty() && xs.iter().all(|x| x.is_finite()),
                };
                if !ok {
                    return Err(Error::InvalidObservation(format!(
                        "state {state:?} has an invalid distribution at index {i}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks that every episode is non-empty, finite and covered by every
    /// state's distributions.
    pub fn check_trail(&self, trail: &RealTrail) -> Result<()> {
        if trail.is_empty() {
            return Err(Error::InvalidObservation("trail has no episodes".into()));
        }
        let dims = self.distributions.iter().map(Vec::len).min().unwrap_or(0);
        for (t, e) in trail.episodes.iter().enumerate() {
            if e.is_empty() || e.len() > dims {
                return Err(Error::InvalidObservation(format!(
                    "episode {t} has {} readings; states model {dims}",
                    e.len()
                )));
            }
            if e.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidObservation(format!(
                    "episode {t} has a non-finite reading"
                )));
            }
        }
        Ok(())
    }
}

/// Log score of `state` for one episode: the sum over index subsets of the
/// log activations of their members. Fewer than three readings use a single
/// subset of all of them.
pub fn real_rollout(
    model: &RealValuedModel,
    state: usize,
    episode: &[f64],
    config: &MlaaConfig,
) -> f64 {
    let dists = &model.distributions[state];
    let logs: Vec<f64> = episode
        .iter()
        .zip(dists)
        .map(|(&x, d)| {
            model_heuristic(d, x, config.heuristic_thresh, config.heuristic_mode)
                .max(EPSILON)
                .ln()
        })
        .collect();
    let k = INDEX_CLIQUE.min(logs.len());
    let mut total = 0.0;
    for_each_subset(logs.len(), k, |subset| {
        total += subset.iter().map(|&i| logs[i]).sum::<f64>();
    });
    total
}

/// Samples standing in for a distribution: the sample set itself, or draws
/// from the Gaussian keyed by `(state, index)`.
fn sample_view(dist: &DistModel, count: usize, rng: &RngStream) -> Vec<f64> {
    match dist {
        DistModel::Samples(xs) => xs.clone(),
        DistModel::Gaussian { mean, std } => rng.sampler().normals(*mean, *std, count),
    }
}

/// Pairing strength of two states on one reading index.
pub fn real_dropout_activation(a: &[f64], b: &[f64]) -> f64 {
    1.0 / energy_distance(a, b).max(EPSILON)
}

/// Capacity from every reading of every episode, accumulated over all state
/// pairs.
pub fn real_capacity(
    model: &RealValuedModel,
    trail: &RealTrail,
    config: &MlaaConfig,
    rng: &RngStream,
) -> CapacityMatrix {
    let n = model.n_states();
    let dims = trail.episodes.iter().map(Vec::len).max().unwrap_or(0);
    let views: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|s| {
            (0..dims)
                .map(|i| {
                    sample_view(
                        &model.distributions[s][i],
                        config.real_dropout_samples,
                        &rng.derive(&[s as u64, i as u64]),
                    )
                })
                .collect()
        })
        .collect();
    let mut pair_act = vec![vec![vec![0.0; dims]; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            for i in 0..dims {
                pair_act[a][b][i] = real_dropout_activation(&views[a][i], &views[b][i]);
            }
        }
    }
    let mut cap = CapacityMatrix::zeros(n);
    for episode in &trail.episodes {
        for (a, row) in pair_act.iter().enumerate() {
            for (b, acts) in row.iter().enumerate().skip(a + 1) {
                let w: f64 = acts[..episode.len()].iter().sum();
                cap.0[a][b] += w;
                cap.0[b][a] += w;
            }
        }
    }
    cap
}

/// Best arrangement of `model`'s states for a real-valued trail.
pub fn solve_real_valued(
    model: &RealValuedModel,
    trail: &RealTrail,
    config: &MlaaConfig,
) -> Result<SolveResult> {
    config.check()?;
    model.validate()?;
    model.check_trail(trail)?;
    let n = model.n_states();
    let t = trail.len();
    check_search_space(n, t, config.cap)?;
    let skeleton = model.skeleton();
    let rollout: Vec<f64> = (0..t * n)
        .map(|i| real_rollout(model, i % n, &trail.episodes[i / n], config))
        .collect();
    vote_over(config.repetitions, n, |rep| {
        let stream = repetition_stream(config.seed, rep);
        let predicate = if config.dropout_enabled {
            let cap = real_capacity(model, trail, config, &stream.child(tag::REAL_DROPOUT));
            predicate_from_capacity(
                &cap,
                &model.transitions,
                &vec![true; n],
                t,
                config.literal_pop,
            )
        } else {
            DropoutPredicate::always()
        };
        let policy = TransitionPolicy::from_config(config);
        let tables = ScoringTables::with_rollouts(&skeleton, rollout.clone(), t, &policy, &stream);
        let result = search_relaxed(&tables, AttentionOrder::First, &predicate)?;
        Ok((result, tables, AttentionOrder::First))
    })
}
