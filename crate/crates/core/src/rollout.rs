//! Pseudo state rollout: compress one state-versus-episode match into a
//! single score.
//!
//! The activations of an episode's tokens are combined through the product of
//! every size-k clique (unordered subset), each clique weighted by
//! `e^(1 / #cliques)`; the cube root of that product is then scaled by the
//! number of tokens. Everything is carried in the log domain.

use crate::activation::{rollout_activation, ActivationSpec};
use crate::config::MlaaConfig;
use crate::model::{LogScore, ObservationTrail, TppModel};
use crate::rng::{tag, RngStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutScore {
    pub log: LogScore,
    pub tokens: usize,
}

impl RolloutScore {
    pub const fn impossible(tokens: usize) -> Self {
        Self {
            log: LogScore::IMPOSSIBLE,
            tokens,
        }
    }
}

/// `n choose k` as a float; exact for the small sizes used here.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Calls `f` with every k-subset of `0..n` in lexicographic order.
pub fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Log-domain clique score of a list of positive activations:
/// `(1/3) * sum over k-subsets of (sum of log members + 1/C(n,k)) + ln n`,
/// with `k = min(clique_size, n)`.
pub fn clique_log_score(activations: &[f64], clique_size: usize) -> f64 {
    let n = activations.len();
    if n == 0 {
        return f64::NEG_INFINITY;
    }
    let k = clique_size.clamp(1, n);
    let logs: Vec<f64> = activations.iter().map(|a| a.ln()).collect();
    let constant = 1.0 / binomial(n, k);
    let mut log_value = 0.0;
    for_each_subset(n, k, |clique| {
        log_value += clique.iter().map(|&i| logs[i]).sum::<f64>() + constant;
    });
    log_value / 3.0 + (n as f64).ln()
}

/// Score of `state` producing `episode`; impossible when the state cannot
/// emit one of the tokens. Activations are drawn once per episode.
pub fn pseudo_state_rollout(
    episode: &[String],
    state: usize,
    model: &TppModel,
    clique_size: usize,
    spec: &ActivationSpec,
    rng: &RngStream,
) -> RolloutScore {
    match rollout_activation(episode, state, model, spec, rng) {
        Some(acts) => RolloutScore {
            log: LogScore(clique_log_score(&acts, clique_size)),
            tokens: episode.len(),
        },
        None => RolloutScore::impossible(episode.len()),
    }
}

/// Key of the rollout draws for `state` at episode `t` within one repetition.
pub fn rollout_key(rep: &RngStream, t: usize, state: usize) -> RngStream {
    rep.derive(&[tag::ROLLOUT, t as u64, state as u64])
}

/// Rollout score of every episode against the state the arrangement assigns
/// to it.
pub fn episode_scores(
    trail: &ObservationTrail,
    arrangement: &[usize],
    model: &TppModel,
    config: &MlaaConfig,
    rng: &RngStream,
) -> Vec<RolloutScore> {
    trail
        .episodes()
        .iter()
        .zip(arrangement)
        .enumerate()
        .map(|(t, (episode, &s))| {
            pseudo_state_rollout(
                episode,
                s,
                model,
                config.clique_size,
                &config.rollout,
                &rollout_key(rng, t, s),
            )
        })
        .collect()
}
