//! Simulated attention decoders.
//!
//! Both decoders multiply (add, in the log domain) activated two-step
//! transition likelihoods with per-episode rollout scores:
//!
//! * first order: `cbrt(prod_t a_t e^(1/T) * p_last) * prod_t rollout_t`
//! * second order (2-sequence): `prod_t cbrt(a_t) * rollout_t * rollout_{t+1} * e^(1/T)`
//!
//! where `a_t` activates `Pr(s_{t+1}|s_t) Pr(s_{t+2}|s_{t+1})` and `p_last`
//! is the raw final transition probability.

use crate::activation::{transition_activation, ActivationSpec};
use crate::arrangement::StateArrangement;
use crate::config::{AttentionOrder, MlaaConfig};
use crate::model::{LogScore, ObservationTrail, TppModel};
use crate::rng::{tag, RngStream};
use crate::rollout::{episode_scores, RolloutScore};

/// `Pr(s_{t+1} | s_t)` along an arrangement.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionVector(pub Vec<f64>);

impl TransitionVector {
    pub fn of(model: &TppModel, arrangement: &[usize]) -> Self {
        Self(
            arrangement
                .windows(2)
                .map(|w| model.transition(w[0], w[1]))
                .collect(),
        )
    }
}

/// How activated transitions enter the log-domain score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionPolicy {
    pub spec: ActivationSpec,
    pub soft: bool,
}

impl TransitionPolicy {
    pub fn from_config(config: &MlaaConfig) -> Self {
        Self {
            spec: config.transition,
            soft: config.soft_transitions,
        }
    }

    /// Log of the activated two-step product `tp`.
    pub fn pair_log(&self, tp: f64, rng: &RngStream) -> f64 {
        match transition_activation(tp, &self.spec, rng) {
            Ok(act) if act.impossible && !self.soft => f64::NEG_INFINITY,
            Ok(act) => act.value.ln(),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Log of the raw final transition probability.
    pub fn final_log(&self, p: f64) -> f64 {
        if p <= 0.0 && self.soft {
            self.spec.thresh.ln()
        } else {
            p.ln()
        }
    }
}

/// Key of the two-step activation for states `(a, b, c)` at position `t`.
pub fn pair_key(rep: &RngStream, t: usize, a: usize, b: usize, c: usize) -> RngStream {
    rep.derive(&[tag::TRANSITION, t as u64, a as u64, b as u64, c as u64])
}

fn any_impossible(xs: &[f64]) -> bool {
    xs.iter().any(|&x| x == f64::NEG_INFINITY || x.is_nan())
}

/// First-order decoder over pre-activated inputs. `pair_logs[t]` is the log
/// activation of the two-step product at `t` (length `T - 2`), `final_log`
/// the log of the last transition and `rollouts` the per-episode scores.
pub fn first_order_from_logs(pair_logs: &[f64], final_log: f64, rollouts: &[f64]) -> f64 {
    let episodes = rollouts.len();
    if any_impossible(rollouts) || any_impossible(pair_logs) {
        return f64::NEG_INFINITY;
    }
    let rollout_sum: f64 = rollouts.iter().sum();
    if episodes < 2 {
        return rollout_sum;
    }
    if final_log == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let norm = 1.0 / episodes as f64;
    let mut transition_log = 0.0;
    for &a in pair_logs {
        transition_log += a + norm;
    }
    transition_log += final_log;
    transition_log / 3.0 + rollout_sum
}

/// Two-sequence decoder over pre-activated inputs. Term `t` pairs rollouts
/// `t` and `t + 1` with the activated two-step product at `t`; the last term
/// uses the raw final transition.
pub fn two_sequence_from_logs(pair_logs: &[f64], final_log: f64, rollouts: &[f64]) -> f64 {
    let episodes = rollouts.len();
    if any_impossible(rollouts) || any_impossible(pair_logs) {
        return f64::NEG_INFINITY;
    }
    if episodes < 2 {
        return rollouts.iter().sum();
    }
    if final_log == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let norm = 1.0 / episodes as f64;
    let mut overall = 0.0;
    for t in 0..episodes - 1 {
        let transition = if t + 2 < episodes {
            pair_logs[t]
        } else {
            final_log
        };
        overall += transition / 3.0 + rollouts[t] + rollouts[t + 1] + norm;
    }
    overall
}

pub(crate) fn decode(
    order: AttentionOrder,
    pair_logs: &[f64],
    final_log: f64,
    rollouts: &[f64],
) -> f64 {
    match order {
        AttentionOrder::First => first_order_from_logs(pair_logs, final_log, rollouts),
        AttentionOrder::Second => two_sequence_from_logs(pair_logs, final_log, rollouts),
    }
}

fn rollout_logs(rollouts: &[RolloutScore]) -> Vec<f64> {
    rollouts.iter().map(|r| r.log.value()).collect()
}

fn standalone_pair_logs(
    transitions: &TransitionVector,
    policy: &TransitionPolicy,
    rng: &RngStream,
) -> Vec<f64> {
    transitions
        .0
        .windows(2)
        .enumerate()
        .map(|(t, w)| policy.pair_log(w[0] * w[1], &rng.derive(&[tag::TRANSITION, t as u64])))
        .collect()
}

/// First-order attention with activations keyed by position only.
pub fn first_order_attention(
    transitions: &TransitionVector,
    rollouts: &[RolloutScore],
    policy: &TransitionPolicy,
    rng: &RngStream,
) -> LogScore {
    let pairs = standalone_pair_logs(transitions, policy, rng);
    let last = transitions.0.last().map_or(0.0, |&p| policy.final_log(p));
    LogScore(first_order_from_logs(&pairs, last, &rollout_logs(rollouts)))
}

/// Two-sequence attention with activations keyed by position only.
pub fn two_sequence_attention(
    transitions: &TransitionVector,
    rollouts: &[RolloutScore],
    policy: &TransitionPolicy,
    rng: &RngStream,
) -> LogScore {
    let pairs = standalone_pair_logs(transitions, policy, rng);
    let last = transitions.0.last().map_or(0.0, |&p| policy.final_log(p));
    LogScore(two_sequence_from_logs(
        &pairs,
        last,
        &rollout_logs(rollouts),
    ))
}

/// Score of one arrangement. Draws are keyed by `(episode, state)` for
/// rollouts and `(position, state triple)` for transitions, so the value is
/// identical to the solver's table lookups for the same repetition stream.
pub fn sequence_score(
    trail: &ObservationTrail,
    arrangement: &StateArrangement,
    model: &TppModel,
    config: &MlaaConfig,
    rng: &RngStream,
) -> LogScore {
    let arr = arrangement.as_slice();
    let rollouts = rollout_logs(&episode_scores(trail, arr, model, config, rng));
    let policy = TransitionPolicy::from_config(config);
    let transitions = TransitionVector::of(model, arr);
    let pair_logs: Vec<f64> = arr
        .windows(3)
        .enumerate()
        .map(|(t, w)| {
            let tp = transitions.0[t] * transitions.0[t + 1];
            policy.pair_log(tp, &pair_key(rng, t, w[0], w[1], w[2]))
        })
        .collect();
    let final_log = transitions.0.last().map_or(0.0, |&p| policy.final_log(p));
    LogScore(decode(config.attention, &pair_logs, final_log, &rollouts))
}
