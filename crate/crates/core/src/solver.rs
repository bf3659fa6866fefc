//! Permutation search: enumerate the admitted arrangements, score each one
//! through the attention stack and keep the best, then repeat with fresh
//! activations and take a per-position majority vote.
//!
//! Within a repetition every stochastic quantity is keyed by its position and
//! the states involved, so it can be drawn once into a lookup table and
//! reused by every arrangement that touches it. Scores read from the tables
//! are bit-identical to [`sequence_score`](crate::attention::sequence_score)
//! under the same repetition stream.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::arrangement::{LexArrangements, StateArrangement};
use crate::attention::{decode, pair_key, TransitionPolicy};
use crate::config::{AttentionOrder, MlaaConfig};
use crate::dropout::{dropout_function, DropoutOptions, DropoutPredicate};
use crate::error::{Error, Result};
use crate::model::{check_search_space, LogScore, ObservationTrail, TppModel};
use crate::rng::{tag, RngStream};
use crate::rollout::{pseudo_state_rollout, rollout_key};

/// Stream of repetition `rep` under `seed`.
pub fn repetition_stream(seed: u64, rep: usize) -> RngStream {
    RngStream::new(seed).derive(&[tag::REPETITION, rep as u64])
}

/// Pre-drawn log-domain inputs of the decoders for one repetition.
#[derive(Debug, Clone)]
pub struct ScoringTables {
    n: usize,
    episodes: usize,
    /// `rollout[t * n + s]`
    rollout: Vec<f64>,
    /// `pair[((t * n + a) * n + b) * n + c]` for `t < episodes - 2`
    pair: Vec<f64>,
    /// `final_log[a * n + b]`
    final_log: Vec<f64>,
}

impl ScoringTables {
    /// Assembles tables from caller-supplied rollout scores; the transition
    /// entries are drawn from `model` under `rep`.
    pub fn with_rollouts(
        model: &TppModel,
        rollout: Vec<f64>,
        episodes: usize,
        policy: &TransitionPolicy,
        rep: &RngStream,
    ) -> Self {
        let n = model.n_states();
        assert_eq!(rollout.len(), n * episodes, "rollout table shape");
        let pair_positions = episodes.saturating_sub(2);
        let mut pair = vec![f64::NEG_INFINITY; pair_positions * n * n * n];
        pair.par_chunks_mut(n * n * n)
            .enumerate()
            .for_each(|(t, block)| {
                for a in 0..n {
                    for b in 0..n {
                        if a == b {
                            continue;
                        }
                        let ab = model.transition(a, b);
                        for c in 0..n {
                            if c == a || c == b {
                                continue;
                            }
                            let tp = ab * model.transition(b, c);
                            block[(a * n + b) * n + c] =
                                policy.pair_log(tp, &pair_key(rep, t, a, b, c));
                        }
                    }
                }
            });
        let mut final_log = vec![f64::NEG_INFINITY; n * n];
        for a in 0..n {
            for b in 0..n {
                final_log[a * n + b] = policy.final_log(model.transition(a, b));
            }
        }
        Self {
            n,
            episodes,
            rollout,
            pair,
            final_log,
        }
    }

    /// Tables for the discrete model.
    pub fn discrete(
        model: &TppModel,
        trail: &ObservationTrail,
        config: &MlaaConfig,
        rep: &RngStream,
    ) -> Self {
        let n = model.n_states();
        let episodes = trail.len();
        let rollout: Vec<f64> = (0..episodes * n)
            .into_par_iter()
            .map(|i| {
                let (t, s) = (i / n, i % n);
                pseudo_state_rollout(
                    &trail.episodes()[t],
                    s,
                    model,
                    config.clique_size,
                    &config.rollout,
                    &rollout_key(rep, t, s),
                )
                .log
                .value()
            })
            .collect();
        Self::with_rollouts(
            model,
            rollout,
            episodes,
            &TransitionPolicy::from_config(config),
            rep,
        )
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    /// Decoded score of `arr`, using `rollouts` and `pairs` as scratch space.
    fn score_into(
        &self,
        order: AttentionOrder,
        arr: &[usize],
        rollouts: &mut Vec<f64>,
        pairs: &mut Vec<f64>,
    ) -> f64 {
        let n = self.n;
        rollouts.clear();
        rollouts.extend(
            arr.iter()
                .enumerate()
                .map(|(t, &s)| self.rollout[t * n + s]),
        );
        pairs.clear();
        pairs.extend(
            arr.windows(3)
                .enumerate()
                .map(|(t, w)| self.pair[((t * n + w[0]) * n + w[1]) * n + w[2]]),
        );
        let last = match arr {
            [.., a, b] => self.final_log[a * n + b],
            _ => 0.0,
        };
        decode(order, pairs, last, rollouts)
    }

    /// Decoded score of one arrangement.
    pub fn score(&self, order: AttentionOrder, arr: &[usize]) -> f64 {
        self.score_into(order, arr, &mut Vec::new(), &mut Vec::new())
    }
}

/// Best admitted arrangement of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepetitionResult {
    pub arrangement: StateArrangement,
    pub score: LogScore,
    pub must_traverse: Vec<usize>,
    /// The predicate excluded every feasible arrangement and was dropped.
    pub relaxed: bool,
    pub scored: u64,
    pub pruned: u64,
}

struct PartitionBest {
    best: Option<(f64, Vec<usize>)>,
    scored: u64,
    pruned: u64,
}

/// Lexicographic argmax over the admitted arrangements of `0..n` of length
/// `tables.episodes()`. Only finite scores can win.
pub fn search(
    tables: &ScoringTables,
    order: AttentionOrder,
    predicate: &DropoutPredicate,
) -> Result<RepetitionResult> {
    let (best, scored, pruned) = argmax_where(tables, order, |arr| predicate.admits(arr));
    match best {
        Some((value, arr)) => Ok(RepetitionResult {
            arrangement: StateArrangement(arr),
            score: LogScore(value),
            must_traverse: predicate.must_traverse().to_vec(),
            relaxed: false,
            scored,
            pruned,
        }),
        None => Err(Error::NoFeasibleArrangement { scored, pruned }),
    }
}

/// Like [`search`], but when the predicate excludes every feasible
/// arrangement the excluded ones are scored as well and the predicate is
/// dropped from the result.
pub fn search_relaxed(
    tables: &ScoringTables,
    order: AttentionOrder,
    predicate: &DropoutPredicate,
) -> Result<RepetitionResult> {
    match search(tables, order, predicate) {
        Err(Error::NoFeasibleArrangement { scored, pruned })
            if !predicate.must_traverse().is_empty() =>
        {
            let (best, rest, _) = argmax_where(tables, order, |arr| !predicate.admits(arr));
            let scored = scored + rest;
            debug_assert_eq!(rest, pruned);
            match best {
                Some((value, arr)) => Ok(RepetitionResult {
                    arrangement: StateArrangement(arr),
                    score: LogScore(value),
                    must_traverse: Vec::new(),
                    relaxed: true,
                    scored,
                    pruned: 0,
                }),
                None => Err(Error::NoFeasibleArrangement { scored, pruned: 0 }),
            }
        }
        other => other,
    }
}

type Candidate = Option<(f64, Vec<usize>)>;

/// Lexicographic argmax over the arrangements accepted by `keep`, with the
/// accepted and rejected counts.
fn argmax_where<P>(tables: &ScoringTables, order: AttentionOrder, keep: P) -> (Candidate, u64, u64)
where
    P: Fn(&[usize]) -> bool + Sync,
{
    let (n, t) = (tables.n, tables.episodes);
    let partitions: Vec<PartitionBest> = (0..n)
        .into_par_iter()
        .map(|first| {
            let mut cursor = LexArrangements::with_first(n, t, first);
            let (mut rollouts, mut pairs) = (Vec::with_capacity(t), Vec::with_capacity(t));
            let mut out = PartitionBest {
                best: None,
                scored: 0,
                pruned: 0,
            };
            let mut best_value = f64::NEG_INFINITY;
            while let Some(arr) = cursor.advance() {
                if !keep(arr) {
                    out.pruned += 1;
                    continue;
                }
                out.scored += 1;
                let value = tables.score_into(order, arr, &mut rollouts, &mut pairs);
                if value > best_value {
                    best_value = value;
                    out.best = Some((value, arr.to_vec()));
                }
            }
            out
        })
        .collect();

    let (mut scored, mut pruned) = (0, 0);
    let mut best: Candidate = None;
    for part in partitions {
        scored += part.scored;
        pruned += part.pruned;
        if let Some(candidate) = part.best {
            if best.as_ref().is_none_or(|(b, _)| candidate.0 > *b) {
                best = Some(candidate);
            }
        }
    }
    (best, scored, pruned)
}

/// Outcome of a full solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    pub best: StateArrangement,
    /// Score of `best` under the highest-scoring repetition's activations.
    pub score: LogScore,
    pub repetitions: Vec<RepetitionResult>,
    /// `votes[t][s]`: repetitions that put state `s` at position `t`.
    pub votes: Vec<Vec<u32>>,
    /// The vote was discarded in favour of the best single repetition.
    pub vote_fallback: bool,
    pub scored: u64,
    pub pruned: u64,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Index of the highest-scoring repetition; the earliest wins ties.
fn leader(reps: &[RepetitionResult]) -> usize {
    let mut best = 0;
    for (i, r) in reps.iter().enumerate().skip(1) {
        if r.score.value() > reps[best].score.value() {
            best = i;
        }
    }
    best
}

/// Per-position tallies and the voted sequence. Ties go to whichever tied
/// state appears at that position in the highest-ranked repetition.
pub fn majority_vote(reps: &[RepetitionResult], n: usize) -> (Vec<Vec<u32>>, Vec<usize>) {
    let t = reps.first().map_or(0, |r| r.arrangement.len());
    let mut ranking: Vec<usize> = (0..reps.len()).collect();
    ranking.sort_by(|&a, &b| {
        reps[b]
            .score
            .value()
            .total_cmp(&reps[a].score.value())
            .then(a.cmp(&b))
    });
    let mut votes = vec![vec![0u32; n]; t];
    for r in reps {
        for (pos, &s) in r.arrangement.as_slice().iter().enumerate() {
            votes[pos][s] += 1;
        }
    }
    let voted = votes
        .iter()
        .enumerate()
        .map(|(pos, tally)| {
            let top = *tally.iter().max().expect("non-empty tally");
            ranking
                .iter()
                .map(|&i| reps[i].arrangement.as_slice()[pos])
                .find(|&s| tally[s] == top)
                .expect("modal state appears in some repetition")
        })
        .collect();
    (votes, voted)
}

/// Shared repetition-and-vote skeleton. `run` performs one repetition and
/// returns its result together with the means to rescore the final answer.
pub(crate) fn vote_over<F>(repetitions: usize, n: usize, run: F) -> Result<SolveResult>
where
    F: Fn(usize) -> Result<(RepetitionResult, ScoringTables, AttentionOrder)> + Sync + Send,
{
    let start = Instant::now();
    let mut runs: Vec<(RepetitionResult, ScoringTables, AttentionOrder)> = (0..repetitions)
        .into_par_iter()
        .map(run)
        .collect::<Result<_>>()?;
    let reps: Vec<RepetitionResult> = runs.iter().map(|r| r.0.clone()).collect();
    let lead = leader(&reps);
    let (votes, voted) = majority_vote(&reps, n);
    let lead_rep = &reps[lead];
    let distinct = StateArrangement(voted.clone()).is_distinct();
    let admitted = lead_rep.must_traverse.iter().all(|m| voted.contains(m));
    let (lead_result, tables, order) = runs.swap_remove(lead);
    let (best, score, vote_fallback) = if distinct && admitted {
        let value = tables.score(order, &voted);
        (StateArrangement(voted), LogScore(value), false)
    } else {
        (lead_result.arrangement, lead_result.score, true)
    };
    Ok(SolveResult {
        best,
        score,
        scored: reps.iter().map(|r| r.scored).sum(),
        pruned: reps.iter().map(|r| r.pruned).sum(),
        repetitions: reps,
        votes,
        vote_fallback,
        wall_time: start.elapsed(),
    })
}

/// Best arrangement of `model`'s states for `trail`.
pub fn solve(
    model: &TppModel,
    trail: &ObservationTrail,
    config: &MlaaConfig,
) -> Result<SolveResult> {
    config.check()?;
    model.validate()?;
    let n = model.n_states();
    let t = trail.len();
    check_search_space(n, t, config.cap)?;
    vote_over(config.repetitions, n, |rep| {
        let stream = repetition_stream(config.seed, rep);
        let predicate = if config.dropout_enabled {
            dropout_function(
                model,
                trail,
                &DropoutOptions {
                    spec: config.dropout,
                    literal_pop: config.literal_pop,
                },
                &stream.child(tag::DROPOUT),
            )
        } else {
            DropoutPredicate::always()
        };
        let tables = ScoringTables::discrete(model, trail, config, &stream);
        let result = search_relaxed(&tables, config.attention, &predicate)?;
        Ok((result, tables, config.attention))
    })
}

/// Fraction of positions where the two sequences differ.
pub fn positional_error(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let wrong = predicted.iter().zip(truth).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / truth.len() as f64)
}
