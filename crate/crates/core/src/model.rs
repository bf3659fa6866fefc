//! Travelling-photographer domain types, synthetic instance generation, and
//! the exhaustive MAP oracle.
//!
//! A model assigns each state a table of Bernoulli emission probabilities and
//! a row of a row-stochastic transition matrix. An observation trail is an
//! ordered list of episodes, each a set of tokens. The task is to find the
//! sequence of distinct states, one per episode, that most likely produced
//! the trail.
//!
//! The clique-product scores used elsewhere in the crate are motivated by the
//! Hammersley–Clifford factorisation of a positive joint distribution into
//! clique potentials: a product of factors over small groups of activations
//! stands in for the factorised likelihood of an episode.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::arrangement::{arrangement_count, LexArrangements, StateArrangement};
use crate::error::{Error, Result};
use crate::rng::{tag, RngStream};

/// Tolerance on transition row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Default cap on the number of arrangements an exhaustive search may visit.
pub const DEFAULT_ARRANGEMENT_CAP: u64 = 5_000_000;

/// Natural-log score; negative infinity means impossible.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(from = "Option<f64>")]
pub struct LogScore(pub f64);

impl LogScore {
    pub const IMPOSSIBLE: LogScore = LogScore(f64::NEG_INFINITY);

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_impossible(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    pub fn from_linear(x: f64) -> Self {
        LogScore(x.ln())
    }

    pub fn to_linear(self) -> f64 {
        self.0.exp()
    }
}

impl From<Option<f64>> for LogScore {
    fn from(v: Option<f64>) -> Self {
        LogScore(v.unwrap_or(f64::NEG_INFINITY))
    }
}

// JSON has no infinities: impossible scores are written as null.
impl Serialize for LogScore {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_some(&self.0)
        } else {
            s.serialize_none()
        }
    }
}

impl PartialOrd for LogScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.0.partial_cmp(&other.0)
    }
}

impl fmt::Display for LogScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_impossible() {
            f.write_str("-inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TppModel {
    pub states: Vec<String>,
    /// Aligned with `states`: token -> Bernoulli probability.
    pub emissions: Vec<BTreeMap<String, f64>>,
    /// `transitions[i][j]` = Pr(next = j | current = i).
    pub transitions: Vec<Vec<f64>>,
}

impl TppModel {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn emission(&self, state: usize, token: &str) -> Option<f64> {
        self.emissions[state].get(token).copied()
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transitions[from][to]
    }

    pub fn names(&self, arrangement: &StateArrangement) -> Vec<String> {
        arrangement
            .0
            .iter()
            .map(|&i| self.states[i].clone())
            .collect()
    }

    pub fn arrangement_from_names<S: AsRef<str>>(&self, names: &[S]) -> Option<StateArrangement> {
        names
            .iter()
            .map(|n| self.state_index(n.as_ref()))
            .collect::<Option<Vec<_>>>()
            .map(StateArrangement)
    }

    /// Transition matrix with uniform rows.
    pub fn uniform_transitions(n: usize) -> Vec<Vec<f64>> {
        vec![vec![1.0 / n as f64; n]; n]
    }

    pub fn validate(&self) -> Result<()> {
        let violations = validate_model(self);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidModel(violations))
        }
    }
}

/// One broken model invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoStates,
    DuplicateState(String),
    EmissionTableCount {
        tables: usize,
        states: usize,
    },
    ZeroEmission {
        state: String,
        token: String,
    },
    EmissionOutOfRange {
        state: String,
        token: String,
        p: f64,
    },
    TransitionShape {
        rows: usize,
        expected: usize,
    },
    TransitionRowShape {
        row: usize,
        cols: usize,
        expected: usize,
    },
    NegativeTransition {
        row: usize,
        col: usize,
        p: f64,
    },
    RowSum {
        row: usize,
        sum: f64,
    },
}

fn trimmed(x: f64) -> String {
    let s = format!("{x:.9}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoStates => write!(f, "model has no states"),
            Violation::DuplicateState(s) => write!(f, "duplicate state identifier {s:?}"),
            Violation::EmissionTableCount { tables, states } => {
                write!(f, "{tables} emission tables for {states} states")
            }
            Violation::ZeroEmission { state, token } => {
                write!(
                    f,
                    "zero emission probability for token {token:?} in state {state:?}"
                )
            }
            Violation::EmissionOutOfRange { state, token, p } => write!(
                f,
                "emission probability {p} for token {token:?} in state {state:?} outside (0, 1]"
            ),
            Violation::TransitionShape { rows, expected } => {
                write!(f, "transition matrix has {rows} rows, expected {expected}")
            }
            Violation::TransitionRowShape {
                row,
                cols,
                expected,
            } => {
                write!(f, "row {row} has {cols} entries, expected {expected}")
            }
            Violation::NegativeTransition { row, col, p } => {
                write!(f, "negative transition probability {p} at ({row}, {col})")
            }
            Violation::RowSum { row, sum } => write!(f, "row {row} sums to {}", trimmed(*sum)),
        }
    }
}

/// Every invariant violation in `model`; empty means valid.
pub fn validate_model(model: &TppModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = model.n_states();
    if n == 0 {
        out.push(Violation::NoStates);
    }
    let mut seen = BTreeSet::new();
    for s in &model.states {
        if !seen.insert(s.as_str()) {
            out.push(Violation::DuplicateState(s.clone()));
        }
    }
    if model.emissions.len() != n {
        out.push(Violation::EmissionTableCount {
            tables: model.emissions.len(),
            states: n,
        });
    }
    for (state, table) in model.states.iter().zip(&model.emissions) {
        for (token, &p) in table {
            if p == 0.0 {
                out.push(Violation::ZeroEmission {
                    state: state.clone(),
                    token: token.clone(),
                });
            } else if !(p > 0.0 && p <= 1.0) {
                out.push(Violation::EmissionOutOfRange {
                    state: state.clone(),
                    token: token.clone(),
                    p,
                });
            }
        }
    }
    if model.transitions.len() != n {
        out.push(Violation::TransitionShape {
            rows: model.transitions.len(),
            expected: n,
        });
    }
    for (row, probs) in model.transitions.iter().enumerate() {
        if probs.len() != n {
            out.push(Violation::TransitionRowShape {
                row,
                cols: probs.len(),
                expected: n,
            });
        }
        for (col, &p) in probs.iter().enumerate() {
            if p.is_nan() || p < 0.0 {
                out.push(Violation::NegativeTransition { row, col, p });
            }
        }
        let sum: f64 = probs.iter().sum();
        if sum.is_nan() || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            out.push(Violation::RowSum { row, sum });
        }
    }
    out
}

/// Ordered episodes of observed token sets. Duplicate tokens within an
/// episode are collapsed and each episode is stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationTrail {
    episodes: Vec<Vec<String>>,
}

impl ObservationTrail {
    pub fn new<I, E, S>(episodes: I) -> Result<Self>
    where
        I: IntoIterator<Item = E>,
        E: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let episodes: Vec<Vec<String>> = episodes
            .into_iter()
            .map(|e| {
                let set: BTreeSet<String> = e.into_iter().map(Into::into).collect();
                set.into_iter().collect()
            })
            .collect();
        if episodes.is_empty() {
            return Err(Error::InvalidConfig("trail has no episodes".into()));
        }
        if let Some(t) = episodes.iter().position(Vec::is_empty) {
            return Err(Error::InvalidConfig(format!("episode {t} is empty")));
        }
        Ok(Self { episodes })
    }

    pub fn episodes(&self) -> &[Vec<String>] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }
}

/// Parameters for random instance generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_states: usize,
    pub max_tokens_per_state: usize,
    pub vocab_size: usize,
    pub p_lo: f64,
    pub p_hi: f64,
    pub episodes: usize,
    pub seed: u64,
    /// Unique tokens per state, all emitted in every episode, all with `p_hi`.
    pub noiseless: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_states: 9,
            max_tokens_per_state: 6,
            vocab_size: 24,
            p_lo: 0.1,
            p_hi: 0.9,
            episodes: 9,
            seed: 0,
            noiseless: false,
        }
    }
}

impl SyntheticSpec {
    /// Noiseless instance: distinct tokens per state, probability `p`, every
    /// token observed in every episode.
    pub fn noiseless(n_states: usize, episodes: usize, p: f64, seed: u64) -> Self {
        Self {
            n_states,
            episodes,
            p_lo: p,
            p_hi: p,
            seed,
            noiseless: true,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_states == 0 {
            return bad("n_states must be positive".into());
        }
        if self.episodes == 0 || self.episodes > self.n_states {
            return bad(format!(
                "episodes must lie in 1..={} (got {})",
                self.n_states, self.episodes
            ));
        }
        if self.max_tokens_per_state == 0 {
            return bad("max_tokens_per_state must be positive".into());
        }
        if !(self.p_lo > 0.0 && self.p_lo <= self.p_hi && self.p_hi <= 1.0) {
            return bad(format!(
                "emission range [{}, {}] must satisfy 0 < p_lo <= p_hi <= 1",
                self.p_lo, self.p_hi
            ));
        }
        if !self.noiseless && self.vocab_size < self.max_tokens_per_state {
            return bad(format!(
                "vocab_size {} smaller than max_tokens_per_state {}",
                self.vocab_size, self.max_tokens_per_state
            ));
        }
        Ok(())
    }
}

/// A generated problem with its hidden answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub model: TppModel,
    pub trail: ObservationTrail,
    pub ground_truth: StateArrangement,
}

fn index_below(sampler: &mut crate::rng::Sampler, n: usize) -> usize {
    ((sampler.uniform() * n as f64) as usize).min(n - 1)
}

/// Random model, a walk without revisits on it, and the trail it emits.
pub fn generate_instance(spec: &SyntheticSpec) -> Result<Instance> {
    spec.check()?;
    let n = spec.n_states;
    let root = RngStream::new(spec.seed).child(tag::INSTANCE);

    let mut draw = root.child(1).sampler();
    let transitions: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let row: Vec<f64> = (0..n).map(|_| 1.0 - draw.uniform()).collect();
            let total: f64 = row.iter().sum();
            row.into_iter().map(|w| w / total).collect()
        })
        .collect();

    let mut draw = root.child(2).sampler();
    let mut emissions = Vec::with_capacity(n);
    for s in 0..n {
        let k = 1 + index_below(&mut draw, spec.max_tokens_per_state);
        let mut table = BTreeMap::new();
        if spec.noiseless {
            for j in 0..k {
                table.insert(format!("s{s}_o{j}"), spec.p_hi);
            }
        } else {
            let mut pool: Vec<usize> = (0..spec.vocab_size).collect();
            for j in 0..k {
                let pick = j + index_below(&mut draw, pool.len() - j);
                pool.swap(j, pick);
                let p = spec.p_lo + draw.uniform() * (spec.p_hi - spec.p_lo);
                table.insert(format!("o{}", pool[j]), p);
            }
        }
        emissions.push(table);
    }

    let mut draw = root.child(3).sampler();
    let mut visited = vec![false; n];
    let mut tour = Vec::with_capacity(spec.episodes);
    let mut current = index_below(&mut draw, n);
    visited[current] = true;
    tour.push(current);
    while tour.len() < spec.episodes {
        let total: f64 = (0..n)
            .filter(|&j| !visited[j])
            .map(|j| transitions[current][j])
            .sum();
        let mut target = draw.uniform() * total;
        let mut next = None;
        for j in (0..n).filter(|&j| !visited[j]) {
            next = Some(j);
            target -= transitions[current][j];
            if target < 0.0 {
                break;
            }
        }
        current = next.expect("an unvisited state remains");
        visited[current] = true;
        tour.push(current);
    }

    let mut episodes = Vec::with_capacity(spec.episodes);
    for (t, &s) in tour.iter().enumerate() {
        let table = &emissions[s];
        let episode: Vec<String> = if spec.noiseless {
            table.keys().cloned().collect()
        } else {
            let mut draw = root.derive(&[4, t as u64]).sampler();
            loop {
                let e: Vec<String> = table
                    .iter()
                    .filter(|(_, &p)| draw.uniform() < p)
                    .map(|(tok, _)| tok.clone())
                    .collect();
                if !e.is_empty() {
                    break e;
                }
            }
        };
        episodes.push(episode);
    }

    let model = TppModel {
        states: (0..n).map(|i| format!("s{i}")).collect(),
        emissions,
        transitions,
    };
    Ok(Instance {
        model,
        trail: ObservationTrail::new(episodes)?,
        ground_truth: StateArrangement(tour),
    })
}

/// Log-likelihood of one episode under one state: the sum of log
/// probabilities of the observed tokens, negative infinity when the state
/// cannot emit one of them. `full_bernoulli` adds log(1 - p) for each of the
/// state's tokens that was not observed.
pub fn episode_log_likelihood(
    model: &TppModel,
    state: usize,
    episode: &[String],
    full_bernoulli: bool,
) -> f64 {
    let table = &model.emissions[state];
    let mut total = 0.0;
    for token in episode {
        match table.get(token) {
            Some(&p) => total += p.ln(),
            None => return f64::NEG_INFINITY,
        }
    }
    if full_bernoulli {
        for (token, &p) in table {
            if episode.binary_search(token).is_err() {
                total += (1.0 - p).ln();
            }
        }
    }
    total
}

/// Exact log-probability of `arrangement` producing `trail`.
pub fn arrangement_log_likelihood(
    model: &TppModel,
    trail: &ObservationTrail,
    arrangement: &[usize],
    full_bernoulli: bool,
) -> f64 {
    let mut total = 0.0;
    for (episode, &s) in trail.episodes().iter().zip(arrangement) {
        total += episode_log_likelihood(model, s, episode, full_bernoulli);
    }
    for w in arrangement.windows(2) {
        total += model.transition(w[0], w[1]).ln();
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub cap: u64,
    pub full_bernoulli: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_ARRANGEMENT_CAP,
            full_bernoulli: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub arrangement: StateArrangement,
    pub score: LogScore,
    pub feasible: bool,
    pub evaluated: u64,
}

/// Checks the size of the arrangement space against `cap`.
pub fn check_search_space(n: usize, t: usize, cap: u64) -> Result<u64> {
    if t > n {
        return Err(Error::TrailTooLong {
            episodes: t,
            states: n,
        });
    }
    match arrangement_count(n, t) {
        Some(count) if count <= cap => Ok(count),
        Some(count) => Err(Error::CapExceeded {
            count: count.to_string(),
            cap,
        }),
        None => Err(Error::CapExceeded {
            count: format!("{n}!/({}!)", n - t),
            cap,
        }),
    }
}

/// Exhaustive MAP arrangement. Ties resolve to the lexicographically-first
/// arrangement; if every arrangement is impossible the first one is returned
/// with `feasible = false`.
pub fn exact_map_oracle(
    model: &TppModel,
    trail: &ObservationTrail,
    options: &OracleOptions,
) -> Result<OracleResult> {
    let n = model.n_states();
    let t = trail.len();
    let evaluated = check_search_space(n, t, options.cap)?;

    let emission: Vec<Vec<f64>> = trail
        .episodes()
        .iter()
        .map(|e| {
            (0..n)
                .map(|s| episode_log_likelihood(model, s, e, options.full_bernoulli))
                .collect()
        })
        .collect();
    let log_trans: Vec<Vec<f64>> = model
        .transitions
        .iter()
        .map(|row| row.iter().map(|p| p.ln()).collect())
        .collect();
    let score = |arr: &[usize]| -> f64 {
        let mut total = 0.0;
        for (pos, &s) in arr.iter().enumerate() {
            total += emission[pos][s];
        }
        for w in arr.windows(2) {
            total += log_trans[w[0]][w[1]];
        }
        total
    };

    let partitions: Vec<Option<(f64, Vec<usize>)>> = (0..n)
        .into_par_iter()
        .map(|first| {
            let mut cursor = LexArrangements::with_first(n, t, first);
            let mut best: Option<(f64, Vec<usize>)> = None;
            while let Some(arr) = cursor.advance() {
                let value = score(arr);
                if best.as_ref().is_none_or(|(b, _)| value > *b) {
                    best = Some((value, arr.to_vec()));
                }
            }
            best
        })
        .collect();

    let mut best: Option<(f64, Vec<usize>)> = None;
    for candidate in partitions.into_iter().flatten() {
        if best.as_ref().is_none_or(|(b, _)| candidate.0 > *b) {
            best = Some(candidate);
        }
    }
    let (value, arr) = best.expect("non-empty search space");
    Ok(OracleResult {
        feasible: value > f64::NEG_INFINITY,
        arrangement: StateArrangement(arr),
        score: LogScore(value),
        evaluated,
    })
}
