//! The permutation search carried over to the travelling salesman problem.
//!
//! Short sub-paths are scored by an edge activation (mean-normalised
//! reciprocal costs) plus a node activation (how cheap each node's tour
//! edges are relative to the rest of its row). A global tour is assembled by
//! randomly partitioning the nodes, taking the best-scoring path inside each
//! part and chaining the parts greedily. [`two_local_improve`] refines a
//! tour with score-guided 2-opt moves and [`held_karp_oracle`] gives the
//! exact optimum on small instances.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::EPSILON;
use crate::arrangement::{arrangement_count, LexArrangements};
use crate::error::{Error, Result};
use crate::rng::{tag, RngStream};

/// Largest instance accepted by [`held_karp_oracle`].
pub const HELD_KARP_MAX_NODES: usize = 16;

const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Symmetric matrix of strictly positive travel costs with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CostMatrix {
    costs: Vec<Vec<f64>>,
}

impl CostMatrix {
    pub fn new(costs: Vec<Vec<f64>>) -> Result<Self> {
        let n = costs.len();
        if n < 2 {
            return Err(Error::InvalidCostMatrix(format!(
                "need at least 2 nodes, got {n}"
            )));
        }
        for (i, row) in costs.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidCostMatrix(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &w) in row.iter().enumerate() {
                if !w.is_finite() {
                    return Err(Error::InvalidCostMatrix(format!(
                        "cost[{i}][{j}] is not finite"
                    )));
                }
                if i == j && w != 0.0 {
                    return Err(Error::InvalidCostMatrix(format!(
                        "diagonal cost[{i}][{i}] = {w}"
                    )));
                }
                if i != j && w <= 0.0 {
                    return Err(Error::InvalidCostMatrix(format!(
                        "cost[{i}][{j}] = {w} is not positive"
                    )));
                }
                if (w - costs[j][i]).abs() > SYMMETRY_TOLERANCE * w.abs().max(1.0) {
                    return Err(Error::InvalidCostMatrix(format!(
                        "cost[{i}][{j}] = {w} but cost[{j}][{i}] = {}",
                        costs[j][i]
                    )));
                }
            }
        }
        Ok(Self { costs })
    }

    /// Euclidean distances between points.
    pub fn from_points(points: &[[f64; 2]]) -> Result<Self> {
        let costs = points
            .iter()
            .map(|a| {
                points
                    .iter()
                    .map(|b| (a[0] - b[0]).hypot(a[1] - b[1]))
                    .collect()
            })
            .collect();
        Self::new(costs)
    }

    /// `n` points drawn uniformly from the unit square under `seed`.
    pub fn random_uniform(n: usize, seed: u64) -> Result<Self> {
        let mut rng = RngStream::new(seed).child(tag::INSTANCE).rng();
        let points: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        Self::from_points(&points)
    }

    pub fn n(&self) -> usize {
        self.costs.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.costs[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.costs
    }

    fn row_sum(&self, i: usize) -> f64 {
        self.costs[i].iter().sum()
    }

    /// Mean off-diagonal cost.
    pub fn mean_cost(&self) -> f64 {
        let n = self.n();
        let total: f64 = (0..n).map(|i| self.row_sum(i)).sum();
        total / (n * (n - 1)) as f64
    }
}

impl TryFrom<Vec<Vec<f64>>> for CostMatrix {
    type Error = Error;

    fn try_from(costs: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(costs)
    }
}

impl From<CostMatrix> for Vec<Vec<f64>> {
    fn from(m: CostMatrix) -> Self {
        m.costs
    }
}

/// Sequence of distinct nodes; a closed tour returns from the last node to
/// the first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tour {
    pub nodes: Vec<usize>,
    pub closed: bool,
}

impl Tour {
    pub fn closed(nodes: Vec<usize>) -> Self {
        Self {
            nodes,
            closed: true,
        }
    }

    pub fn open(nodes: Vec<usize>) -> Self {
        Self {
            nodes,
            closed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Consecutive node pairs, including the closing edge when closed.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.nodes.len();
        let wrap = if self.closed && n > 2 {
            Some((self.nodes[n - 1], self.nodes[0]))
        } else {
            None
        };
        self.nodes.windows(2).map(|w| (w[0], w[1])).chain(wrap)
    }

    pub fn length(&self, cost: &CostMatrix) -> f64 {
        if self.closed && self.nodes.len() == 2 {
            return 2.0 * cost.get(self.nodes[0], self.nodes[1]);
        }
        self.edges().map(|(a, b)| cost.get(a, b)).sum()
    }

    /// Checks that the nodes are distinct and within `0..n`.
    pub fn check(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &v in &self.nodes {
            if v >= n || std::mem::replace(&mut seen[v], true) {
                return Err(Error::InvalidConfig(format!(
                    "tour {:?} is not a sequence of distinct nodes below {n}",
                    self.nodes
                )));
            }
        }
        if self.nodes.len() < 2 {
            return Err(Error::InvalidConfig("a tour needs at least 2 nodes".into()));
        }
        Ok(())
    }
}

/// Per-node quality: the reciprocal of (tour edge cost at the node) over
/// (remaining row cost), or the ratio itself when `literal_ratio` is set.
fn node_qualities(cost: &CostMatrix, tour: &Tour, literal_ratio: bool) -> Vec<f64> {
    let mut incident = vec![0.0; cost.n()];
    for (a, b) in tour.edges() {
        let w = cost.get(a, b);
        incident[a] += w;
        incident[b] += w;
    }
    tour.nodes
        .iter()
        .map(|&i| {
            let edge_cost = incident[i];
            let denom = cost.row_sum(i) - edge_cost;
            let q = if denom <= 0.0 {
                1.0 / EPSILON
            } else {
                denom / edge_cost
            };
            if literal_ratio {
                1.0 / q
            } else {
                q
            }
        })
        .collect()
}

/// Log node activation: the clique product over all ordered triples of tour
/// nodes, each triple weighted by `e^(1/k)` with `k` the squared triple
/// count, then cube-rooted.
///
/// Each node sits in `3 (n-1)(n-2)` of the `n (n-1)(n-2)` triples, so the sum
/// collapses to `(n-1)(n-2) * sum(log q) + 1 / (3 * #triples)`.
pub fn node_activation(cost: &CostMatrix, tour: &Tour, literal_ratio: bool) -> Result<f64> {
    let n = tour.len();
    if n < 3 {
        return Err(Error::InvalidConfig(format!(
            "node activation needs at least 3 nodes, got {n}"
        )));
    }
    let log_sum: f64 = node_qualities(cost, tour, literal_ratio)
        .iter()
        .map(|q| q.ln())
        .sum();
    let triples = (n * (n - 1) * (n - 2)) as f64;
    let per_node = ((n - 1) * (n - 2)) as f64;
    Ok(per_node * log_sum + 1.0 / (3.0 * triples))
}

/// Log edge activation: `(1/3) * sum over tour edges of (ln(mu / w) + 1/L)`,
/// with `mu` the mean off-diagonal cost and `L` the edge count.
pub fn edge_activation(cost: &CostMatrix, tour: &Tour) -> f64 {
    let mu = cost.mean_cost();
    let weights: Vec<f64> = tour.edges().map(|(a, b)| cost.get(a, b)).collect();
    let l = weights.len() as f64;
    weights.iter().map(|w| (mu / w).ln() + 1.0 / l).sum::<f64>() / 3.0
}

/// Options shared by the tour scorers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TspOptions {
    pub literal_ratio: bool,
}

/// Combined log score; tours shorter than 3 nodes use the edge term only.
pub fn tour_score(cost: &CostMatrix, tour: &Tour, options: &TspOptions) -> f64 {
    let edge = edge_activation(cost, tour);
    match node_activation(cost, tour, options.literal_ratio) {
        Ok(node) => edge + node,
        Err(_) => edge,
    }
}

/// Best-scoring open path of `length` nodes drawn from `states`. Ties go to
/// the lexicographically first path over the sorted node list.
pub fn local_minima(
    cost: &CostMatrix,
    states: &[usize],
    length: usize,
    options: &TspOptions,
    cap: u64,
) -> Result<(Tour, f64)> {
    let mut nodes = states.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    if length > nodes.len() || length == 0 {
        return Err(Error::InvalidConfig(format!(
            "path length {length} not in 1..={}",
            nodes.len()
        )));
    }
    let count = arrangement_count(nodes.len(), length);
    if count.is_none_or(|c| c > cap) {
        return Err(Error::CapExceeded {
            count: count.map_or_else(|| "overflow".into(), |c| c.to_string()),
            cap,
        });
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut cursor = LexArrangements::new(nodes.len(), length);
    let mut path = Tour::open(Vec::with_capacity(length));
    while let Some(idx) = cursor.advance() {
        path.nodes.clear();
        path.nodes.extend(idx.iter().map(|&i| nodes[i]));
        let score = tour_score(cost, &path, options);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, path.nodes.clone()));
        }
    }
    let (score, nodes) = best.expect("at least one path");
    Ok((Tour::open(nodes), score))
}

/// Splits `nodes` into consecutive groups of `size`; a trailing group smaller
/// than 3 is merged into the one before it.
fn chunk_nodes(nodes: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = nodes.chunks(size).map(<[usize]>::to_vec).collect();
    if groups.len() > 1 && groups.last().is_some_and(|g| g.len() < 3) {
        let tail = groups.pop().expect("non-empty");
        groups.last_mut().expect("non-empty").extend(tail);
    }
    groups
}

/// Chains open segments: starting from the first, repeatedly append the
/// remaining segment whose head or tail is cheapest to reach from the current
/// end, reversing it when entering through its tail.
pub fn greedy_concatenate(cost: &CostMatrix, segments: &[Vec<usize>]) -> Vec<usize> {
    let mut remaining: Vec<Vec<usize>> = segments.to_vec();
    let mut tour = remaining.remove(0);
    while !remaining.is_empty() {
        let end = *tour.last().expect("non-empty segment");
        let mut pick = (f64::INFINITY, 0, false);
        for (k, seg) in remaining.iter().enumerate() {
            let head = cost.get(end, seg[0]);
            let tail = cost.get(end, *seg.last().expect("non-empty segment"));
            if head < pick.0 {
                pick = (head, k, false);
            }
            if tail < pick.0 {
                pick = (tail, k, true);
            }
        }
        let mut seg = remaining.remove(pick.1);
        if pick.2 {
            seg.reverse();
        }
        tour.extend(seg);
    }
    tour
}

/// Outcome of [`partition_search`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionResult {
    pub tour: Tour,
    pub length: f64,
    /// Best length found after each repetition.
    pub best_so_far: Vec<f64>,
}

/// One random-partition repetition.
fn partition_once(
    cost: &CostMatrix,
    subset_size: usize,
    options: &TspOptions,
    rng: &RngStream,
) -> Result<Vec<usize>> {
    let mut nodes: Vec<usize> = (0..cost.n()).collect();
    nodes.shuffle(&mut rng.rng());
    let segments = chunk_nodes(&nodes, subset_size)
        .into_iter()
        .map(|group| {
            local_minima(cost, &group, group.len(), options, u64::MAX).map(|(t, _)| t.nodes)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(greedy_concatenate(cost, &segments))
}

/// Best closed tour over `repetitions` random partitions into groups of
/// `subset_size`. Repetition `r` depends only on `(seed, r)`, so a run with
/// more repetitions extends a run with fewer.
pub fn partition_search(
    cost: &CostMatrix,
    subset_size: usize,
    repetitions: usize,
    seed: u64,
    options: &TspOptions,
) -> Result<PartitionResult> {
    if subset_size < 3 {
        return Err(Error::InvalidConfig(format!(
            "subset size must be at least 3, got {subset_size}"
        )));
    }
    if cost.n() < 3 {
        return Err(Error::InvalidConfig(
            "partition search needs at least 3 nodes".into(),
        ));
    }
    if repetitions == 0 {
        return Err(Error::InvalidConfig(
            "repetitions must be at least 1".into(),
        ));
    }
    let root = RngStream::new(seed);
    let tours: Vec<Vec<usize>> = (0..repetitions)
        .into_par_iter()
        .map(|r| {
            partition_once(
                cost,
                subset_size,
                options,
                &root.derive(&[tag::PARTITION, r as u64]),
            )
        })
        .collect::<Result<_>>()?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut best_so_far = Vec::with_capacity(repetitions);
    for nodes in tours {
        let length = Tour::closed(nodes.clone()).length(cost);
        if best.as_ref().is_none_or(|(b, _)| length < *b) {
            best = Some((length, nodes));
        }
        best_so_far.push(best.as_ref().expect("set above").0);
    }
    let (length, nodes) = best.expect("at least one repetition");
    Ok(PartitionResult {
        tour: Tour::closed(nodes),
        length,
        best_so_far,
    })
}

/// Reverses `nodes[i + 1..=j]`.
fn two_opt_move(nodes: &[usize], i: usize, j: usize) -> Vec<usize> {
    let mut out = nodes.to_vec();
    out[i + 1..=j].reverse();
    out
}

/// Score-guided 2-opt on a closed tour. Each pass applies the segment
/// reversal with the highest score among those that raise the score without
/// lengthening the tour; it stops at a fixpoint or after `max_passes`.
pub fn two_local_improve(
    cost: &CostMatrix,
    tour: &Tour,
    max_passes: usize,
    options: &TspOptions,
) -> Result<Tour> {
    tour.check(cost.n())?;
    let mut current = Tour::closed(tour.nodes.clone());
    let n = current.len();
    if n < 4 {
        return Ok(current);
    }
    let mut score = tour_score(cost, &current, options);
    let mut length = current.length(cost);
    for _ in 0..max_passes {
        let mut best: Option<(f64, f64, Vec<usize>)> = None;
        for i in 0..n - 1 {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let candidate = Tour::closed(two_opt_move(&current.nodes, i, j));
                let cand_len = candidate.length(cost);
                if cand_len > length {
                    continue;
                }
                let cand_score = tour_score(cost, &candidate, options);
                if cand_score > score && best.as_ref().is_none_or(|(s, _, _)| cand_score > *s) {
                    best = Some((cand_score, cand_len, candidate.nodes));
                }
            }
        }
        match best {
            Some((s, l, nodes)) => {
                score = s;
                length = l;
                current.nodes = nodes;
            }
            None => break,
        }
    }
    Ok(current)
}

/// Uniformly random closed tour of `0..n`.
pub fn random_tour(n: usize, rng: &RngStream) -> Tour {
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(&mut rng.rng());
    Tour::closed(nodes)
}

/// Exact shortest closed tour by dynamic programming over subsets. The tour
/// starts at node 0; among equal-length tours the predecessor with the
/// smallest index is kept.
pub fn held_karp_oracle(cost: &CostMatrix) -> Result<(Tour, f64)> {
    let n = cost.n();
    if n > HELD_KARP_MAX_NODES {
        return Err(Error::TooManyNodes {
            got: n,
            max: HELD_KARP_MAX_NODES,
        });
    }
    if n == 2 {
        let tour = Tour::closed(vec![0, 1]);
        let len = tour.length(cost);
        return Ok((tour, len));
    }
    // Subsets of nodes 1..n, encoded with bit (v - 1).
    let m = n - 1;
    let full = (1usize << m) - 1;
    let mut dp = vec![f64::INFINITY; (1 << m) * m];
    let mut parent = vec![usize::MAX; (1 << m) * m];
    for v in 0..m {
        dp[(1 << v) * m + v] = cost.get(0, v + 1);
    }
    for mask in 1..=full {
        for last in 0..m {
            if mask & (1 << last) == 0 {
                continue;
            }
            let base = dp[mask * m + last];
            if !base.is_finite() {
                continue;
            }
            for next in 0..m {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let nm = mask | (1 << next);
                let value = base + cost.get(last + 1, next + 1);
                let slot = nm * m + next;
                if value < dp[slot] || (value == dp[slot] && last < parent[slot]) {
                    dp[slot] = value;
                    parent[slot] = last;
                }
            }
        }
    }
    let (mut best, mut last) = (f64::INFINITY, 0);
    for v in 0..m {
        let value = dp[full * m + v] + cost.get(v + 1, 0);
        if value < best {
            best = value;
            last = v;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut mask = full;
    let mut cur = last;
    while cur != usize::MAX {
        order.push(cur + 1);
        let prev = parent[mask * m + cur];
        mask &= !(1 << cur);
        cur = prev;
    }
    order.push(0);
    order.reverse();
    let tour = Tour::closed(order);
    let length = tour.length(cost);
    Ok((tour, length))
}
