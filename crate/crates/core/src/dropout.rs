//! Data-dependent inclusion filter.
//!
//! States that share emitted tokens accumulate pairing mass in a symmetric
//! capacity matrix `C`. For each of `C` and `C T C T - C T` (with `T` the
//! transition matrix) a maximum spanning forest is extracted, every state is
//! weighted by the sum of its selected edges, and the heaviest state becomes
//! mandatory: candidate arrangements must visit all mandatory states.

use serde::Serialize;

use crate::activation::{dropout_activation, ActivationSpec};
use crate::arrangement::LexArrangements;
use crate::error::{Error, Result};
use crate::model::{ObservationTrail, TppModel};
use crate::rng::{stable_hash, RngStream};

/// Symmetric, non-negative pairing mass between states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityMatrix(pub Vec<Vec<f64>>);

impl CapacityMatrix {
    pub fn zeros(n: usize) -> Self {
        Self(vec![vec![0.0; n]; n])
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|&x| x == 0.0)
    }

    fn add_pair(&mut self, a: usize, b: usize, value: f64) {
        self.0[a][b] += value;
        self.0[b][a] += value;
    }

    /// Edges `(i, j, w)` with `i < j` and `w > 0`.
    pub fn upper_triangle(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let w = self.0[i][j];
                if w > 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }
}

/// Pairing mass from shared emitters: every occurrence of a token adds the
/// dropout activation of each pair of states that can both emit it.
pub fn transition_capacity(
    model: &TppModel,
    trail: &ObservationTrail,
    spec: &ActivationSpec,
    rng: &RngStream,
) -> CapacityMatrix {
    let n = model.n_states();
    let mut cap = CapacityMatrix::zeros(n);
    for (t, episode) in trail.episodes().iter().enumerate() {
        for token in episode {
            let emitters: Vec<usize> = (0..n)
                .filter(|&s| model.emissions[s].contains_key(token))
                .collect();
            for (i, &a) in emitters.iter().enumerate() {
                for &b in &emitters[i + 1..] {
                    let key = rng.derive(&[t as u64, stable_hash(token), a as u64, b as u64]);
                    let act = dropout_activation(model, a, b, token, spec, &key);
                    cap.add_pair(a, b, act);
                }
            }
        }
    }
    cap
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for (k, bk) in b.iter().enumerate() {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..m {
                out[i][j] += aik * bk[j];
            }
        }
    }
    out
}

/// `C T C T - C T`, symmetrised as `(X + X^T) / 2`, negatives clamped to 0,
/// diagonal zeroed.
pub fn second_order_capacity(cap: &CapacityMatrix, transitions: &[Vec<f64>]) -> CapacityMatrix {
    let ct = mat_mul(&cap.0, transitions);
    let ctct = mat_mul(&mat_mul(&ct, &cap.0), transitions);
    let n = cap.n();
    let mut out = CapacityMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let x_ij = ctct[i][j] - ct[i][j];
            let x_ji = ctct[j][i] - ct[j][i];
            out.0[i][j] = (0.5 * (x_ij + x_ji)).max(0.0);
        }
    }
    out
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Maximum spanning forest by Kruskal over positive upper-triangle edges.
/// Equal weights are taken in `(i, j)` order.
pub fn maximum_spanning_edges(cap: &CapacityMatrix) -> Vec<(usize, usize, f64)> {
    let mut edges = cap.upper_triangle();
    edges.sort_by(|x, y| y.2.total_cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
    let mut dsu = DisjointSet::new(cap.n());
    edges
        .into_iter()
        .filter(|&(i, j, _)| dsu.union(i, j))
        .collect()
}

/// Sum of selected edge weights incident to each state.
pub fn state_weights(n: usize, edges: &[(usize, usize, f64)]) -> Vec<f64> {
    let mut w = vec![0.0; n];
    for &(i, j, x) in edges {
        w[i] += x;
        w[j] += x;
    }
    w
}

/// Arrangements must contain every state in `must_traverse`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct DropoutPredicate {
    must_traverse: Vec<usize>,
}

impl DropoutPredicate {
    /// Fails when more states are required than an arrangement of length
    /// `episodes` can hold.
    pub fn new(must_traverse: Vec<usize>, episodes: usize) -> Result<Self> {
        if must_traverse.len() > episodes {
            return Err(Error::InvalidConfig(format!(
                "{} mandatory states cannot fit in {episodes} episodes",
                must_traverse.len()
            )));
        }
        Ok(Self { must_traverse })
    }

    /// Accepts every arrangement.
    pub fn always() -> Self {
        Self::default()
    }

    pub fn must_traverse(&self) -> &[usize] {
        &self.must_traverse
    }

    pub fn admits(&self, arrangement: &[usize]) -> bool {
        self.must_traverse.iter().all(|m| arrangement.contains(m))
    }
}

/// Options for building the inclusion predicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutOptions {
    pub spec: ActivationSpec,
    /// Take the last (lightest) state of the decreasing ranking instead of
    /// the heaviest.
    pub literal_pop: bool,
}

/// States able to emit every token of at least one episode. No feasible
/// arrangement contains any other state.
pub fn eligible_states(model: &TppModel, trail: &ObservationTrail) -> Vec<bool> {
    (0..model.n_states())
        .map(|s| {
            trail
                .episodes()
                .iter()
                .any(|e| e.iter().all(|tok| model.emissions[s].contains_key(tok)))
        })
        .collect()
}

/// Mandatory states from a precomputed capacity matrix. Only states marked
/// in `eligible` are ranked.
pub fn predicate_from_capacity(
    cap: &CapacityMatrix,
    transitions: &[Vec<f64>],
    eligible: &[bool],
    episodes: usize,
    literal_pop: bool,
) -> DropoutPredicate {
    if cap.is_zero() {
        return DropoutPredicate::always();
    }
    let n = cap.n();
    let layers = [cap.clone(), second_order_capacity(cap, transitions)];
    let mut must = Vec::new();
    for layer in &layers {
        let edges = maximum_spanning_edges(layer);
        if edges.is_empty() {
            continue;
        }
        let weights = state_weights(n, &edges);
        let mut ranking: Vec<usize> = (0..n).filter(|&s| eligible[s]).collect();
        // Decreasing weight, index order among equals.
        ranking.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
        let picked = if literal_pop {
            ranking.last()
        } else {
            ranking.first()
        };
        let Some(&pick) = picked else {
            continue;
        };
        if !must.contains(&pick) {
            must.push(pick);
        }
    }
    must.truncate(episodes.saturating_sub(1));
    DropoutPredicate {
        must_traverse: must,
    }
}

/// Inclusion predicate for one trail.
pub fn dropout_function(
    model: &TppModel,
    trail: &ObservationTrail,
    options: &DropoutOptions,
    rng: &RngStream,
) -> DropoutPredicate {
    let cap = transition_capacity(model, trail, &options.spec, rng);
    let eligible = eligible_states(model, trail);
    predicate_from_capacity(
        &cap,
        &model.transitions,
        &eligible,
        trail.len(),
        options.literal_pop,
    )
}

/// Lexicographic stream of the length-`t` arrangements of `0..n` admitted by
/// `predicate`.
pub fn filtered_arrangements(
    n: usize,
    t: usize,
    predicate: &DropoutPredicate,
) -> impl Iterator<Item = crate::arrangement::StateArrangement> + '_ {
    LexArrangements::new(n, t).filter(move |a| predicate.admits(a.as_slice()))
}

/// The partition of [`filtered_arrangements`] whose first state is `first`.
pub fn filtered_partition(
    n: usize,
    t: usize,
    first: usize,
    predicate: &DropoutPredicate,
) -> impl Iterator<Item = crate::arrangement::StateArrangement> + '_ {
    LexArrangements::with_first(n, t, first).filter(move |a| predicate.admits(a.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrangement::arrangement_count;
    use crate::fixtures::{three_city, three_city_trail};
    use crate::model::{generate_instance, SyntheticSpec};

    #[test]
    fn three_city_capacity_pairs() {
        let m = three_city();
        let trail = three_city_trail();
        let spec = ActivationSpec {
            thresh: 1.0,
            ..ActivationSpec::dropout()
        };
        // With every activation pinned at 1, each cell counts shared-emitter
        // occurrences: b occurs twice and is emitted by all three states.
        let cap = transition_capacity(&m, &trail, &spec, &RngStream::new(1));
        let expected = vec![
            vec![0.0, 2.0, 2.0],
            vec![2.0, 0.0, 2.0],
            vec![2.0, 2.0, 0.0],
        ];
        assert_eq!(cap.0, expected);
    }

    #[test]
    fn unshared_tokens_give_zero_capacity() {
        let m = three_city();
        let trail = ObservationTrail::new(vec![vec!["a"], vec!["c"], vec!["d"]]).unwrap();
        let cap = transition_capacity(&m, &trail, &ActivationSpec::dropout(), &RngStream::new(1));
        assert!(cap.is_zero());
        let p = dropout_function(
            &m,
            &trail,
            &DropoutOptions {
                spec: ActivationSpec::dropout(),
                literal_pop: false,
            },
            &RngStream::new(1),
        );
        assert!(p.must_traverse().is_empty());
        assert!(p.admits(&[2, 1, 0]));
    }

    #[test]
    fn capacity_is_symmetric_and_doubles_with_occurrences() {
        let m = three_city();
        let once = ObservationTrail::new(vec![vec!["b"], vec!["a"]]).unwrap();
        let twice = ObservationTrail::new(vec![vec!["b"], vec!["b"]]).unwrap();
        let spec = ActivationSpec::dropout();
        let (mut sum_once, mut sum_twice) = (0.0, 0.0);
        for k in 0..1000u64 {
            let c1 = transition_capacity(&m, &once, &spec, &RngStream::new(k));
            let c2 = transition_capacity(&m, &twice, &spec, &RngStream::new(k));
            for c in [&c1, &c2] {
                for i in 0..3 {
                    assert_eq!(c.0[i][i], 0.0);
                    for j in 0..3 {
                        assert_eq!(c.0[i][j], c.0[j][i]);
                        assert!(c.0[i][j] >= 0.0);
                    }
                }
            }
            sum_once += c1.0[1][2];
            sum_twice += c2.0[1][2];
        }
        let ratio = sum_twice / sum_once;
        assert!((ratio - 2.0).abs() < 0.15, "{ratio}");
    }

    #[test]
    fn kruskal_picks_heaviest_forest() {
        let cap = CapacityMatrix(vec![
            vec![0.0, 5.0, 1.0, 0.0],
            vec![5.0, 0.0, 3.0, 0.0],
            vec![1.0, 3.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0],
        ]);
        let edges = maximum_spanning_edges(&cap);
        assert_eq!(edges, vec![(0, 1, 5.0), (1, 2, 3.0)]);
        assert_eq!(state_weights(4, &edges), vec![5.0, 8.0, 3.0, 0.0]);
    }

    /// Components of the positive-weight graph via depth-first search.
    fn components(cap: &CapacityMatrix) -> (usize, usize) {
        let n = cap.n();
        let adj = |i: usize, j: usize| i != j && cap.0[i][j] > 0.0;
        let active: Vec<usize> = (0..n).filter(|&i| (0..n).any(|j| adj(i, j))).collect();
        let mut seen = vec![false; n];
        let mut count = 0;
        for &s in &active {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(v) = stack.pop() {
                let next: Vec<usize> = (0..n).filter(|&w| adj(v, w) && !seen[w]).collect();
                for w in next {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        (active.len(), count)
    }

    #[test]
    fn forest_edge_count_on_random_instances() {
        for seed in 0..40 {
            let inst = generate_instance(&SyntheticSpec {
                seed,
                episodes: 5,
                ..Default::default()
            })
            .unwrap();
            let cap = transition_capacity(
                &inst.model,
                &inst.trail,
                &ActivationSpec::dropout(),
                &RngStream::new(seed),
            );
            for layer in [
                cap.clone(),
                second_order_capacity(&cap, &inst.model.transitions),
            ] {
                let (active, comps) = components(&layer);
                assert_eq!(maximum_spanning_edges(&layer).len(), active - comps);
                for i in 0..layer.n() {
                    for j in 0..layer.n() {
                        assert_eq!(layer.0[i][j], layer.0[j][i]);
                        assert!(layer.0[i][j] >= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn three_city_selects_strong_b_emitter() {
        // Expected capacity: b occurs twice; E[median] per state is p/2, so
        // E[C] is proportional to p_a p_b: (A,B)=0.18, (A,C)=0.16, (B,C)=0.72.
        // The spanning tree keeps (B,C) and (A,B): B weighs 0.90, C 0.72,
        // A 0.18. The second layer is symmetric in the same way.
        let m = three_city();
        let trail = three_city_trail();
        let options = DropoutOptions {
            spec: ActivationSpec::dropout(),
            literal_pop: false,
        };
        let mut hits = [0usize; 3];
        for k in 0..200u64 {
            let p = dropout_function(&m, &trail, &options, &RngStream::new(k));
            for &s in p.must_traverse() {
                hits[s] += 1;
            }
        }
        assert!(hits[1] + hits[2] > 5 * hits[0], "{hits:?}");
        assert!(hits[1] > hits[2], "{hits:?}");
    }

    #[test]
    fn literal_pop_takes_lightest() {
        let cap = CapacityMatrix(vec![
            vec![0.0, 5.0, 1.0],
            vec![5.0, 0.0, 3.0],
            vec![1.0, 3.0, 0.0],
        ]);
        let ident = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let central = predicate_from_capacity(&cap, &ident, &[true; 3], 3, false);
        assert_eq!(central.must_traverse()[0], 1);
        let literal = predicate_from_capacity(&cap, &ident, &[true; 3], 3, true);
        assert_eq!(literal.must_traverse()[0], 2);
    }

    #[test]
    fn mandatory_states_capped_below_episodes() {
        let cap = CapacityMatrix(vec![
            vec![0.0, 5.0, 1.0],
            vec![5.0, 0.0, 3.0],
            vec![1.0, 3.0, 0.0],
        ]);
        let t = TppModel::uniform_transitions(3);
        assert!(predicate_from_capacity(&cap, &t, &[true; 3], 1, false)
            .must_traverse()
            .is_empty());
        assert!(
            predicate_from_capacity(&cap, &t, &[true; 3], 2, false)
                .must_traverse()
                .len()
                <= 1
        );
    }

    #[test]
    fn predicate_semantics() {
        let p = DropoutPredicate::new(vec![1], 3).unwrap();
        assert!(p.admits(&[0, 1, 2]));
        assert!(!p.admits(&[0, 2, 3]));
        assert!(DropoutPredicate::new(vec![0, 1, 2, 3], 3).is_err());
    }

    #[test]
    fn filtered_counts() {
        assert_eq!(
            filtered_arrangements(3, 3, &DropoutPredicate::always()).count(),
            6
        );
        let p = DropoutPredicate::new(vec![0], 3).unwrap();
        assert_eq!(filtered_arrangements(4, 3, &p).count(), 18);
        let joined: usize = (0..4)
            .map(|f| filtered_partition(4, 3, f, &p).count())
            .sum();
        assert_eq!(joined, 18);
        assert!(filtered_arrangements(4, 3, &p).all(|a| a.as_slice().contains(&0)));
        assert!(18 < arrangement_count(4, 3).unwrap());
    }
}
