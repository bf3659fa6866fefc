//! Lexicographic enumeration of k-arrangements (ordered selections of
//! distinct elements) of `0..n`.

use serde::{Deserialize, Serialize};

/// Ordered sequence of distinct state indices, one per episode.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateArrangement(pub Vec<usize>);

impl StateArrangement {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// True when no state repeats.
    pub fn is_distinct(&self) -> bool {
        let mut seen = self.0.clone();
        seen.sort_unstable();
        seen.windows(2).all(|w| w[0] != w[1])
    }
}

impl From<Vec<usize>> for StateArrangement {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// Number of length-`t` arrangements of `n` items, `n! / (n - t)!`, or `None`
/// on overflow.
pub fn arrangement_count(n: usize, t: usize) -> Option<u64> {
    if t > n {
        return Some(0);
    }
    ((n - t + 1)..=n).try_fold(1u64, |acc, k| acc.checked_mul(k as u64))
}

/// Streaming cursor over length-`t` arrangements of `0..n` in lexicographic
/// order, optionally pinned to a fixed first element so the space can be
/// split into `n` disjoint, ordered partitions.
#[derive(Debug, Clone)]
pub struct LexArrangements {
    n: usize,
    current: Vec<usize>,
    used: Vec<bool>,
    pinned: Option<usize>,
    started: bool,
    done: bool,
}

impl LexArrangements {
    pub fn new(n: usize, t: usize) -> Self {
        Self::build(n, t, None)
    }

    /// Only arrangements whose first element is `first`.
    pub fn with_first(n: usize, t: usize, first: usize) -> Self {
        Self::build(n, t, Some(first))
    }

    fn build(n: usize, t: usize, pinned: Option<usize>) -> Self {
        let done = t > n || t == 0 || pinned.is_some_and(|f| f >= n);
        Self {
            n,
            // Filled on the first advance.
            current: vec![usize::MAX; t],
            used: vec![false; n],
            pinned,
            started: false,
            done,
        }
    }

    fn len(&self) -> usize {
        self.current.len()
    }

    fn fill_from(&mut self, pos: usize) {
        let mut next = 0;
        for slot in pos..self.len() {
            while self.used[next] {
                next += 1;
            }
            self.current[slot] = next;
            self.used[next] = true;
        }
    }

    /// Advance to the next arrangement; `None` once the space is exhausted.
    pub fn advance(&mut self) -> Option<&[usize]> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            let start = match self.pinned {
                Some(first) => {
                    self.current[0] = first;
                    self.used[first] = true;
                    1
                }
                None => 0,
            };
            self.fill_from(start);
            return Some(&self.current);
        }
        let floor = usize::from(self.pinned.is_some());
        let t = self.len();
        let mut pos = t;
        while pos > floor {
            pos -= 1;
            let old = self.current[pos];
            self.used[old] = false;
            if let Some(next) = ((old + 1)..self.n).find(|&v| !self.used[v]) {
                self.current[pos] = next;
                self.used[next] = true;
                self.fill_from(pos + 1);
                return Some(&self.current);
            }
        }
        self.done = true;
        None
    }
}

impl Iterator for LexArrangements {
    type Item = StateArrangement;

    fn next(&mut self) -> Option<Self::Item> {
        self.advance().map(|a| StateArrangement(a.to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent enumeration: all t-tuples over 0..n, keep distinct, sort.
    fn brute(n: usize, t: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let total = n.pow(t as u32);
        for mut code in 0..total {
            let mut tuple = Vec::with_capacity(t);
            for _ in 0..t {
                tuple.push(code % n);
                code /= n;
            }
            tuple.reverse();
            let mut s = tuple.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() == t {
                out.push(tuple);
            }
        }
        out.sort();
        out
    }

    #[test]
    fn matches_brute_force_order() {
        for n in 1..=5 {
            for t in 1..=n {
                let got: Vec<Vec<usize>> = LexArrangements::new(n, t).map(|a| a.0).collect();
                assert_eq!(got, brute(n, t), "n={n} t={t}");
                assert_eq!(got.len() as u64, arrangement_count(n, t).unwrap());
            }
        }
    }

    #[test]
    fn pinned_partitions_concatenate_to_whole() {
        let (n, t) = (5, 3);
        let joined: Vec<_> = (0..n)
            .flat_map(|f| LexArrangements::with_first(n, t, f))
            .collect();
        let whole: Vec<_> = LexArrangements::new(n, t).collect();
        assert_eq!(joined, whole);
    }

    #[test]
    fn counts() {
        assert_eq!(arrangement_count(9, 9), Some(362_880));
        assert_eq!(arrangement_count(9, 3), Some(504));
        assert_eq!(arrangement_count(3, 4), Some(0));
        assert_eq!(arrangement_count(40, 40), None);
    }

    #[test]
    fn empty_spaces() {
        assert_eq!(LexArrangements::new(3, 4).count(), 0);
        assert_eq!(LexArrangements::new(3, 0).count(), 0);
        assert_eq!(LexArrangements::with_first(3, 2, 7).count(), 0);
    }

    #[test]
    fn distinctness() {
        assert!(StateArrangement(vec![2, 0, 1]).is_distinct());
        assert!(!StateArrangement(vec![2, 0, 2]).is_distinct());
    }
}
