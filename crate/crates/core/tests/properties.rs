use permapprox_core::activation::{
    energy_distance, rollout_activation, transition_activation, ActivationSpec,
};
use permapprox_core::arrangement::{arrangement_count, LexArrangements};
use permapprox_core::dropout::{filtered_arrangements, DropoutPredicate};
use permapprox_core::model::TppModel;
use permapprox_core::rng::RngStream;
use permapprox_core::rollout::clique_log_score;
use permapprox_core::tsp::{
    edge_activation, random_tour, two_local_improve, CostMatrix, Tour, TspOptions,
};
use proptest::prelude::*;
use std::collections::BTreeMap;

/// Product over k-subsets chosen by bitmask, no logarithms involved.
fn linear_clique_score(acts: &[f64], clique_size: usize) -> f64 {
    let n = acts.len();
    let k = clique_size.clamp(1, n);
    let masks: Vec<u32> = (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .collect();
    let constant = (1.0 / masks.len() as f64).exp();
    let product: f64 = masks
        .iter()
        .map(|m| {
            (0..n)
                .filter(|i| m & (1 << i) != 0)
                .map(|i| acts[i])
                .product::<f64>()
                * constant
        })
        .product();
    product.cbrt() * n as f64
}

proptest! {
    #[test]
    fn log_domain_rollout_matches_linear(
        acts in prop::collection::vec(1e-3f64..2.0, 1..=5),
        clique in 1usize..=5,
    ) {
        let log = clique_log_score(&acts, clique);
        let lin = linear_clique_score(&acts, clique);
        prop_assert!(((log.exp() - lin) / lin).abs() < 1e-9);
    }

    #[test]
    fn activations_respect_threshold(
        p in 0.001f64..=1.0,
        thresh in 0.0f64..0.6,
        draws in 1usize..8,
        seed in any::<u64>(),
    ) {
        let spec = ActivationSpec { draws, thresh, ..ActivationSpec::rollout() };
        let model = TppModel {
            states: vec!["s".into()],
            emissions: vec![BTreeMap::from([("x".to_string(), p)])],
            transitions: vec![vec![1.0]],
        };
        let acts = rollout_activation(&["x".to_string()], 0, &model, &spec, &RngStream::new(seed)).unwrap();
        prop_assert!(acts[0] >= thresh);
        let spec = ActivationSpec { draws, thresh, ..ActivationSpec::transition() };
        let act = transition_activation(p, &spec, &RngStream::new(seed)).unwrap();
        prop_assert!(act.value >= thresh);
    }

    #[test]
    fn energy_distance_symmetric_nonnegative(
        a in prop::collection::vec(-50.0f64..50.0, 1..12),
        b in prop::collection::vec(-50.0f64..50.0, 1..12),
    ) {
        let ab = energy_distance(&a, &b);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, energy_distance(&b, &a));
        prop_assert_eq!(energy_distance(&a, &a), 0.0);
    }

    #[test]
    fn arrangements_are_distinct_and_counted(n in 1usize..7, t in 1usize..7) {
        prop_assume!(t <= n);
        let all: Vec<_> = LexArrangements::new(n, t).collect();
        prop_assert_eq!(all.len() as u64, arrangement_count(n, t).unwrap());
        prop_assert!(all.iter().all(|a| a.is_distinct() && a.len() == t));
        prop_assert!(all.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn filtering_only_removes(n in 2usize..7, t in 1usize..7, must in 0usize..7) {
        prop_assume!(t <= n && must < n);
        let predicate = DropoutPredicate::new(vec![must], t).unwrap();
        let kept = filtered_arrangements(n, t, &predicate).count() as u64;
        let total = arrangement_count(n, t).unwrap();
        prop_assert!(kept <= total);
        prop_assert!(kept > 0);
        prop_assert_eq!(filtered_arrangements(n, t, &DropoutPredicate::always()).count() as u64, total);
        // Arrangements containing `must`: t * (n-1)!/(n-t)!
        prop_assert_eq!(kept, t as u64 * arrangement_count(n - 1, t - 1).unwrap());
    }

    #[test]
    fn two_opt_never_lengthens(seed in any::<u64>(), n in 4usize..12) {
        let cost = CostMatrix::random_uniform(n, seed).unwrap();
        let start = random_tour(n, &RngStream::new(seed).child(9));
        let out = two_local_improve(&cost, &start, 50, &TspOptions::default()).unwrap();
        prop_assert!(out.length(&cost) <= start.length(&cost) + 1e-12);
        let mut sorted = out.nodes.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn edge_activation_orders_by_log_cost(seed in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        let cost = CostMatrix::random_uniform(7, seed).unwrap();
        let ta = random_tour(7, &RngStream::new(a));
        let tb = random_tour(7, &RngStream::new(b));
        let log_cost = |t: &Tour| t.edges().map(|(x, y)| cost.get(x, y).ln()).sum::<f64>();
        if log_cost(&ta) < log_cost(&tb) - 1e-9 {
            prop_assert!(edge_activation(&cost, &ta) > edge_activation(&cost, &tb));
        }
    }
}
