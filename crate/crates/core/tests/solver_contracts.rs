use permapprox_core::arrangement::arrangement_count;
use permapprox_core::config::{AttentionOrder, MlaaConfig};
use permapprox_core::model::{exact_map_oracle, generate_instance, OracleOptions, SyntheticSpec};
use permapprox_core::solver::{positional_error, solve};
use permapprox_core::tsp::{partition_search, CostMatrix, TspOptions};
use proptest::prelude::*;

fn run_with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn noiseless_instances_match_oracle() {
    let mut trials = 0;
    for n in 3..=5 {
        for seed in 0..67u64 {
            let inst = generate_instance(&SyntheticSpec::noiseless(n, n, 0.95, seed)).unwrap();
            let config = MlaaConfig {
                seed,
                ..Default::default()
            };
            let got = solve(&inst.model, &inst.trail, &config).unwrap();
            let oracle =
                exact_map_oracle(&inst.model, &inst.trail, &OracleOptions::default()).unwrap();
            assert_eq!(got.best, oracle.arrangement, "n={n} seed={seed}");
            assert_eq!(got.best, inst.ground_truth);
            trials += 1;
        }
    }
    assert!(trials >= 200);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let inst = generate_instance(&SyntheticSpec {
        episodes: 7,
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    for attention in [AttentionOrder::First, AttentionOrder::Second] {
        let config = MlaaConfig {
            repetitions: 3,
            seed: 5,
            attention,
            ..Default::default()
        };
        let one = run_with_threads(1, || solve(&inst.model, &inst.trail, &config).unwrap());
        let many = run_with_threads(4, || solve(&inst.model, &inst.trail, &config).unwrap());
        assert_eq!(
            serde_json::to_string(&one).unwrap(),
            serde_json::to_string(&many).unwrap()
        );
    }
    let cost = CostMatrix::random_uniform(12, 3).unwrap();
    let one = run_with_threads(1, || {
        partition_search(&cost, 3, 200, 8, &TspOptions::default()).unwrap()
    });
    let many = run_with_threads(4, || {
        partition_search(&cost, 3, 200, 8, &TspOptions::default()).unwrap()
    });
    assert_eq!(one, many);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn unfiltered_search_scores_every_arrangement(n in 3usize..8, t in 1usize..6, seed in 0u64..1000) {
        prop_assume!(t <= n);
        let inst = generate_instance(&SyntheticSpec { n_states: n, episodes: t, seed, ..Default::default() }).unwrap();
        let config = MlaaConfig { dropout_enabled: false, ..Default::default() };
        let r = solve(&inst.model, &inst.trail, &config).unwrap();
        prop_assert_eq!(r.scored, arrangement_count(n, t).unwrap());
        prop_assert_eq!(r.pruned, 0);

        let filtered = solve(&inst.model, &inst.trail, &MlaaConfig::default()).unwrap();
        let rep = &filtered.repetitions[0];
        prop_assert!(rep.must_traverse.iter().all(|m| filtered.best.as_slice().contains(m)));
        if !rep.relaxed {
            prop_assert_eq!(rep.scored + rep.pruned, arrangement_count(n, t).unwrap());
        }
    }

    #[test]
    fn positional_error_is_a_fraction(seed in 0u64..500, t in 3usize..7) {
        let inst = generate_instance(&SyntheticSpec { episodes: t, seed, ..Default::default() }).unwrap();
        let r = solve(&inst.model, &inst.trail, &MlaaConfig { seed, ..Default::default() }).unwrap();
        let e = positional_error(r.best.as_slice(), inst.ground_truth.as_slice()).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!(r.best.is_distinct());
    }
}
