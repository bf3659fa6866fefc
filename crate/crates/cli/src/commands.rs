//! Command bodies. Each returns a serializable report; rendering to text or
//! JSON happens separately so the same report backs both forms.

use std::fmt::Write as _;

use permapprox_core::config::{AttentionOrder, MlaaConfig};
use permapprox_core::model::{
    exact_map_oracle, generate_instance, LogScore, OracleOptions, SyntheticSpec,
};
use permapprox_core::real_valued::solve_real_valued;
use permapprox_core::rng::RngStream;
use permapprox_core::solver::{positional_error, solve, SolveResult};
use permapprox_core::tsp::{
    held_karp_oracle, partition_search, random_tour, two_local_improve, CostMatrix, Tour,
    TspOptions, HELD_KARP_MAX_NODES,
};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::io::{to_json, BundleFile, Model, Problem, Trail};
use crate::sweep::on_off;

/// Where a run's seed came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedSource {
    Flag,
    Entropy,
}

/// The given seed, or a fresh one from the operating system.
pub fn resolve_seed(flag: Option<u64>) -> (u64, SeedSource) {
    match flag {
        Some(s) => (s, SeedSource::Flag),
        None => (rand::random(), SeedSource::Entropy),
    }
}

pub fn seed_line(seed: u64, source: SeedSource) -> String {
    match source {
        SeedSource::Flag => format!("seed {seed}"),
        SeedSource::Entropy => format!("seed {seed} (entropy; pass --seed {seed} to reproduce)"),
    }
}

pub fn gen_bundle(spec: &SyntheticSpec) -> CliResult<String> {
    let instance = generate_instance(spec)?;
    Ok(to_json(&BundleFile::from_instance(
        &instance,
        Some(spec.clone()),
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepetitionReport {
    pub arrangement: Vec<String>,
    pub log_score: LogScore,
    pub must_traverse: Vec<String>,
    pub relaxed: bool,
    pub scored: u64,
    pub pruned: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub seed: u64,
    pub seed_source: SeedSource,
    pub input: &'static str,
    pub attention: AttentionOrder,
    pub clique_size: usize,
    pub repetitions: usize,
    pub dropout: String,
    pub best: Vec<String>,
    pub best_indices: Vec<usize>,
    pub log_score: LogScore,
    pub scored: u64,
    pub pruned: u64,
    pub vote_fallback: bool,
    pub per_repetition: Vec<RepetitionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positional_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

pub fn solve_problem(
    problem: &Problem,
    config: &MlaaConfig,
    seed_source: SeedSource,
    timing: bool,
) -> CliResult<SolveReport> {
    let (result, input): (SolveResult, _) = match (&problem.model, &problem.trail) {
        (Model::Discrete(m), Trail::Discrete(t)) => (solve(m, t, config)?, "discrete"),
        (Model::Real(m), Trail::Real(t)) => (solve_real_valued(m, t, config)?, "real-valued"),
        _ => {
            return Err(CliError::Input(
                "model and trail kinds differ: token emissions need `episodes`, distributions need `episodes_real`"
                    .into(),
            ))
        }
    };
    let states = problem.model.states();
    let names = |idx: &[usize]| idx.iter().map(|&i| states[i].clone()).collect::<Vec<_>>();
    let positional_error = match &problem.ground_truth {
        Some(truth) => Some(positional_error(result.best.as_slice(), truth)?),
        None => None,
    };
    Ok(SolveReport {
        seed: config.seed,
        seed_source,
        input,
        attention: config.attention,
        clique_size: config.clique_size,
        repetitions: config.repetitions,
        dropout: on_off(config.dropout_enabled),
        best: names(result.best.as_slice()),
        best_indices: result.best.0.clone(),
        log_score: result.score,
        scored: result.scored,
        pruned: result.pruned,
        vote_fallback: result.vote_fallback,
        per_repetition: result
            .repetitions
            .iter()
            .map(|r| RepetitionReport {
                arrangement: names(r.arrangement.as_slice()),
                log_score: r.score,
                must_traverse: names(&r.must_traverse),
                relaxed: r.relaxed,
                scored: r.scored,
                pruned: r.pruned,
            })
            .collect(),
        positional_error,
        wall_ms: timing.then_some(result.wall_time.as_secs_f64() * 1e3),
    })
}

pub fn render_solve(r: &SolveReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", seed_line(r.seed, r.seed_source));
    let _ = writeln!(out, "best: {}", r.best.join(" -> "));
    let _ = writeln!(out, "log score: {}", r.log_score);
    let _ = writeln!(
        out,
        "scored {}, pruned {} ({} repetition{}, {} attention, clique {}, dropout {})",
        r.scored,
        r.pruned,
        r.repetitions,
        if r.repetitions == 1 { "" } else { "s" },
        r.attention,
        r.clique_size,
        r.dropout
    );
    if r.vote_fallback {
        let _ = writeln!(out, "majority vote discarded; best single repetition kept");
    }
    if let Some(e) = r.positional_error {
        let _ = writeln!(out, "positional error vs ground truth: {e}");
    }
    if let Some(ms) = r.wall_ms {
        let _ = writeln!(out, "wall time: {ms:.3} ms");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub status: &'static str,
    pub best: Vec<String>,
    pub best_indices: Vec<usize>,
    pub log_score: LogScore,
    pub evaluated: u64,
    pub full_bernoulli: bool,
}

pub fn oracle_problem(problem: &Problem, options: &OracleOptions) -> CliResult<OracleReport> {
    let (Model::Discrete(model), Trail::Discrete(trail)) = (&problem.model, &problem.trail) else {
        return Err(CliError::Input(
            "the exact oracle needs a token-emission model and trail".into(),
        ));
    };
    model.validate()?;
    let r = exact_map_oracle(model, trail, options)?;
    Ok(OracleReport {
        status: if r.feasible { "ok" } else { "impossible" },
        best: model.names(&r.arrangement),
        best_indices: r.arrangement.0.clone(),
        log_score: r.score,
        evaluated: r.evaluated,
        full_bernoulli: options.full_bernoulli,
    })
}

pub fn render_oracle(r: &OracleReport) -> String {
    if r.status == "impossible" {
        return format!(
            "impossible: no arrangement can produce the trail ({} evaluated)\n",
            r.evaluated
        );
    }
    format!(
        "best: {}\nlog score: {}\nevaluated {} arrangements\n",
        r.best.join(" -> "),
        r.log_score,
        r.evaluated
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct TspRequest {
    pub subset_size: usize,
    pub repetitions: usize,
    pub improve: bool,
    pub random_start: bool,
    pub max_passes: usize,
    pub options: TspOptions,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TspReport {
    pub seed: u64,
    pub seed_source: SeedSource,
    pub nodes: usize,
    pub start: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<usize>,
    pub improved: bool,
    pub tour: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_length: Option<f64>,
    pub length: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
}

pub fn tsp_solve(
    cost: &CostMatrix,
    req: &TspRequest,
    seed_source: SeedSource,
) -> CliResult<TspReport> {
    let (tour, start) = if req.random_start {
        (random_tour(cost.n(), &RngStream::new(req.seed)), "random")
    } else {
        let run = partition_search(
            cost,
            req.subset_size,
            req.repetitions,
            req.seed,
            &req.options,
        )?;
        (run.tour, "partition")
    };
    let start_length = tour.length(cost);
    let tour: Tour = if req.improve {
        two_local_improve(cost, &tour, req.max_passes, &req.options)?
    } else {
        tour
    };
    let length = tour.length(cost);
    let optimal = if cost.n() <= HELD_KARP_MAX_NODES {
        Some(held_karp_oracle(cost)?.1)
    } else {
        None
    };
    Ok(TspReport {
        seed: req.seed,
        seed_source,
        nodes: cost.n(),
        start,
        subset_size: (!req.random_start).then_some(req.subset_size),
        repetitions: (!req.random_start).then_some(req.repetitions),
        improved: req.improve,
        tour: tour.nodes,
        start_length: req.improve.then_some(start_length),
        length,
        optimal,
        factor: optimal.map(|o| length / o),
    })
}

pub fn render_tsp(r: &TspReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", seed_line(r.seed, r.seed_source));
    let tour: Vec<String> = r.tour.iter().map(ToString::to_string).collect();
    let _ = writeln!(out, "tour: {}", tour.join(" "));
    if let Some(start) = r.start_length {
        let _ = writeln!(out, "length before 2-opt: {start}");
    }
    let _ = writeln!(out, "length: {}", r.length);
    match (r.optimal, r.factor) {
        (Some(opt), Some(f)) => {
            let _ = writeln!(out, "optimal: {opt}\napprox factor: {f}");
        }
        _ => {
            let _ = writeln!(
                out,
                "approx factor: not computed above {HELD_KARP_MAX_NODES} nodes"
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{parse_json, BundleFile};
    use std::path::Path;

    const THREE_CITY: &str = r#"{
        "model": {"states": ["A", "B", "C"],
                  "emissions": {"A": {"a": 0.1, "b": 0.2}, "B": {"b": 0.9, "c": 0.3}, "C": {"b": 0.8, "d": 0.5}},
                  "transitions": [[0.3333333333333333, 0.3333333333333333, 0.3333333333333334],
                                  [0.3333333333333333, 0.3333333333333333, 0.3333333333333334],
                                  [0.3333333333333333, 0.3333333333333333, 0.3333333333333334]]},
        "trail": {"episodes": [["a"], ["b"], ["b", "d"]]},
        "ground_truth": ["A", "B", "C"]}"#;

    fn three_city() -> Problem {
        parse_json::<BundleFile>(Path::new("three.json"), THREE_CITY)
            .unwrap()
            .into_problem()
            .unwrap()
    }

    #[test]
    fn three_city_solve_and_oracle_agree() {
        let p = three_city();
        let config = MlaaConfig {
            seed: 1,
            ..MlaaConfig::default()
        };
        let r = solve_problem(&p, &config, SeedSource::Flag, false).unwrap();
        assert_eq!(r.best, vec!["A", "B", "C"]);
        assert_eq!(r.positional_error, Some(0.0));
        let o = oracle_problem(&p, &OracleOptions::default()).unwrap();
        assert_eq!(o.best, r.best);
        assert_eq!(o.status, "ok");
        // ln .1 + ln .9 + ln .8 + ln .5 + 2 ln(1/3)
        let exact = (0.1f64 * 0.9 * 0.8 * 0.5).ln() + 2.0 * (1.0f64 / 3.0).ln();
        assert!((o.log_score.value() - exact).abs() < 1e-12);
    }

    #[test]
    fn dropout_off_scores_more() {
        let p = three_city();
        let on = solve_problem(&p, &MlaaConfig::default(), SeedSource::Flag, false).unwrap();
        let off = MlaaConfig {
            dropout_enabled: false,
            ..MlaaConfig::default()
        };
        let off = solve_problem(&p, &off, SeedSource::Flag, false).unwrap();
        assert_eq!(on.best, off.best);
        // Three episodes over three states visit every state, so no
        // must-traverse set can exclude anything here.
        assert_eq!((on.scored, off.scored), (6, 6));

        let inst = permapprox_core::model::generate_instance(&SyntheticSpec {
            episodes: 4,
            seed: 3,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let p = Problem {
            model: Model::Discrete(inst.model),
            trail: Trail::Discrete(inst.trail),
            ground_truth: Some(inst.ground_truth.0),
        };
        let on = solve_problem(&p, &MlaaConfig::default(), SeedSource::Flag, false).unwrap();
        let off = MlaaConfig {
            dropout_enabled: false,
            ..MlaaConfig::default()
        };
        let off = solve_problem(&p, &off, SeedSource::Flag, false).unwrap();
        assert_eq!(off.scored, 3024);
        assert!(on.scored < off.scored);
    }

    #[test]
    fn second_order_recorded() {
        let config = MlaaConfig {
            attention: AttentionOrder::Second,
            ..MlaaConfig::default()
        };
        let r = solve_problem(&three_city(), &config, SeedSource::Flag, false).unwrap();
        assert!(to_json(&r).contains("\"attention\": \"second\""));
        assert!(render_solve(&r).contains("second attention"));
    }

    #[test]
    fn impossible_trail_reported() {
        let mut p = three_city();
        p.trail = Trail::Discrete(
            permapprox_core::model::ObservationTrail::new(vec![vec!["zzz"]]).unwrap(),
        );
        let o = oracle_problem(&p, &OracleOptions::default()).unwrap();
        assert_eq!(o.status, "impossible");
        assert!(render_oracle(&o).starts_with("impossible"));
        let err = solve_problem(&p, &MlaaConfig::default(), SeedSource::Flag, false).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::exit::INFEASIBLE);
    }

    #[test]
    fn tsp_factor_only_when_exact_is_possible() {
        let req = TspRequest {
            subset_size: 3,
            repetitions: 10,
            improve: false,
            random_start: false,
            max_passes: 100,
            options: TspOptions::default(),
            seed: 5,
        };
        let small = tsp_solve(
            &CostMatrix::random_uniform(9, 1).unwrap(),
            &req,
            SeedSource::Flag,
        )
        .unwrap();
        assert!(small.factor.unwrap() >= 1.0 - 1e-12);
        let big = tsp_solve(
            &CostMatrix::random_uniform(20, 1).unwrap(),
            &req,
            SeedSource::Flag,
        )
        .unwrap();
        assert!(big.factor.is_none() && big.length > 0.0);
        assert!(!to_json(&big).contains("factor"));
    }

    #[test]
    fn improve_from_random_start_never_lengthens() {
        let cost = CostMatrix::random_uniform(10, 3).unwrap();
        for seed in 0..10 {
            let req = TspRequest {
                subset_size: 3,
                repetitions: 1,
                improve: true,
                random_start: true,
                max_passes: 1000,
                options: TspOptions::default(),
                seed,
            };
            let r = tsp_solve(&cost, &req, SeedSource::Flag).unwrap();
            assert!(r.length <= r.start_length.unwrap());
        }
    }

    #[test]
    fn entropy_seed_is_announced() {
        let (seed, source) = resolve_seed(None);
        assert_eq!(source, SeedSource::Entropy);
        assert!(seed_line(seed, source).contains(&format!("--seed {seed}")));
        assert_eq!(resolve_seed(Some(4)), (4, SeedSource::Flag));
    }
}
