//! Seeded experiment sweeps over solver settings, one CSV row per cell.
//!
//! Every cell at a given trail length sees the same instances and the same
//! solver seed per trial, so cells differ only in the setting being varied.

use std::time::{Duration, Instant};

use permapprox_core::arrangement::arrangement_count;
use permapprox_core::config::{AttentionOrder, MlaaConfig};
use permapprox_core::model::{generate_instance, SyntheticSpec};
use permapprox_core::rng::RngStream;
use permapprox_core::solver::{positional_error, solve};
use permapprox_core::tsp::{
    held_karp_oracle, partition_search, random_tour, two_local_improve, CostMatrix, TspOptions,
    HELD_KARP_MAX_NODES,
};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

const INSTANCE_KEY: u64 = 1;
const SOLVER_KEY: u64 = 2;
const TSP_INSTANCE_KEY: u64 = 3;
const TSP_SOLVER_KEY: u64 = 4;

/// A reproducible 64-bit seed derived from `master` and a key path.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    RngStream::new(master).derive(path).rng().next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub episodes_min: usize,
    pub episodes_max: usize,
    pub trials: usize,
    pub attention: Vec<AttentionOrder>,
    pub clique_sizes: Vec<usize>,
    pub repetitions: Vec<usize>,
    pub dropout: Vec<bool>,
    pub seed: u64,
    /// Instance generator; `episodes` and `seed` are overridden per trial.
    pub generator: SyntheticSpec,
    /// Solver settings shared by every cell; the swept fields are overridden.
    pub base: MlaaConfig,
    pub timing: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            episodes_min: 3,
            episodes_max: 9,
            trials: 200,
            attention: vec![AttentionOrder::First, AttentionOrder::Second],
            clique_sizes: vec![2, 3],
            repetitions: vec![1, 3],
            dropout: vec![true, false],
            seed: 0,
            generator: SyntheticSpec::default(),
            base: MlaaConfig::default(),
            timing: false,
        }
    }
}

/// One sweep cell's coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub episodes: usize,
    pub attention: AttentionOrder,
    pub clique_size: usize,
    pub repetitions: usize,
    pub dropout: bool,
}

impl SweepSpec {
    pub fn check(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Input(format!("invalid sweep: {m}")));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.episodes_min == 0 || self.episodes_min > self.episodes_max {
            return bad("episode range must be non-empty and start at 1 or more");
        }
        if self.episodes_max > self.generator.n_states {
            return bad("episode range exceeds the number of states");
        }
        if self.attention.is_empty()
            || self.clique_sizes.is_empty()
            || self.repetitions.is_empty()
            || self.dropout.is_empty()
        {
            return bad("every swept setting needs at least one value");
        }
        Ok(())
    }

    /// Cells in output order: episodes, attention, clique, repetitions,
    /// dropout, each in the order given.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for episodes in self.episodes_min..=self.episodes_max {
            for &attention in &self.attention {
                for &clique_size in &self.clique_sizes {
                    for &repetitions in &self.repetitions {
                        for &dropout in &self.dropout {
                            cells.push(Cell {
                                episodes,
                                attention,
                                clique_size,
                                repetitions,
                                dropout,
                            });
                        }
                    }
                }
            }
        }
        cells
    }
}

/// One aggregated sweep cell. Column order is the CSV header.
///
/// `fewer_scored_rate` is the share of trials that scored fewer arrangements
/// than exhaustive search would have (`full_space` per repetition);
/// `truth_survival` is the share of repetitions whose dropout predicate
/// admitted the hidden arrangement; `relaxed_rate` the share whose predicate
/// had to be dropped because it excluded every feasible arrangement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub episodes: usize,
    pub attention: AttentionOrder,
    pub clique_size: usize,
    pub repetitions: usize,
    pub dropout: String,
    pub trials: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub mean_scored: f64,
    pub full_space: u64,
    pub fewer_scored_rate: f64,
    pub truth_survival: f64,
    pub relaxed_rate: f64,
    pub mean_wall_ms: Option<f64>,
}

pub const RESULT_HEADER: &str =
    "episodes,attention,clique_size,repetitions,dropout,trials,mean_error,std_error,\
mean_scored,full_space,fewer_scored_rate,truth_survival,relaxed_rate,mean_wall_ms";

struct TrialOutcome {
    error: f64,
    scored: u64,
    survived: usize,
    relaxed: usize,
    wall: Duration,
}

pub fn on_off(flag: bool) -> String {
    if flag { "on" } else { "off" }.to_string()
}

fn run_trial(spec: &SweepSpec, cell: &Cell, trial: usize) -> CliResult<TrialOutcome> {
    let key = [cell.episodes as u64, trial as u64];
    let instance = generate_instance(&SyntheticSpec {
        episodes: cell.episodes,
        seed: derive_seed(spec.seed, &[INSTANCE_KEY, key[0], key[1]]),
        ..spec.generator.clone()
    })?;
    let config = MlaaConfig {
        attention: cell.attention,
        clique_size: cell.clique_size,
        repetitions: cell.repetitions,
        dropout_enabled: cell.dropout,
        seed: derive_seed(spec.seed, &[SOLVER_KEY, key[0], key[1]]),
        ..spec.base.clone()
    };
    let start = Instant::now();
    let result = solve(&instance.model, &instance.trail, &config)?;
    let wall = start.elapsed();
    let truth = instance.ground_truth.as_slice();
    Ok(TrialOutcome {
        error: positional_error(result.best.as_slice(), truth)?,
        scored: result.scored,
        survived: result
            .repetitions
            .iter()
            .filter(|r| r.must_traverse.iter().all(|m| truth.contains(m)))
            .count(),
        relaxed: result.repetitions.iter().filter(|r| r.relaxed).count(),
        wall,
    })
}

fn aggregate(spec: &SweepSpec, cell: &Cell, outcomes: &[TrialOutcome]) -> ResultRow {
    let n = outcomes.len() as f64;
    let mean_error = outcomes.iter().map(|o| o.error).sum::<f64>() / n;
    let std_error = if outcomes.len() > 1 {
        let var = outcomes
            .iter()
            .map(|o| (o.error - mean_error).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    let full_space = arrangement_count(spec.generator.n_states, cell.episodes).unwrap_or(u64::MAX);
    let exhaustive = full_space.saturating_mul(cell.repetitions as u64);
    let reps = n * cell.repetitions as f64;
    ResultRow {
        episodes: cell.episodes,
        attention: cell.attention,
        clique_size: cell.clique_size,
        repetitions: cell.repetitions,
        dropout: on_off(cell.dropout),
        trials: outcomes.len(),
        mean_error,
        std_error,
        mean_scored: outcomes.iter().map(|o| o.scored as f64).sum::<f64>() / n,
        full_space,
        fewer_scored_rate: outcomes.iter().filter(|o| o.scored < exhaustive).count() as f64 / n,
        truth_survival: outcomes.iter().map(|o| o.survived).sum::<usize>() as f64 / reps,
        relaxed_rate: outcomes.iter().map(|o| o.relaxed).sum::<usize>() as f64 / reps,
        mean_wall_ms: spec.timing.then(|| {
            outcomes
                .iter()
                .map(|o| o.wall.as_secs_f64() * 1e3)
                .sum::<f64>()
                / n
        }),
    }
}

/// Runs every (cell, trial) pair in parallel and aggregates in cell order.
pub fn run_sweep(spec: &SweepSpec) -> CliResult<Vec<ResultRow>> {
    spec.check()?;
    let cells = spec.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    let outcomes: Vec<TrialOutcome> = jobs
        .par_iter()
        .map(|&(c, t)| run_trial(spec, &cells[c], t))
        .collect::<CliResult<_>>()?;
    Ok(cells
        .iter()
        .zip(outcomes.chunks(spec.trials))
        .map(|(cell, chunk)| aggregate(spec, cell, chunk))
        .collect())
}

/// Serializes rows with the fixed header.
pub fn to_csv<T: Serialize>(rows: &[T], header: &str) -> CliResult<String> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    let body = writer
        .into_inner()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let body = String::from_utf8(body).map_err(|e| CliError::Failed(e.to_string()))?;
    Ok(format!("{header}\n{body}"))
}

/// Parses rows back, checking the header first.
pub fn from_csv<T: for<'de> Deserialize<'de>>(text: &str, header: &str) -> CliResult<Vec<T>> {
    let first = text.lines().next().unwrap_or_default();
    if first != header {
        return Err(CliError::Input(format!("unexpected CSV header {first:?}")));
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize()
        .map(|r| r.map_err(CliError::from))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TspMode {
    /// Best of repeated random partitions, reported at each repetition count.
    Partition,
    /// Score-guided 2-opt from a random tour.
    TwoOpt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TspSweepSpec {
    pub mode: TspMode,
    pub nodes: usize,
    pub instances: usize,
    pub subset_size: usize,
    pub repetitions: Vec<usize>,
    pub max_passes: usize,
    pub options: TspOptions,
    pub seed: u64,
}

impl Default for TspSweepSpec {
    fn default() -> Self {
        Self {
            mode: TspMode::Partition,
            nodes: 9,
            instances: 20,
            subset_size: 3,
            repetitions: vec![10, 100, 1000],
            max_passes: 10_000,
            options: TspOptions::default(),
            seed: 0,
        }
    }
}

/// One instance at one repetition count. `start_length` is the random
/// starting tour in 2-opt mode and empty otherwise; the optimum and factor
/// are empty above the exact-solver size limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TspRow {
    pub mode: TspMode,
    pub instance: usize,
    pub nodes: usize,
    pub subset_size: usize,
    pub repetitions: usize,
    pub start_length: Option<f64>,
    pub length: f64,
    pub optimal: Option<f64>,
    pub factor: Option<f64>,
}

pub const TSP_HEADER: &str =
    "mode,instance,nodes,subset_size,repetitions,start_length,length,optimal,factor";

fn tsp_instance(spec: &TspSweepSpec, i: usize) -> CliResult<Vec<TspRow>> {
    let key = [spec.nodes as u64, i as u64];
    let cost = CostMatrix::random_uniform(
        spec.nodes,
        derive_seed(spec.seed, &[TSP_INSTANCE_KEY, key[0], key[1]]),
    )?;
    let solver_seed = derive_seed(spec.seed, &[TSP_SOLVER_KEY, key[0], key[1]]);
    let optimal = if spec.nodes <= HELD_KARP_MAX_NODES {
        Some(held_karp_oracle(&cost)?.1)
    } else {
        None
    };
    let row = |repetitions, start_length, length: f64| TspRow {
        mode: spec.mode,
        instance: i,
        nodes: spec.nodes,
        subset_size: spec.subset_size,
        repetitions,
        start_length,
        length,
        optimal,
        factor: optimal.map(|o| length / o),
    };
    match spec.mode {
        TspMode::Partition => {
            let most = spec.repetitions.iter().copied().max().unwrap_or(0);
            let run = partition_search(&cost, spec.subset_size, most, solver_seed, &spec.options)?;
            Ok(spec
                .repetitions
                .iter()
                .map(|&r| row(r, None, run.best_so_far[r - 1]))
                .collect())
        }
        TspMode::TwoOpt => {
            let start = random_tour(spec.nodes, &RngStream::new(solver_seed));
            let improved = two_local_improve(&cost, &start, spec.max_passes, &spec.options)?;
            Ok(vec![row(
                0,
                Some(start.length(&cost)),
                improved.length(&cost),
            )])
        }
    }
}

pub fn run_tsp_sweep(spec: &TspSweepSpec) -> CliResult<Vec<TspRow>> {
    if spec.instances == 0 {
        return Err(CliError::Input(
            "invalid sweep: instances must be at least 1".into(),
        ));
    }
    if spec.mode == TspMode::Partition
        && (spec.repetitions.is_empty() || spec.repetitions.contains(&0))
    {
        return Err(CliError::Input(
            "invalid sweep: repetition counts must be positive".into(),
        ));
    }
    let per_instance: Vec<Vec<TspRow>> = (0..spec.instances)
        .into_par_iter()
        .map(|i| tsp_instance(spec, i))
        .collect::<CliResult<_>>()?;
    Ok(per_instance.into_iter().flatten().collect())
}
