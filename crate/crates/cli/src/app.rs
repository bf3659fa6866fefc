//! Argument definitions and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use permapprox_core::activation::HeuristicMode;
use permapprox_core::config::{AttentionOrder, MlaaConfig};
use permapprox_core::model::{OracleOptions, SyntheticSpec, DEFAULT_ARRANGEMENT_CAP};
use permapprox_core::tsp::TspOptions;

use crate::bench;
use crate::commands::{
    gen_bundle, oracle_problem, render_oracle, render_solve, render_tsp, resolve_seed, seed_line,
    solve_problem, tsp_solve, TspRequest,
};
use crate::error::{exit, CliError, CliResult};
use crate::io::{emit, load_costs, load_problem, to_json, write_file};
use crate::sweep::{
    run_sweep, run_tsp_sweep, to_csv, SweepSpec, TspMode, TspSweepSpec, RESULT_HEADER, TSP_HEADER,
};

#[derive(Debug, Parser)]
#[command(
    name = "permapprox",
    version,
    about = "Randomized permutation search for route reconstruction and tours"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random instance bundle (model, trail, hidden arrangement).
    Gen(GenArgs),
    /// Find the best state arrangement for a trail.
    Solve(SolveArgs),
    /// Exhaustive maximum-likelihood arrangement.
    Oracle(OracleArgs),
    /// Error curves over trail length and solver settings, as CSV.
    Sweep(SweepArgs),
    /// Build a tour from a cost matrix or point set.
    Tsp(TspArgs),
    /// Approximation factors over seeded random tour instances, as CSV.
    TspSweep(TspSweepArgs),
    /// Named acceptance experiments.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Write the result here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing output file.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 9)]
    pub states: usize,
    #[arg(long, default_value_t = 7)]
    pub episodes: usize,
    /// Upper bound on distinct tokens per state.
    #[arg(long, default_value_t = 6)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 24)]
    pub vocab: usize,
    #[arg(long, default_value_t = 0.1)]
    pub p_lo: f64,
    #[arg(long, default_value_t = 0.9)]
    pub p_hi: f64,
    /// Give each state its own tokens and emit all of them every episode.
    #[arg(long)]
    pub noiseless: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gaussian draws per activation (rollout, transition and dropout).
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub thresh_rollout: Option<f64>,
    #[arg(long)]
    pub thresh_transition: Option<f64>,
    #[arg(long, default_value_t = 3)]
    pub clique_size: usize,
    #[arg(long, default_value = "first")]
    pub attention: AttentionOrder,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, value_enum, default_value = "on")]
    pub dropout: Switch,
    /// Keep the least central state from each spanning-tree ranking.
    #[arg(long)]
    pub literal_pop: bool,
    /// Score zero-probability transitions at the threshold instead of rejecting them.
    #[arg(long)]
    pub soft_transitions: bool,
    /// Use min(z, 3) for Gaussian readings instead of the closeness score.
    #[arg(long)]
    pub literal_heuristic: bool,
    /// Largest search space accepted.
    #[arg(long, default_value_t = DEFAULT_ARRANGEMENT_CAP)]
    pub cap: u64,
    /// Include wall time in the output.
    #[arg(long)]
    pub timing: bool,
}

impl SearchArgs {
    fn base_config(&self) -> MlaaConfig {
        let mut c = MlaaConfig::default();
        if let Some(d) = self.draws {
            c.rollout.draws = d;
            c.transition.draws = d;
            c.dropout.draws = d;
        }
        if let Some(t) = self.thresh_rollout {
            c.rollout.thresh = t;
        }
        if let Some(t) = self.thresh_transition {
            c.transition.thresh = t;
        }
        c.clique_size = self.clique_size;
        c.attention = self.attention;
        c.repetitions = self.reps;
        c.dropout_enabled = self.dropout.on();
        c.literal_pop = self.literal_pop;
        c.soft_transitions = self.soft_transitions;
        if self.literal_heuristic {
            c.heuristic_mode = HeuristicMode::Literal;
        }
        c.cap = self.cap;
        c
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Model file, or an instance bundle when TRAIL is omitted.
    pub model: PathBuf,
    pub trail: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Model file, or an instance bundle when TRAIL is omitted.
    pub model: PathBuf,
    pub trail: Option<PathBuf>,
    /// Also count the probability of not emitting each unobserved token.
    #[arg(long)]
    pub full_bernoulli: bool,
    #[arg(long, default_value_t = DEFAULT_ARRANGEMENT_CAP)]
    pub cap: u64,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 3)]
    pub episodes_min: usize,
    #[arg(long, default_value_t = 9)]
    pub episodes_max: usize,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "first,second")]
    pub attention: Vec<AttentionOrder>,
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    pub clique_size: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,3")]
    pub reps: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "on,off")]
    pub dropout: Vec<Switch>,
    #[arg(long, default_value_t = 9)]
    pub states: usize,
    #[arg(long, default_value_t = 6)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 24)]
    pub vocab: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub thresh_rollout: Option<f64>,
    #[arg(long)]
    pub thresh_transition: Option<f64>,
    #[arg(long)]
    pub literal_pop: bool,
    #[arg(long)]
    pub soft_transitions: bool,
    /// Fill the mean_wall_ms column.
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct TspArgs {
    /// JSON with `costs` (square matrix) or `points` (x, y pairs).
    pub costs: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub subset_size: usize,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Run score-guided 2-opt on the tour.
    #[arg(long)]
    pub improve: bool,
    /// Start from a seeded random tour instead of partition search.
    #[arg(long)]
    pub random_start: bool,
    #[arg(long, default_value_t = 10_000)]
    pub max_passes: usize,
    /// Use the cost ratio exactly as printed in the original scoring rule.
    #[arg(long)]
    pub literal_ratio: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TspModeArg {
    Partition,
    TwoOpt,
}

#[derive(Debug, Args)]
pub struct TspSweepArgs {
    #[arg(long, value_enum, default_value = "partition")]
    pub mode: TspModeArg,
    #[arg(long, default_value_t = 9)]
    pub nodes: usize,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 3)]
    pub subset_size: usize,
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
    pub reps: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub max_passes: usize,
    #[arg(long)]
    pub literal_ratio: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Show the registered cards.
    List,
    /// Run one card, or all of them with --all.
    Run {
        #[arg(required_unless_present = "all", conflicts_with = "all")]
        name: Option<String>,
        #[arg(long)]
        all: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Evidence goes to <dir>/<card>/seed-<seed>.csv.
        #[arg(long, default_value = "results")]
        results_dir: PathBuf,
    },
}

fn print_or_json<T: serde::Serialize>(
    report: &T,
    text: String,
    json: bool,
    output: &OutputArgs,
) -> CliResult<()> {
    let body = to_json(report);
    match (&output.out, json) {
        (Some(path), _) => {
            write_file(path, body.as_bytes(), output.force)?;
            if !json {
                print!("{text}");
            }
            Ok(())
        }
        (None, true) => emit(None, &body, false),
        (None, false) => emit(None, &text, false),
    }
}

/// Runs one parsed command and returns the process exit status.
pub fn run(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Gen(a) => {
            let (seed, source) = resolve_seed(a.seed);
            let spec = SyntheticSpec {
                n_states: a.states,
                max_tokens_per_state: a.max_tokens,
                vocab_size: a.vocab,
                p_lo: a.p_lo,
                p_hi: a.p_hi,
                episodes: a.episodes,
                seed,
                noiseless: a.noiseless,
            };
            let bundle = gen_bundle(&spec)?;
            emit(a.output.out.as_ref(), &bundle, a.output.force)?;
            if let Some(path) = &a.output.out {
                println!("{}", seed_line(seed, source));
                println!(
                    "wrote {} ({} states, {} episodes)",
                    path.display(),
                    a.states,
                    a.episodes
                );
            }
            Ok(exit::OK)
        }
        Command::Solve(a) => {
            let problem = load_problem(&a.model, a.trail.as_deref())?;
            let (seed, source) = resolve_seed(a.search.seed);
            let config = MlaaConfig {
                seed,
                ..a.search.base_config()
            };
            let report = solve_problem(&problem, &config, source, a.search.timing)?;
            print_or_json(&report, render_solve(&report), a.json, &a.output)?;
            Ok(exit::OK)
        }
        Command::Oracle(a) => {
            let problem = load_problem(&a.model, a.trail.as_deref())?;
            let options = OracleOptions {
                cap: a.cap,
                full_bernoulli: a.full_bernoulli,
            };
            let report = oracle_problem(&problem, &options)?;
            print_or_json(&report, render_oracle(&report), a.json, &a.output)?;
            Ok(if report.status == "ok" {
                exit::OK
            } else {
                exit::INFEASIBLE
            })
        }
        Command::Sweep(a) => {
            let (seed, source) = resolve_seed(a.seed);
            let search = SearchArgs {
                seed: Some(seed),
                draws: a.draws,
                thresh_rollout: a.thresh_rollout,
                thresh_transition: a.thresh_transition,
                clique_size: 3,
                attention: AttentionOrder::First,
                reps: 1,
                dropout: Switch::On,
                literal_pop: a.literal_pop,
                soft_transitions: a.soft_transitions,
                literal_heuristic: false,
                cap: DEFAULT_ARRANGEMENT_CAP,
                timing: a.timing,
            };
            let spec = SweepSpec {
                episodes_min: a.episodes_min,
                episodes_max: a.episodes_max,
                trials: a.trials,
                attention: a.attention,
                clique_sizes: a.clique_size,
                repetitions: a.reps,
                dropout: a.dropout.iter().map(|d| d.on()).collect(),
                seed,
                generator: SyntheticSpec {
                    n_states: a.states,
                    max_tokens_per_state: a.max_tokens,
                    vocab_size: a.vocab,
                    ..SyntheticSpec::default()
                },
                base: search.base_config(),
                timing: a.timing,
            };
            let csv = to_csv(&run_sweep(&spec)?, RESULT_HEADER)?;
            eprintln!("{}", seed_line(seed, source));
            emit(a.output.out.as_ref(), &csv, a.output.force)?;
            Ok(exit::OK)
        }
        Command::Tsp(a) => {
            let cost = load_costs(&a.costs)?;
            let (seed, source) = resolve_seed(a.seed);
            let req = TspRequest {
                subset_size: a.subset_size,
                repetitions: a.reps,
                improve: a.improve,
                random_start: a.random_start,
                max_passes: a.max_passes,
                options: TspOptions {
                    literal_ratio: a.literal_ratio,
                },
                seed,
            };
            let report = tsp_solve(&cost, &req, source)?;
            print_or_json(&report, render_tsp(&report), a.json, &a.output)?;
            Ok(exit::OK)
        }
        Command::TspSweep(a) => {
            let (seed, source) = resolve_seed(a.seed);
            let spec = TspSweepSpec {
                mode: match a.mode {
                    TspModeArg::Partition => TspMode::Partition,
                    TspModeArg::TwoOpt => TspMode::TwoOpt,
                },
                nodes: a.nodes,
                instances: a.instances,
                subset_size: a.subset_size,
                repetitions: a.reps,
                max_passes: a.max_passes,
                options: TspOptions {
                    literal_ratio: a.literal_ratio,
                },
                seed,
            };
            let csv = to_csv(&run_tsp_sweep(&spec)?, TSP_HEADER)?;
            eprintln!("{}", seed_line(seed, source));
            emit(a.output.out.as_ref(), &csv, a.output.force)?;
            Ok(exit::OK)
        }
        Command::Bench(BenchCommand::List) => {
            for c in bench::cards() {
                println!("{:<24} [{}] {}", c.name, c.criterion, c.summary);
            }
            Ok(exit::OK)
        }
        Command::Bench(BenchCommand::Run {
            name,
            all,
            seed,
            results_dir,
        }) => {
            let (seed, source) = resolve_seed(seed);
            println!("{}", seed_line(seed, source));
            let selected = if all {
                bench::cards()
            } else {
                let name = name.unwrap_or_default();
                vec![bench::find(&name)
                    .ok_or_else(|| CliError::Input(format!("no card named {name:?}")))?]
            };
            let mut failed = 0;
            for card in &selected {
                let outcome = bench::run_card(card, seed, &results_dir)?;
                println!("{}", outcome.line());
                failed += usize::from(!outcome.passed);
            }
            Ok(if failed == 0 { exit::OK } else { exit::FAILED })
        }
    }
}
