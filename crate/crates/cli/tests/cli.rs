use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_permapprox"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_threads(threads: &str, args: &[&str]) -> Output {
    bin()
        .env("PERMAPPROX_THREADS", threads)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn bundle(&self, name: &str, extra: &[&str]) -> PathBuf {
        let p = self.path(name);
        let mut args = vec!["gen", "--seed", "1", "--out", path_str(&p)];
        args.extend_from_slice(extra);
        let out = run(&args);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        p
    }
}

const THREE_CITY_MODEL: &str = r#"{"states": ["A", "B", "C"],
  "emissions": {"A": {"a": 0.1, "b": 0.2}, "B": {"b": 0.9, "c": 0.3}, "C": {"b": 0.8, "d": 0.5}},
  "transitions": [[0.3333333333333333, 0.3333333333333333, 0.3333333333333334],
                  [0.3333333333333333, 0.3333333333333333, 0.3333333333333334],
                  [0.3333333333333333, 0.3333333333333333, 0.3333333333333334]]}"#;

#[test]
fn gen_writes_seven_episode_bundle_deterministically() {
    let ws = Workspace::new();
    let a = ws.bundle("a.json", &["--states", "9", "--episodes", "7"]);
    let b = ws.bundle("b.json", &["--states", "9", "--episodes", "7"]);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["trail"]["episodes"].as_array().unwrap().len(), 7);
    assert_eq!(v["model"]["states"].as_array().unwrap().len(), 9);
    assert_eq!(v["ground_truth"].as_array().unwrap().len(), 7);
}

#[test]
fn gen_minimal_bundle_and_overwrite_guard() {
    let ws = Workspace::new();
    let p = ws.bundle("one.json", &["--episodes", "1"]);
    let v: Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(v["trail"]["episodes"].as_array().unwrap().len(), 1);

    let again = run(&["gen", "--seed", "2", "--out", path_str(&p)]);
    assert_eq!(code(&again), 3);
    assert!(stderr(&again).contains("--force"));
    let forced = run(&["gen", "--seed", "2", "--out", path_str(&p), "--force"]);
    assert_eq!(code(&forced), 0);
}

#[test]
fn round_trip_gen_solve_oracle() {
    let ws = Workspace::new();
    let bundle = ws.bundle("b.json", &["--episodes", "5"]);
    let solve = run(&["solve", path_str(&bundle), "--seed", "3", "--json"]);
    assert_eq!(code(&solve), 0, "{}", stderr(&solve));
    let s: Value = serde_json::from_str(&stdout(&solve)).unwrap();
    assert_eq!(s["best"].as_array().unwrap().len(), 5);
    assert!(s["positional_error"].as_f64().unwrap() <= 1.0);

    let oracle = run(&["oracle", path_str(&bundle), "--json"]);
    assert_eq!(code(&oracle), 0, "{}", stderr(&oracle));
    let o: Value = serde_json::from_str(&stdout(&oracle)).unwrap();
    assert_eq!(o["status"], "ok");
    assert_eq!(o["evaluated"], 15120);
}

#[test]
fn three_city_from_separate_files() {
    let ws = Workspace::new();
    let model = ws.write("model.json", THREE_CITY_MODEL);
    let trail = ws.write("trail.json", r#"{"episodes": [["a"], ["b"], ["b", "d"]]}"#);
    let text = run(&["solve", path_str(&model), path_str(&trail), "--seed", "9"]);
    assert_eq!(code(&text), 0, "{}", stderr(&text));
    assert!(stdout(&text).contains("best: A -> B -> C"));

    let second = run(&[
        "solve",
        path_str(&model),
        path_str(&trail),
        "--seed",
        "9",
        "--attention",
        "second",
        "--json",
    ]);
    let v: Value = serde_json::from_str(&stdout(&second)).unwrap();
    assert_eq!(v["attention"], "second");

    let oracle = run(&["oracle", path_str(&model), path_str(&trail)]);
    assert!(stdout(&oracle).contains("best: A -> B -> C"));
}

#[test]
fn dropout_off_scores_the_whole_space() {
    let ws = Workspace::new();
    let bundle = ws.bundle("b.json", &["--episodes", "4"]);
    let score = |dropout: &str| -> (Value, u64) {
        let out = run(&[
            "solve",
            path_str(&bundle),
            "--seed",
            "5",
            "--dropout",
            dropout,
            "--json",
        ]);
        let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
        let scored = v["scored"].as_u64().unwrap();
        (v["best"].clone(), scored)
    };
    let (_, on) = score("on");
    let (_, off) = score("off");
    assert_eq!(off, 3024);
    assert!(on < off);
}

#[test]
fn exit_codes() {
    let ws = Workspace::new();
    let model = ws.write("model.json", THREE_CITY_MODEL);
    let impossible = ws.write("trail.json", r#"{"episodes": [["zzz"]]}"#);
    assert_eq!(
        code(&run(&[
            "solve",
            path_str(&model),
            path_str(&impossible),
            "--seed",
            "1"
        ])),
        2
    );
    let oracle = run(&["oracle", path_str(&model), path_str(&impossible)]);
    assert_eq!(code(&oracle), 2);
    assert!(stdout(&oracle).starts_with("impossible"));

    let bundle = ws.bundle("big.json", &["--episodes", "6"]);
    assert_eq!(
        code(&run(&[
            "solve",
            path_str(&bundle),
            "--seed",
            "1",
            "--cap",
            "100"
        ])),
        4
    );
    assert_eq!(
        code(&run(&["oracle", path_str(&bundle), "--cap", "100"])),
        4
    );

    let bad = ws.write("bad.json", "{\"states\": [\"A\",]}");
    let out = run(&["solve", path_str(&bad), path_str(&impossible)]);
    assert_eq!(code(&out), 3);
    let err = stderr(&out);
    assert!(err.contains("bad.json") && err.contains("byte 16"), "{err}");

    assert_eq!(
        code(&run(&["solve", path_str(&ws.path("missing.json"))])),
        3
    );
    assert_eq!(code(&run(&["solve"])), 3);
    assert_eq!(code(&run_threads("0", &["bench", "list"])), 3);
}

#[test]
fn oracle_handles_nine_by_nine() {
    let ws = Workspace::new();
    let bundle = ws.bundle("b.json", &["--episodes", "9"]);
    let out = run(&["oracle", path_str(&bundle), "--json"]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["evaluated"], 362_880);
}

#[test]
fn missing_seed_is_recorded() {
    let ws = Workspace::new();
    let bundle = ws.bundle("b.json", &["--episodes", "3"]);
    let out = run(&["solve", path_str(&bundle)]);
    let text = stdout(&out);
    let first = text.lines().next().unwrap();
    assert!(first.contains("(entropy; pass --seed"), "{first}");
    let seed = first.split_whitespace().nth(1).unwrap();
    let json = run(&["solve", path_str(&bundle), "--json"]);
    let v: Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert_eq!(v["seed_source"], "entropy");
    assert!(seed.parse::<u64>().is_ok());
}

#[test]
fn solve_json_identical_across_runs_and_threads() {
    let ws = Workspace::new();
    let bundle = ws.bundle("b.json", &["--episodes", "6"]);
    let args = [
        "solve",
        path_str(&bundle),
        "--seed",
        "11",
        "--reps",
        "3",
        "--json",
    ];
    let one = stdout(&run_threads("1", &args));
    let many = stdout(&run_threads("4", &args));
    let again = stdout(&run_threads("4", &args));
    assert!(!one.is_empty());
    assert_eq!(one, many);
    assert_eq!(many, again);
}

#[test]
fn sweep_csv_golden_and_thread_independent() {
    let args = [
        "sweep",
        "--episodes-min",
        "3",
        "--episodes-max",
        "3",
        "--trials",
        "5",
        "--attention",
        "first",
        "--clique-size",
        "3",
        "--reps",
        "1",
        "--dropout",
        "on",
        "--seed",
        "7",
    ];
    let one = run_threads("1", &args);
    assert_eq!(code(&one), 0, "{}", stderr(&one));
    let many = run_threads("4", &args);
    assert_eq!(stdout(&one), stdout(&many));
    let golden = include_str!("golden/sweep_row.csv");
    assert_eq!(stdout(&one), golden);
}

#[test]
fn default_sweep_shape() {
    let out = run(&[
        "sweep",
        "--trials",
        "1",
        "--episodes-max",
        "4",
        "--seed",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    // 2 lengths x 2 attention x 2 cliques x 2 repetition counts x 2 dropout settings.
    assert_eq!(text.lines().count(), 1 + 32);
}

#[test]
fn tsp_factor_and_improvement() {
    let ws = Workspace::new();
    let pts: Vec<String> = (0..9)
        .map(|i| {
            let a = i as f64 * 0.7;
            format!("[{}, {}]", a.cos() * (1.0 + 0.1 * i as f64), a.sin())
        })
        .collect();
    let small = ws.write(
        "nine.json",
        &format!("{{\"points\": [{}]}}", pts.join(", ")),
    );
    let out = run(&[
        "tsp",
        path_str(&small),
        "--subset-size",
        "3",
        "--reps",
        "10",
        "--seed",
        "1",
        "--json",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["factor"].as_f64().unwrap() >= 1.0 - 1e-12);

    let improve = run(&[
        "tsp",
        path_str(&small),
        "--random-start",
        "--improve",
        "--seed",
        "4",
        "--json",
    ]);
    let v: Value = serde_json::from_str(&stdout(&improve)).unwrap();
    assert!(v["length"].as_f64().unwrap() <= v["start_length"].as_f64().unwrap());

    let pts: Vec<String> = (0..20).map(|i| format!("[{}, {}]", i % 5, i / 5)).collect();
    let big = ws.write(
        "twenty.json",
        &format!("{{\"points\": [{}]}}", pts.join(", ")),
    );
    let out = run(&["tsp", path_str(&big), "--seed", "1", "--json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v.get("factor").is_none());
    assert!(v["length"].as_f64().unwrap() > 0.0);
}

#[test]
fn tsp_sweep_identical_across_threads() {
    let args = [
        "tsp-sweep",
        "--instances",
        "3",
        "--reps",
        "10,50",
        "--seed",
        "2",
    ];
    let one = run_threads("1", &args);
    assert_eq!(code(&one), 0, "{}", stderr(&one));
    assert_eq!(stdout(&one), stdout(&run_threads("4", &args)));
    assert_eq!(stdout(&one).lines().count(), 1 + 6);
}

#[test]
fn bench_lists_nine_cards_and_runs_one() {
    let out = run(&["bench", "list"]);
    assert_eq!(stdout(&out).lines().count(), 9);

    let ws = Workspace::new();
    let results = ws.path("results");
    let out = run(&[
        "bench",
        "run",
        "tsp-two-local",
        "--seed",
        "3",
        "--results-dir",
        path_str(&results),
    ]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("PASS [7] tsp-two-local"));
    assert!(results.join("tsp-two-local").join("seed-3.csv").exists());
    assert_eq!(
        code(&run(&["bench", "run", "no-such-card", "--seed", "1"])),
        3
    );
}

#[test]
fn real_valued_bundle_solves() {
    let ws = Workspace::new();
    let bundle = ws.write(
        "real.json",
        r#"{"model": {"states": ["low", "mid", "high"],
                      "distributions": {"low": [{"gaussian": {"mean": 0.0, "std": 1.0}}],
                                        "mid": [{"gaussian": {"mean": 5.0, "std": 1.0}}],
                                        "high": [{"samples": [9.0, 9.5, 10.0, 10.5, 11.0]}]},
                      "transitions": [[0.2, 0.4, 0.4], [0.4, 0.2, 0.4], [0.4, 0.4, 0.2]]},
            "trail": {"episodes_real": [[10.1], [0.2], [4.9]]},
            "ground_truth": ["high", "low", "mid"]}"#,
    );
    let out = run(&[
        "solve",
        path_str(&bundle),
        "--seed",
        "1",
        "--dropout",
        "off",
        "--json",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["input"], "real-valued");
    assert_eq!(v["best"], serde_json::json!(["high", "low", "mid"]));
    let oracle = run(&["oracle", path_str(&bundle)]);
    assert_eq!(code(&oracle), 3);
}
