//! File formats and the plumbing to read and write them.
//!
//! Models keep their per-state tables keyed by state name so hand-written
//! files stay readable:
//!
//! ```json
//! { "states": ["A", "B"],
//!   "emissions": { "A": { "x": 0.9 }, "B": { "y": 0.4 } },
//!   "transitions": [[0.5, 0.5], [0.5, 0.5]] }
//! ```
//!
//! A real-valued model replaces `emissions` with `distributions`, a list of
//! `{"gaussian": {"mean": m, "std": s}}` or `{"samples": [...]}` per reading.
//! Trails carry either `episodes` (token lists) or `episodes_real` (reading
//! vectors). A bundle nests a model, a trail and optionally the hidden
//! arrangement that generated them.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use permapprox_core::activation::DistModel;
use permapprox_core::model::{Instance, ObservationTrail, SyntheticSpec, TppModel};
use permapprox_core::real_valued::{RealTrail, RealValuedModel};
use permapprox_core::tsp::CostMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub states: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emissions: Option<BTreeMap<String, BTreeMap<String, f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distributions: Option<BTreeMap<String, Vec<DistModel>>>,
    pub transitions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrailFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episodes: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episodes_real: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleFile {
    pub model: ModelFile,
    pub trail: TrailFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Discrete(TppModel),
    Real(RealValuedModel),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trail {
    Discrete(ObservationTrail),
    Real(RealTrail),
}

/// A model, a trail and possibly the arrangement that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub model: Model,
    pub trail: Trail,
    pub ground_truth: Option<Vec<usize>>,
}

impl Model {
    pub fn states(&self) -> &[String] {
        match self {
            Model::Discrete(m) => &m.states,
            Model::Real(m) => &m.states,
        }
    }
}

fn per_state<V: Clone>(
    states: &[String],
    table: BTreeMap<String, V>,
    what: &str,
    missing: impl Fn() -> Option<V>,
) -> CliResult<Vec<V>> {
    if let Some(unknown) = table.keys().find(|k| !states.contains(k)) {
        return Err(CliError::Input(format!(
            "{what} given for unknown state {unknown:?}"
        )));
    }
    states
        .iter()
        .map(|s| {
            table
                .get(s)
                .cloned()
                .or_else(&missing)
                .ok_or_else(|| CliError::Input(format!("no {what} for state {s:?}")))
        })
        .collect()
}

impl ModelFile {
    pub fn into_model(self) -> CliResult<Model> {
        match (self.emissions, self.distributions) {
            (Some(emissions), None) => {
                let emissions = per_state(&self.states, emissions, "emissions", || {
                    Some(BTreeMap::new())
                })?;
                Ok(Model::Discrete(TppModel {
                    states: self.states,
                    emissions,
                    transitions: self.transitions,
                }))
            }
            (None, Some(dists)) => {
                let distributions = per_state(&self.states, dists, "distributions", || None)?;
                Ok(Model::Real(RealValuedModel {
                    states: self.states,
                    distributions,
                    transitions: self.transitions,
                }))
            }
            (Some(_), Some(_)) => Err(CliError::Input(
                "model has both `emissions` and `distributions`".into(),
            )),
            (None, None) => Err(CliError::Input(
                "model needs `emissions` or `distributions`".into(),
            )),
        }
    }

    pub fn from_model(model: &TppModel) -> Self {
        Self {
            states: model.states.clone(),
            emissions: Some(
                model
                    .states
                    .iter()
                    .cloned()
                    .zip(model.emissions.iter().cloned())
                    .collect(),
            ),
            distributions: None,
            transitions: model.transitions.clone(),
        }
    }
}

impl TrailFile {
    pub fn into_trail(self) -> CliResult<Trail> {
        match (self.episodes, self.episodes_real) {
            (Some(e), None) => Ok(Trail::Discrete(ObservationTrail::new(e)?)),
            (None, Some(e)) => Ok(Trail::Real(RealTrail { episodes: e })),
            (Some(_), Some(_)) => Err(CliError::Input(
                "trail has both `episodes` and `episodes_real`".into(),
            )),
            (None, None) => Err(CliError::Input(
                "trail needs `episodes` or `episodes_real`".into(),
            )),
        }
    }
}

impl BundleFile {
    pub fn from_instance(instance: &Instance, generator: Option<SyntheticSpec>) -> Self {
        Self {
            model: ModelFile::from_model(&instance.model),
            trail: TrailFile {
                episodes: Some(instance.trail.episodes().to_vec()),
                episodes_real: None,
            },
            ground_truth: Some(instance.model.names(&instance.ground_truth)),
            generator,
        }
    }

    pub fn into_problem(self) -> CliResult<Problem> {
        let model = self.model.into_model()?;
        let trail = self.trail.into_trail()?;
        let ground_truth = match self.ground_truth {
            None => None,
            Some(names) => Some(
                names
                    .iter()
                    .map(|name| {
                        model
                            .states()
                            .iter()
                            .position(|s| s == name)
                            .ok_or_else(|| {
                                CliError::Input(format!(
                                    "ground truth names unknown state {name:?}"
                                ))
                            })
                    })
                    .collect::<CliResult<Vec<usize>>>()?,
            ),
        };
        Ok(Problem {
            model,
            trail,
            ground_truth,
        })
    }
}

impl CostFile {
    pub fn into_matrix(self) -> CliResult<CostMatrix> {
        match (self.costs, self.points) {
            (Some(costs), None) => {
                if let Some(n) = self.n {
                    if n != costs.len() {
                        return Err(CliError::Input(format!(
                            "`n` is {n} but `costs` has {} rows",
                            costs.len()
                        )));
                    }
                }
                Ok(CostMatrix::new(costs)?)
            }
            (None, Some(points)) => Ok(CostMatrix::from_points(&points)?),
            _ => Err(CliError::Input(
                "cost file needs exactly one of `costs` or `points`".into(),
            )),
        }
    }
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    start + column.saturating_sub(1)
}

pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        offset: byte_offset(text, e.line(), e.column()),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_json(path, &text)
}

/// Loads either a bundle (`trail` absent) or a separate model and trail.
pub fn load_problem(model_path: &Path, trail_path: Option<&Path>) -> CliResult<Problem> {
    match trail_path {
        None => read_json::<BundleFile>(model_path)?.into_problem(),
        Some(trail_path) => Ok(Problem {
            model: read_json::<ModelFile>(model_path)?.into_model()?,
            trail: read_json::<TrailFile>(trail_path)?.into_trail()?,
            ground_truth: None,
        }),
    }
}

pub fn load_costs(path: &Path) -> CliResult<CostMatrix> {
    read_json::<CostFile>(path)?.into_matrix()
}

/// Pretty JSON with a trailing newline. Floats use the shortest text that
/// parses back to the same value.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// Writes `contents` to `path`, refusing to replace an existing file unless
/// `force` is set. Parent directories are created as needed.
pub fn write_file(path: &Path, contents: &[u8], force: bool) -> CliResult<()> {
    let io_err = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    if path.exists() && !force {
        return Err(CliError::Input(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(contents).map_err(io_err)
}

/// Sends `contents` to `path` when given, otherwise to standard output.
pub fn emit(path: Option<&PathBuf>, contents: &str, force: bool) -> CliResult<()> {
    match path {
        Some(p) => write_file(p, contents.as_bytes(), force),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_json() -> &'static str {
        r#"{"states": ["A", "B", "C"],
            "emissions": {"A": {"a": 0.1, "b": 0.2}, "B": {"b": 0.9, "c": 0.3}, "C": {"b": 0.8, "d": 0.5}},
            "transitions": [[0.3333333333333333, 0.3333333333333333, 0.3333333333333334],
                            [0.3333333333333333, 0.3333333333333333, 0.3333333333333334],
                            [0.3333333333333333, 0.3333333333333333, 0.3333333333333334]]}"#
    }

    #[test]
    fn named_tables_follow_state_order() {
        let file: ModelFile = parse_json(Path::new("m.json"), model_json()).unwrap();
        let Model::Discrete(m) = file.into_model().unwrap() else {
            panic!("expected a discrete model")
        };
        assert_eq!(m.emission(2, "d"), Some(0.5));
        assert_eq!(m.emission(0, "d"), None);
        m.validate().unwrap();
    }

    #[test]
    fn unknown_state_rejected() {
        let text = r#"{"states": ["A"], "emissions": {"Z": {}}, "transitions": [[1.0]]}"#;
        let file: ModelFile = parse_json(Path::new("m.json"), text).unwrap();
        assert!(matches!(file.into_model(), Err(CliError::Input(_))));
    }

    #[test]
    fn parse_error_reports_byte_offset() {
        let text = "{\n  \"states\": [\"A\",]\n}";
        let err = parse_json::<ModelFile>(Path::new("bad.json"), text).unwrap_err();
        let CliError::Parse { offset, line, .. } = &err else {
            panic!("expected a parse error, got {err}")
        };
        assert_eq!(*line, 2);
        assert_eq!(&text[*offset..*offset + 1], "]");
        assert!(err.to_string().starts_with("bad.json: parse error at byte"));
    }

    #[test]
    fn real_valued_model_and_trail() {
        let model = r#"{"states": ["lo", "hi"],
            "distributions": {"lo": [{"gaussian": {"mean": 0.0, "std": 1.0}}],
                              "hi": [{"samples": [4.0, 5.0, 6.0]}]},
            "transitions": [[0.5, 0.5], [0.5, 0.5]]}"#;
        let file: ModelFile = parse_json(Path::new("m.json"), model).unwrap();
        assert!(matches!(file.into_model().unwrap(), Model::Real(_)));
        let trail: TrailFile =
            parse_json(Path::new("t.json"), r#"{"episodes_real": [[0.1], [5.2]]}"#).unwrap();
        assert!(matches!(trail.into_trail().unwrap(), Trail::Real(_)));
    }

    #[test]
    fn cost_file_forms() {
        let costs: CostFile = parse_json(
            Path::new("c.json"),
            r#"{"n": 2, "costs": [[0, 1], [1, 0]]}"#,
        )
        .unwrap();
        assert_eq!(costs.into_matrix().unwrap().n(), 2);
        let pts: CostFile = parse_json(
            Path::new("c.json"),
            r#"{"points": [[0, 0], [3, 4], [0, 4]]}"#,
        )
        .unwrap();
        assert_eq!(pts.into_matrix().unwrap().get(0, 1), 5.0);
        let wrong: CostFile = parse_json(
            Path::new("c.json"),
            r#"{"n": 3, "costs": [[0, 1], [1, 0]]}"#,
        )
        .unwrap();
        assert!(wrong.into_matrix().is_err());
    }

    #[test]
    fn refuses_overwrite_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.json");
        write_file(&path, b"1", false).unwrap();
        assert!(write_file(&path, b"2", false).is_err());
        write_file(&path, b"2", true).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "2");
    }
}
