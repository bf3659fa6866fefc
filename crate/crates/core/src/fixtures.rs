//! Shared test fixtures.

use std::collections::BTreeMap;

use crate::model::{ObservationTrail, TppModel};

/// Three-city model: A{a:0.1,b:0.2}, B{b:0.9,c:0.3}, C{b:0.8,d:0.5}, uniform
/// transitions.
pub fn three_city() -> TppModel {
    let table = |pairs: &[(&str, f64)]| {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect::<BTreeMap<_, _>>()
    };
    TppModel {
        states: vec!["A".into(), "B".into(), "C".into()],
        emissions: vec![
            table(&[("a", 0.1), ("b", 0.2)]),
            table(&[("b", 0.9), ("c", 0.3)]),
            table(&[("b", 0.8), ("d", 0.5)]),
        ],
        transitions: TppModel::uniform_transitions(3),
    }
}

/// Trail `[{a}, {b}, {b, d}]`.
pub fn three_city_trail() -> ObservationTrail {
    ObservationTrail::new(vec![vec!["a"], vec!["b"], vec!["b", "d"]]).unwrap()
}
