//! Randomized activation functions.
//!
//! A Bernoulli probability `p` is encoded as the Gaussian `N(p/2, sqrt(p/5))`
//! (the second parameter is the standard deviation). Activations draw a few
//! samples from that encoding, aggregate them with min, max or median, and
//! clamp from below like a ReLU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TppModel;
use crate::rng::{stable_hash, RngStream};

/// Guard for reciprocals and logarithms of vanishing quantities.
pub const EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Min,
    Max,
    Median,
}

impl Aggregator {
    pub fn apply(self, samples: &[f64]) -> f64 {
        assert!(!samples.is_empty(), "aggregating zero samples");
        match self {
            Aggregator::Min => samples.iter().copied().fold(f64::INFINITY, f64::min),
            Aggregator::Max => samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregator::Median => median(samples),
        }
    }
}

fn median(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub draws: usize,
    pub thresh: f64,
    pub aggregator: Aggregator,
}

impl ActivationSpec {
    /// Best case over draws, floor 1e-3.
    pub fn rollout() -> Self {
        Self {
            draws: 5,
            thresh: 1e-3,
            aggregator: Aggregator::Max,
        }
    }

    /// Worst case over draws, floor 1e-3.
    pub fn transition() -> Self {
        Self {
            draws: 5,
            thresh: 1e-3,
            aggregator: Aggregator::Min,
        }
    }

    /// Median of draws, floor 0.
    pub fn dropout() -> Self {
        Self {
            draws: 5,
            thresh: 0.0,
            aggregator: Aggregator::Median,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::InvalidConfig("draws must be at least 1".into()));
        }
        if self.thresh.is_nan() || self.thresh < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "thresh must be non-negative (got {})",
                self.thresh
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodedDistribution {
    pub mean: f64,
    pub std: f64,
}

impl EncodedDistribution {
    pub fn samples(&self, rng: &mut crate::rng::Sampler, draws: usize) -> Vec<f64> {
        rng.normals(self.mean, self.std, draws)
    }
}

/// Gaussian encoding of a Bernoulli probability.
pub fn encode(p: f64) -> Result<EncodedDistribution> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    Ok(EncodedDistribution {
        mean: p / 2.0,
        std: (p / 5.0).sqrt(),
    })
}

/// One activation per token (in episode order), or `None` when `state` cannot
/// emit some token. Each token draws from `rng.child(hash(token))`.
pub fn rollout_activation(
    episode: &[String],
    state: usize,
    model: &TppModel,
    spec: &ActivationSpec,
    rng: &RngStream,
) -> Option<Vec<f64>> {
    let table = &model.emissions[state];
    episode
        .iter()
        .map(|token| {
            let p = *table.get(token)?;
            let dist = encode(p).ok()?;
            let mut sampler = rng.child(stable_hash(token)).sampler();
            let samples = dist.samples(&mut sampler, spec.draws);
            Some(spec.thresh.max(spec.aggregator.apply(&samples)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionActivation {
    pub value: f64,
    /// The input probability was zero.
    pub impossible: bool,
}

/// Activation of a two-step transition probability product.
pub fn transition_activation(
    tp: f64,
    spec: &ActivationSpec,
    rng: &RngStream,
) -> Result<TransitionActivation> {
    if tp < 0.0 || tp.is_nan() {
        return Err(Error::NegativeTransition(tp));
    }
    if tp == 0.0 {
        return Ok(TransitionActivation {
            value: spec.thresh,
            impossible: true,
        });
    }
    let dist = encode(tp.min(1.0))?;
    let samples = dist.samples(&mut rng.sampler(), spec.draws);
    Ok(TransitionActivation {
        value: spec.thresh.max(spec.aggregator.apply(&samples)),
        impossible: false,
    })
}

/// Pairing strength of two states that can both emit `token`: the product of
/// the aggregated draws for each state. Zero when either state lacks `token`.
pub fn dropout_activation(
    model: &TppModel,
    state_a: usize,
    state_b: usize,
    token: &str,
    spec: &ActivationSpec,
    rng: &RngStream,
) -> f64 {
    let (Some(pa), Some(pb)) = (
        model.emission(state_a, token),
        model.emission(state_b, token),
    ) else {
        return 0.0;
    };
    let (Ok(da), Ok(db)) = (encode(pa), encode(pb)) else {
        return 0.0;
    };
    let mut sampler = rng.sampler();
    let samples_a = da.samples(&mut sampler, spec.draws);
    let samples_b = db.samples(&mut sampler, spec.draws);
    let value = spec.aggregator.apply(&samples_a) * spec.aggregator.apply(&samples_b);
    spec.thresh.max(value)
}

/// Per-index distribution of a real-valued observation under one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistModel {
    Gaussian { mean: f64, std: f64 },
    Samples(Vec<f64>),
}

impl DistModel {
    pub fn is_gaussian(&self) -> bool {
        matches!(self, DistModel::Gaussian { .. })
    }
}

/// How the Gaussian branch of [`model_heuristic`] turns a z-value into an
/// activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeuristicMode {
    /// `1 / max(z, EPSILON)`: closer to the mean scores higher.
    #[default]
    Closeness,
    /// `min(z, thresh)` exactly as written in the original algorithm.
    Literal,
}

/// Gaussian-kernel density estimate with Silverman's bandwidth.
#[derive(Debug, Clone)]
pub struct Kde<'a> {
    samples: &'a [f64],
    bandwidth: f64,
}

impl<'a> Kde<'a> {
    /// `None` when the samples have zero spread.
    pub fn new(samples: &'a [f64]) -> Option<Self> {
        let n = samples.len() as f64;
        if samples.is_empty() {
            return None;
        }
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let bandwidth = 1.06 * var.sqrt() * n.powf(-0.2);
        (bandwidth > 0.0).then_some(Self { samples, bandwidth })
    }

    pub fn density(&self, x: f64) -> f64 {
        let norm = 1.0
            / (self.samples.len() as f64 * self.bandwidth * (2.0 * std::f64::consts::PI).sqrt());
        norm * self
            .samples
            .iter()
            .map(|s| {
                let u = (x - s) / self.bandwidth;
                (-0.5 * u * u).exp()
            })
            .sum::<f64>()
    }

    /// Highest density over the sample points.
    pub fn peak(&self) -> f64 {
        self.samples
            .iter()
            .map(|&s| self.density(s))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Activation of one real-valued observation against a state's model.
pub fn model_heuristic(dist: &DistModel, value: f64, thresh: f64, mode: HeuristicMode) -> f64 {
    match dist {
        DistModel::Gaussian { mean, std } => {
            if *std <= 0.0 {
                return if value == *mean {
                    1.0 / EPSILON
                } else {
                    EPSILON
                };
            }
            let z = (value - mean).abs() / std;
            match mode {
                HeuristicMode::Closeness => 1.0 / z.max(EPSILON),
                HeuristicMode::Literal => z.min(thresh),
            }
        }
        DistModel::Samples(samples) => match Kde::new(samples) {
            Some(kde) => {
                let l1 = (kde.peak() - kde.density(value)).abs();
                1.0 / l1.max(EPSILON)
            }
            None => {
                if samples.first() == Some(&value) {
                    1.0 / EPSILON
                } else {
                    EPSILON
                }
            }
        },
    }
}

/// Energy distance `2 E|X-Y| - E|X-X'| - E|Y-Y'|` over all pairs of the two
/// empirical distributions (V-statistic form, so it is zero exactly when the
/// empirical distributions coincide).
pub fn energy_distance(a: &[f64], b: &[f64]) -> f64 {
    assert!(
        !a.is_empty() && !b.is_empty(),
        "energy distance of an empty sample"
    );
    let mean_abs = |x: &[f64], y: &[f64]| {
        let total: f64 = x
            .iter()
            .map(|xi| y.iter().map(|yj| (xi - yj).abs()).sum::<f64>())
            .sum();
        total / (x.len() * y.len()) as f64
    };
    // Fixed argument order keeps the value bit-identical under swapping.
    let swap = a.len().cmp(&b.len()).then_with(|| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let (a, b) = if swap.is_gt() { (b, a) } else { (a, b) };
    let e = 2.0 * mean_abs(a, b) - (mean_abs(a, a) + mean_abs(b, b));
    e.max(0.0)
}
