//! Keyed random streams.
//!
//! Every stochastic quantity in the solver is drawn from a stream addressed by
//! a master seed plus a hierarchical key path, e.g.
//! `(repetition, ROLLOUT, episode, state, token)`. The same address always
//! yields the same values, so results do not depend on evaluation order or on
//! how work is split across threads.
//!
//! Gaussian variates use the Box–Muller transform over 53-bit uniforms taken
//! from ChaCha8. Both pieces are fixed so frozen golden values stay portable.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Key tags separating the independent families of draws.
pub mod tag {
    pub const ROLLOUT: u64 = 0x524f_4c4c;
    pub const TRANSITION: u64 = 0x5452_414e;
    pub const DROPOUT: u64 = 0x4452_4f50;
    pub const REPETITION: u64 = 0x5245_5045;
    pub const INSTANCE: u64 = 0x494e_5354;
    pub const PARTITION: u64 = 0x5041_5254;
    pub const REAL_DROPOUT: u64 = 0x5244_524f;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A position in the key tree. Cheap to copy; deriving a child never touches
/// generator state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    key: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            key: splitmix64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream addressed by one more key component.
    pub fn child(&self, component: u64) -> Self {
        Self {
            seed: self.seed,
            key: splitmix64(self.key ^ splitmix64(component.wrapping_add(0x632b_e59b_d9b4_e019))),
        }
    }

    /// Child stream addressed by several key components, applied in order.
    pub fn derive(&self, path: &[u64]) -> Self {
        path.iter().fold(*self, |s, &c| s.child(c))
    }

    /// Generator positioned at the start of this stream.
    pub fn sampler(&self) -> Sampler {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(self.key),
            spare: None,
        }
    }

    /// A general-purpose `rand` generator for shuffles and integer draws.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}

/// Sequential draws from one stream address.
#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Sampler {
    /// Uniform on [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller; the second variate of each pair is kept.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    pub fn normals(&mut self, mean: f64, std: f64, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.normal(mean, std)).collect()
    }
}

/// Stable 64-bit FNV-1a hash, used to turn token names into key components.
pub fn stable_hash(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}
