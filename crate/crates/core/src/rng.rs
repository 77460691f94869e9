//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha20 generator keyed by a
//! 64-bit seed; independent work items (replicates, filter steps, ensemble
//! members) get their own stream id so results do not depend on evaluation
//! order. Gaussian draws use `rand_distr::StandardNormal` (ziggurat).

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream tags, kept distinct so e.g. truth noise never aliases member noise.
pub mod tag {
    pub const SAMPLES: u64 = 1;
    pub const TRUTH: u64 = 2;
    pub const OBSERVATION: u64 = 3;
    pub const INITIAL: u64 = 4;
    pub const FORECAST: u64 = 5;
    pub const ANALYSIS: u64 = 6;
    pub const FACTORS: u64 = 7;
    pub const OBS_MASK: u64 = 8;
}

pub fn seeded(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Generator for `(seed, tag, a, b)`; `a` and `b` are typically a step and a
/// member index.
pub fn substream(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(splitmix(splitmix(a) ^ b.wrapping_add(0x632B_E59B_D9B4_E019)));
    rng
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fill_normal<R: rand::Rng>(rng: &mut R, out: &mut [f64], std: f64) {
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = std * z;
    }
}

pub fn normal_vec<R: rand::Rng>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    let mut v = vec![0.0; n];
    fill_normal(rng, &mut v, std);
    v
}
