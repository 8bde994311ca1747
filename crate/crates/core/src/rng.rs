//! Seeded randomness.
//!
//! Every random quantity in the crate is drawn from a [`Xoshiro256PlusPlus`]
//! stream seeded through `seed_from_u64` (SplitMix64 expansion). Independent
//! sub-streams are derived with [`split_seed`], so a parent seed plus a stream
//! index always names the same sequence no matter which thread consumes it.
//!
//! Normal deviates come from `rand_distr::StandardNormal` (ziggurat). The
//! generator and sampler are pinned by the lockfile, which makes every
//! matrix, probe set and training run bit-reproducible.

use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `stream` of `parent`.
pub fn split_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(parent ^ splitmix64(stream.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

pub fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec(rng: &mut Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| normal(rng)).collect()
}

/// Uniform point on the unit sphere in `dim` dimensions (normalized Gaussian).
pub fn unit_vector(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v = normal_vec(rng, dim);
        let norm = crate::linalg::norm(&v);
        if norm > 1e-300 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

pub fn uniform_index(rng: &mut Rng, len: usize) -> usize {
    rng.random_range(0..len)
}

pub fn uniform(rng: &mut Rng) -> f64 {
    rng.random::<f64>()
}
