//! Seeded weight initialization. ChaCha8 keeps streams reproducible
//! across platforms for a pinned dependency set.

use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::Matrix;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a tag into a seed (splitmix64 finalizer) so sub-streams derived
/// from one run seed stay independent and reproducible.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Entries sampled i.i.d. from N(0, 1).
pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Uniform fan-in initialization: U(−1/√fan_in, 1/√fan_in).
pub fn uniform_fan_in(rng: &mut ChaCha8Rng, fan_in: usize, rows: usize, cols: usize) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    Matrix::from_fn(rows, cols, |_, _| rng.sample(dist))
}
