//! Seed partitioning and seeded array generators.
//!
//! One master seed deterministically derives independent stream seeds for
//! initialization, input noise, perturbation, corruption, and so on, so that
//! toggling one randomized feature never shifts the draws of another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::array::NdArray;

/// Stream tag for network parameter initialization.
pub const STREAM_INIT: u64 = 1;
/// Stream tag for the fixed input noise z.
pub const STREAM_INPUT_NOISE: u64 = 2;
/// Base stream tag for per-iteration input perturbation; add the iteration.
pub const STREAM_PERTURB: u64 = 1 << 32;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of an independent stream from a master seed.
pub fn subseed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

/// Seeded generator; ChaCha keeps draws identical across platforms.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// I.i.d. uniform draws on [lo, hi).
pub fn uniform_array(shape: &[usize], seed: u64, lo: f64, hi: f64) -> NdArray {
    let mut rng = seeded_rng(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| lo + (hi - lo) * rng.random::<f64>())
        .collect();
    NdArray::from_vec(shape, data).expect("uniform draws are finite")
}

/// I.i.d. zero-mean Gaussian draws with the given standard deviation.
pub fn gaussian_array(shape: &[usize], seed: u64, sigma: f64) -> NdArray {
    assert!(sigma >= 0.0, "sigma must be nonnegative");
    let n: usize = shape.iter().product();
    if sigma == 0.0 {
        return NdArray::zeros(shape);
    }
    let mut rng = seeded_rng(seed);
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
    NdArray::from_vec(shape, data).expect("gaussian draws are finite")
}
