//! Shared instance builders for the criterion benches.

use knapsack_core::problems::{mixed_instance, uncorrelated_instance, SetKind};
use knapsack_core::KnapsackSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `count` equality projection instances of size `n` from the uncorrelated family.
pub fn uncorrelated(n: usize, count: usize, seed: u64) -> Vec<(Vec<f64>, KnapsackSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| uncorrelated_instance(&mut rng, n)).collect()
}

/// Mixed-sign instances with an interval row.
pub fn mixed_interval(n: usize, count: usize, seed: u64) -> Vec<(Vec<f64>, KnapsackSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| mixed_instance(&mut rng, n, SetKind::Interval))
        .collect()
}
