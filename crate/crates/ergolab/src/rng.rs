//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator (`rand_chacha::ChaCha8Rng`) seeded through
//! `SeedableRng::seed_from_u64`. Realization `r` of a sweep with master seed `s`
//! uses the substream seed `s ^ r`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn realization_seed(master: u64, realization: usize) -> u64 {
    master ^ realization as u64
}

pub fn realization_stream(master: u64, realization: usize) -> Stream {
    stream(realization_seed(master, realization))
}
