//! Per-path random streams.
//!
//! Every path owns the ChaCha8 stream numbered by its index under the master
//! seed, so a path's noise depends only on `(master_seed, path_index)` and
//! never on scheduling order or the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}

/// Standard normal draws from a path stream.
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        Self {
            rng: path_rng(master_seed, path_index),
        }
    }

    #[inline]
    pub fn next(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}
