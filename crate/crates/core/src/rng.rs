//! Seedable, splittable random streams.
//!
//! Every run draws from its own ChaCha8 stream identified by `(seed, stream)`,
//! so traces are reproducible across platforms and independent of how
//! queries are scheduled across worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

/// The RNG for stream `stream` of the generator seeded with `seed`.
pub fn stream(seed: u64, stream: u64) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A child seed for item `index` of a seeded family (e.g. one synthetic query).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    stream(seed, index).random()
}
