//! Seed derivation for reproducible parallel Monte Carlo.
//!
//! Every trial gets its own ChaCha stream derived from `(master seed,
//! stream index)`, so results do not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream reserved for quantities drawn once per experiment (fixed class means).
pub const EXPERIMENT_STREAM: u64 = u64::MAX;

pub fn stream(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
