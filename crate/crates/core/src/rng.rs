//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from a
//! `(seed, stream id)` pair, so adding draws in one place never shifts the
//! numbers seen elsewhere and parallel work stays reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SviRng = ChaCha8Rng;

/// Noise `xi` fed to the map.
pub const NOISE: u64 = 0;
/// Smoothing perturbations; block `i` uses `SMOOTHING + i`.
pub const SMOOTHING: u64 = 1 << 32;
/// Problem construction (random parameters, multipliers `r_i`).
pub const SETUP: u64 = 2 << 32;
/// Fixed sample sets of the reference oracle.
pub const ORACLE_NOISE: u64 = 3 << 32;
pub const ORACLE_SMOOTHING: u64 = 4 << 32;

pub fn substream(seed: u64, stream: u64) -> SviRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
