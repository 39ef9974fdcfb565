//! Deterministic random streams. Every stochastic step in the library
//! draws from a stream derived from (master seed, step name), so runs
//! are reproducible regardless of the order in which steps execute and
//! adding a new consumer never shifts the draws of an existing one.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for one named step of a seeded run.
pub fn named_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(name));
    rng
}

/// FNV-1a, 64 bit. Folds a stream name into the ChaCha stream id.
fn fnv1a64(s: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in s.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
