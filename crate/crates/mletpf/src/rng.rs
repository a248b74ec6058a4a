//! Deterministic random-number substreams.
//!
//! Every stochastic quantity in a run (initial draws, Brownian increments,
//! observation noise, resampling) is generated from its own substream, keyed
//! by the run seed plus a small integer path identifying the consumer.  Runs
//! with the same seed therefore produce identical output regardless of
//! evaluation order or thread count, and changing the ensemble layout leaves
//! unrelated substreams untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Role tags used as the first path component of a substream.
pub mod role {
    /// Initial ensemble draws.
    pub const INIT: u64 = 1;
    /// Brownian increments during forecast propagation.
    pub const PROPAGATE: u64 = 2;
    /// Observation noise on the truth trajectory.
    pub const OBSERVE: u64 = 3;
    /// The truth trajectory itself.
    pub const TRUTH: u64 = 4;
    /// Stochastic transform steps (resampling).
    pub const RESAMPLE: u64 = 5;
    /// Study-level draws (synthetic consistency samples).
    pub const STUDY: u64 = 6;
}

/// SplitMix64 finaliser; a bijective 64-bit mixer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the substream key for `seed` at `path`.
///
/// The key is built by folding each path component through SplitMix64, so
/// distinct paths yield statistically independent streams.
pub fn stream_key(seed: u64, path: &[u64]) -> u64 {
    let mut key = mix(seed);
    for (depth, &component) in path.iter().enumerate() {
        key = mix(key ^ mix(component.wrapping_add((depth as u64 + 1) << 56)));
    }
    key
}

/// Returns the generator for the substream of `seed` at `path`.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(stream_key(seed, path))
}
