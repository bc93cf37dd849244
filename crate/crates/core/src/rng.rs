//! Seed splitting.
//!
//! Every random quantity in the crate is drawn from a ChaCha stream whose
//! seed is derived from the single run seed plus a tag path, so experiments
//! are bit-reproducible regardless of evaluation order or worker count.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// splitmix64 finalizer; good avalanche behaviour for seed derivation.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a tag path.
///
/// Different paths give statistically independent streams; the same path
/// always gives the same seed.
pub fn sub_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = mix(master ^ 0x5151_5151_5151_5151);
    for &tag in path {
        state = mix(state ^ mix(tag));
    }
    state
}

/// Creates a counter-based generator for the given tag path.
pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(master, path))
}

/// Stable tags for the major random consumers.
pub mod tags {
    /// User placement inside the preset's disc.
    pub const GEOMETRY: u64 = 1;
    /// Small-scale fading realization.
    pub const CHANNELS: u64 = 2;
    /// Initial reflecting phases of an optimization run.
    pub const PHASE_INIT: u64 = 3;
    /// Gaussian randomization candidates.
    pub const RANDOMIZATION: u64 = 4;
    /// Random-phase baseline draws.
    pub const RANDOM_PHASE: u64 = 5;
    /// Relay processing-matrix initialization.
    pub const RELAY_INIT: u64 = 6;
}
