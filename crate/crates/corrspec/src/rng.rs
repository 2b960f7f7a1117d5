//! Deterministic random-number substreams.
//!
//! Every stochastic routine in the crate draws from a ChaCha stream keyed by
//! `(seed, domain, index)`. A work item (one fringe point, one detection
//! trial, one remote shot) owns the substream for its index, so results are
//! identical whether the items run sequentially or on a thread pool, and
//! identical across platforms for a given seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keeping substreams from distinct subsystems disjoint.
pub mod domains {
    /// One fringe grid point (probes within the point are sequential).
    pub const FRINGE_POINT: u64 = 1;
    /// One dataset of a multi-dark-time scan (combined with `derive_seed`).
    pub const SCAN_DATASET: u64 = 2;
    /// One adaptive-detection trial.
    pub const DETECTION_TRIAL: u64 = 3;
    /// One remote-comparison shot (atom-number binomials).
    pub const REMOTE_SHOT: u64 = 4;
    /// Laser phase-noise trajectory of one remote clock.
    pub const REMOTE_NOISE: u64 = 5;
    /// Free-standing statistical tests and benchmarks.
    pub const BENCH: u64 = 6;
}

/// SplitMix64 step: advances `state` by the golden-gamma increment and
/// returns a bijectively mixed output word.
fn splitmix_next(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collapses `(seed, domain, index)` to a single well-mixed word, e.g. for
/// seeding a nested family of substreams.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    let mut state = seed;
    let mut state = splitmix_next(&mut state) ^ domain;
    let mut state = splitmix_next(&mut state) ^ index;
    splitmix_next(&mut state)
}

/// An independent ChaCha stream for work item `index` of `domain`.
///
/// The 256-bit key is expanded from `(seed, domain, index)` with SplitMix64,
/// so neighboring indexes share no key bits in common.
pub fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut state = seed;
    let mut state = splitmix_next(&mut state) ^ domain;
    let mut state = splitmix_next(&mut state) ^ index;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix_next(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
