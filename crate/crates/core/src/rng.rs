//! Reproducible random streams.
//!
//! A run has one master seed. Each component (a chain, a coupled replica, a
//! data generator) gets its own ChaCha20 stream: the key is derived from the
//! master seed and the 64-bit ChaCha stream id is `(tag << 40) | index`.
//! Streams never overlap, and adding chain `k + 1` leaves chains `0..=k`
//! untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// The generator used everywhere in the crate.
pub type SimRng = ChaCha20Rng;

/// Component tags for [`stream`]. Values are part of the reproducibility
/// contract; do not renumber.
pub mod tag {
    pub const CHAIN: u64 = 1;
    pub const COUPLING: u64 = 2;
    pub const LYAPUNOV: u64 = 3;
    pub const DATA_TRUTH: u64 = 4;
    pub const DATA_NOISE: u64 = 5;
    pub const PROBE: u64 = 6;
    pub const STATS: u64 = 7;
}

/// Stream `index` of component `tag` under `master_seed`.
pub fn stream(master_seed: u64, tag: u64, index: u64) -> SimRng {
    assert!(index < (1 << 40), "stream index out of range");
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream((tag << 40) | index);
    rng
}

/// Position of a generator inside its stream, in 32-bit words.
pub fn cursor(rng: &SimRng) -> u128 {
    rng.get_word_pos()
}
