//! Seeded random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from a
//! `(seed, stream)` pair so results never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream namespaces; keeps generator, trainer, and evaluator draws disjoint.
pub mod streams {
    pub const NEWS: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const PROBE: u64 = 5;
    pub const RANDOM_RANKING: u64 = 6;
    pub const GEOMETRY: u64 = 7;
    /// Users occupy `USER_BASE + user_index`.
    pub const USER_BASE: u64 = 1 << 32;
}
