//! Seeded random streams. Every consumer owns its own stream; nothing global.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

/// Independent stream `stream` derived from a run seed.
pub fn stream(seed: u64, stream: u64) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Named stream ids used by a training run.
pub mod streams {
    pub const ENV: u64 = 1;
    pub const ROUTING: u64 = 2;
    pub const SAMPLING: u64 = 3;
    pub const POLICY: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const METRICS: u64 = 6;
    pub const INIT: u64 = 7;
    pub const BANDIT: u64 = 8;
    pub const BOOTSTRAP: u64 = 9;
    /// Resets use `RESET_BASE + reset_index`.
    pub const RESET_BASE: u64 = 1 << 32;
}
