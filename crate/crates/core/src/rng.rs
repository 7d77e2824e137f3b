//! Seeded random streams. Every independent unit of work (a drop, a Monte
//! Carlo block, a randomization pass) draws from its own ChaCha stream keyed
//! by `(seed, stream id)`, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn stream(seed: u64, id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Stream ids for the fixed consumers of a run.
pub mod ids {
    pub const LAYOUT: u64 = 1;
    pub const NEARFIELD: u64 = 2;
    pub const REALIZATION: u64 = 3;
    pub const THETA0: u64 = 4;
    pub const RANDOMIZATION: u64 = 5;
    pub const GRID: u64 = 6;
    pub const RAYS: u64 = 7;
    /// Monte Carlo block `b` uses `MC_BASE + b`.
    pub const MC_BASE: u64 = 1 << 32;
}
