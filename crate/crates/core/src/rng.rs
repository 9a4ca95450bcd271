//! Independent, reproducible random streams derived from one experiment seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Each consumer draws from its own stream so that, for example, enabling
/// position noise never shifts the world or the channel losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    World = 1,
    Placement = 2,
    PositionNoise = 3,
    Channel = 4,
    PhaseJitter = 5,
    Weights = 6,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
