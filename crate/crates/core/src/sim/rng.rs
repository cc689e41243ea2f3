use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hash::StableHasher;

pub type SimRng = ChaCha8Rng;

/// Root of all randomness in a simulation. Every consumer draws from its own
/// substream keyed by (component, entity), so adding an entity never shifts
/// another entity's draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomSource {
    seed: u64,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, component: &str, entity: u64) -> SimRng {
        let key = StableHasher::new(self.seed).str(component).u64(entity).finish();
        ChaCha8Rng::seed_from_u64(key)
    }
}
