//! Reproducible random streams.
//!
//! A stream is a (seed, stream id) pair mapped onto an independent ChaCha
//! keystream. Batches of paths use one child stream per path index, so the
//! output of a parallel batch does not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Derived stream for sub-task `index`; distinct parents give unrelated
    /// children, and the mapping is a pure function of (seed, stream, index).
    pub fn child(&self, index: u64) -> Self {
        let key = splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0xD1B5_4A32_D192_ED03)));
        Self {
            seed: key,
            stream: index,
        }
    }
}
