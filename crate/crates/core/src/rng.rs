//! Counter-based random substreams.
//!
//! Every simulation task owns a ChaCha8 generator keyed by the pair
//! `(master seed, domain)` and positioned on the stream given by its task
//! index, so results never depend on how tasks are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator handed to every task.
pub type TaskRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A seed from which independent substreams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamSeed {
    key: [u8; 32],
}

impl StreamSeed {
    pub fn new(master: u64) -> Self {
        Self::from_parts(master, 0)
    }

    fn from_parts(master: u64, domain: u64) -> Self {
        let mut key = [0u8; 32];
        let mut state = splitmix64(master) ^ splitmix64(domain.wrapping_mul(GOLDEN) ^ 0x5eed);
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        Self { key }
    }

    /// Derives a child seed for a named sub-computation (an SMC iteration,
    /// a grid point, a forecast batch, ...).
    pub fn derive(&self, domain: u64) -> Self {
        let mut acc = 0u64;
        for chunk in self.key.chunks_exact(8) {
            let mut word = [0u8; 8];
            word.copy_from_slice(chunk);
            acc = splitmix64(acc ^ u64::from_le_bytes(word));
        }
        Self::from_parts(acc, domain)
    }

    /// The generator for task `index`.
    pub fn stream(&self, index: u64) -> TaskRng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        rng
    }
}
