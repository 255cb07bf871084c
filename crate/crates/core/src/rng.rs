//! Random number streams.
//!
//! Hashing uses a private [`SplitMix64`] so that hash values are portable and
//! never touch the experiment streams. Experiment-level randomness is split
//! into independent ChaCha8 streams, one per purpose, so that skipping an
//! evaluation (a cache hit) cannot shift the draws used for selection and
//! mutation.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Steele/Lea/Flood splitmix64 generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }
}

/// splitmix64 finalizer, also useful on its own for deriving seeds.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngCore for SplitMix64 {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Purpose of an experiment-level random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    /// Random candidates, tournament sampling and mutation.
    Search = 1,
    /// Forgetful-cache coin flips.
    Forget = 2,
    /// Evaluation noise.
    Noise = 3,
}

/// Independent ChaCha8 stream for `purpose` under experiment `seed`.
pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Deterministic ChaCha8 generator for a derived seed (task data, fixed
/// evaluation initialisation and the like).
pub fn seeded(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(salt)))
}
