//! Small problems for exercising the controllers and schedulers.

use std::collections::VecDeque;

use parking_lot::Mutex;
use rand::Rng;

use crate::rng::mix64;
use crate::space::{FitnessRecord, Problem};
use crate::ufh::{FunctionalHash, HashConfig};

/// Candidates are 10-bit integers; the low `neutral_bits` bits do not affect
/// the function, so every function has many structures. Fitness is the
/// function index scaled to [0, 1], plus optional Gaussian noise.
pub struct Toy {
    pub neutral_bits: u32,
    pub sigma: f64,
    pub cost: fn(u32) -> f64,
    /// Served by `random_candidate` before falling back to random draws.
    pub script: Mutex<VecDeque<u32>>,
}

pub const TOY_BITS: u32 = 10;

impl Default for Toy {
    fn default() -> Self {
        Self { neutral_bits: 4, sigma: 0.0, cost: |_| 1.0, script: Mutex::new(VecDeque::new()) }
    }
}

impl Toy {
    pub fn scripted(script: &[u32], cost: fn(u32) -> f64) -> Self {
        Self { cost, script: Mutex::new(script.iter().copied().collect()), ..Self::default() }
    }

    pub fn function(&self, c: u32) -> u32 {
        c >> self.neutral_bits
    }

    pub fn clean(&self, c: u32) -> f64 {
        f64::from(self.function(c)) / f64::from((1u32 << (TOY_BITS - self.neutral_bits)) - 1)
    }
}

impl Problem for Toy {
    type Candidate = u32;

    fn random_candidate<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.script.lock().pop_front().unwrap_or_else(|| rng.random_range(0..1 << TOY_BITS))
    }

    fn mutate<R: Rng + ?Sized>(&self, parent: &u32, rng: &mut R) -> u32 {
        parent ^ (1 << rng.random_range(0..TOY_BITS))
    }

    fn evaluate<R: Rng + ?Sized>(&self, c: &u32, noise: &mut R) -> FitnessRecord {
        let mut f = self.clean(*c);
        if self.sigma > 0.0 {
            let g: f64 = noise.sample(rand_distr::StandardNormal);
            f += self.sigma * g;
        }
        FitnessRecord::single(f, (self.cost)(*c))
    }

    fn functional_hash(&self, c: &u32, _config: &HashConfig) -> FunctionalHash {
        FunctionalHash(mix64(u64::from(self.function(*c))))
    }

    fn structural_key(&self, c: &u32) -> u64 {
        u64::from(*c)
    }

    fn true_fitness(&self, c: &u32) -> f64 {
        self.clean(*c)
    }

    fn unseen_fitness(&self, c: &u32, _data_seed: u64) -> f64 {
        self.clean(*c)
    }
}
