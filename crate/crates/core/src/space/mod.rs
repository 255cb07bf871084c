//! Search spaces: candidate representations, their evaluation, mutation and
//! the hooks the functional hash needs.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ufh::{FunctionalHash, HashConfig};

pub mod graph;
pub mod program;
pub mod task;

pub use graph::{GraphCandidate, GraphOp, GraphProblem, GraphSpace, Vertex};
pub use program::{Instruction, ProgramCandidate, ProgramProblem, ProgramSpace};
pub use task::{Example, Task, TaskKind, TaskSpec};

/// Magnitude every intermediate value is clamped to.
pub const SATURATION: f64 = 1e6;

/// Clamps to `[-SATURATION, SATURATION]`; NaN becomes 0.
#[inline]
pub fn saturate(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(-SATURATION, SATURATION)
    }
}

/// Maps a non-negative error to a fitness in `[0, 1]`.
#[inline]
pub fn fitness_from_error(error: f64) -> f64 {
    if error.is_nan() {
        return 0.0;
    }
    (1.0 / (1.0 + error.max(0.0))).clamp(0.0, 1.0)
}

/// Outcome of one evaluation, or the aggregate of several.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub fitness: f64,
    /// Virtual seconds the evaluation took.
    pub eval_cost: f64,
    /// Number of evaluations folded into `fitness`.
    pub evals: u32,
}

impl FitnessRecord {
    pub fn single(fitness: f64, eval_cost: f64) -> Self {
        Self { fitness, eval_cost, evals: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Training examples per evaluation (N_T).
    pub train_examples: usize,
    /// Validation examples per evaluation (N_V).
    pub validation_examples: usize,
    /// Standard deviation of Gaussian noise added to the validation error.
    pub noise_sigma: f64,
    /// Virtual seconds charged per example processed.
    pub cost_per_example: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            train_examples: 200,
            validation_examples: 50,
            noise_sigma: 0.0,
            cost_per_example: 1.0,
        }
    }
}

impl EvalConfig {
    pub fn eval_cost(&self) -> f64 {
        self.cost_per_example * (self.train_examples + self.validation_examples) as f64
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.validation_examples == 0 {
            return Err("eval.validation_examples must be >= 1".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(format!("eval.noise_sigma = {} must be finite and >= 0", self.noise_sigma));
        }
        if !(self.cost_per_example > 0.0 && self.cost_per_example.is_finite()) {
            return Err(format!(
                "eval.cost_per_example = {} must be finite and > 0",
                self.cost_per_example
            ));
        }
        Ok(())
    }
}

/// Validation error plus the configured noise, floored at zero.
pub(crate) fn noisy_error<R: Rng + ?Sized>(error: f64, sigma: f64, rng: &mut R) -> f64 {
    if sigma > 0.0 {
        let g: f64 = rng.sample(rand_distr::StandardNormal);
        (error + sigma * g).max(0.0)
    } else {
        error
    }
}

/// The three atomic edit families. In the graph space `Insert` rewires an
/// edge and `Delete` resets a vertex to identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Insert,
    Delete,
    Modify,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RewriteError {
    #[error("candidate has no spare capacity for an equivalent rewrite")]
    NoCapacity,
}

/// A search space bound to a task: everything the evolution controllers need.
pub trait Problem: Sync {
    type Candidate: Clone + std::fmt::Debug + PartialEq + Send + Sync;

    fn random_candidate<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::Candidate;

    fn mutate<R: Rng + ?Sized>(&self, parent: &Self::Candidate, rng: &mut R) -> Self::Candidate;

    /// Full evaluation. `noise` is only drawn from when noise is configured.
    fn evaluate<R: Rng + ?Sized>(&self, candidate: &Self::Candidate, noise: &mut R) -> FitnessRecord;

    fn functional_hash(&self, candidate: &Self::Candidate, config: &HashConfig) -> FunctionalHash;

    /// Stable structural key, used only for reporting models-per-hash.
    fn structural_key(&self, candidate: &Self::Candidate) -> u64;

    /// Noise-free fitness on the search task.
    fn true_fitness(&self, candidate: &Self::Candidate) -> f64;

    /// Noise-free fitness on examples drawn from `data_seed` instead of the
    /// task's own seed.
    fn unseen_fitness(&self, candidate: &Self::Candidate, data_seed: u64) -> f64;
}

/// Hash of the canonical JSON form. Stable within a build; used only to
/// count distinct structures.
pub fn structural_key<T: Serialize>(candidate: &T) -> u64 {
    use std::hash::{Hash, Hasher};
    let json = serde_json::to_vec(candidate).expect("candidates serialize");
    let mut h = std::collections::hash_map::DefaultHasher::new();
    json.hash(&mut h);
    h.finish()
}
