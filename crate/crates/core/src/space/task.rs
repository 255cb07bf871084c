//! Synthetic regression tasks shared by both search spaces. Inputs are
//! standard normal.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng;

/// Widest input any task produces.
pub const MAX_INPUTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// `y = w·x + b` with `w`, `b` drawn from the params seed.
    AffineRegression,
    /// `y = x1·x2 + x2`; any further inputs are distractors.
    NonlinearRegression,
}

/// Serializable task description.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Seeds the ground-truth parameters.
    #[serde(default = "default_params_seed")]
    pub params_seed: u64,
    /// Seeds the example sequences. Changing only this gives unseen data
    /// from the same task.
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
}

fn default_params_seed() -> u64 {
    1
}

fn default_data_seed() -> u64 {
    2
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::AffineRegression,
            params_seed: default_params_seed(),
            data_seed: default_data_seed(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Example {
    /// Features; only the first `Task::dim` entries are meaningful.
    pub inputs: [f64; MAX_INPUTS],
    pub label: f64,
}

#[derive(Clone, Debug, PartialEq)]
enum Target {
    Affine { weights: [f64; MAX_INPUTS], bias: f64 },
    ProductPlus,
}

impl Target {
    fn label(&self, x: &[f64; MAX_INPUTS], dim: usize) -> f64 {
        match self {
            Target::Affine { weights, bias } => {
                weights[..dim].iter().zip(&x[..dim]).map(|(w, v)| w * v).sum::<f64>() + bias
            }
            Target::ProductPlus => x[0] * x[1] + x[1],
        }
    }
}

const PARAMS_SALT: u64 = 0x7A5C_0001;
const TRAIN_SALT: u64 = 0x7A5C_0002;
const VALID_SALT: u64 = 0x7A5C_0003;

/// A materialized task: ground truth plus fixed train/validation sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub spec: TaskSpec,
    pub dim: usize,
    target: Target,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
}

impl Task {
    /// Builds the task.
    ///
    /// # Panics
    ///
    /// Panics if `dim` is 0 or larger than [`MAX_INPUTS`], or if the
    /// nonlinear target is requested with fewer than two inputs.
    pub fn new(spec: TaskSpec, dim: usize, n_train: usize, n_validation: usize) -> Self {
        assert!((1..=MAX_INPUTS).contains(&dim), "task input width {dim} out of range");
        let target = match spec.kind {
            TaskKind::AffineRegression => {
                let mut rng = rng::seeded(spec.params_seed, PARAMS_SALT);
                let mut weights = [0.0; MAX_INPUTS];
                for w in weights.iter_mut().take(dim) {
                    *w = rng.sample(StandardNormal);
                }
                Target::Affine { weights, bias: rng.sample(StandardNormal) }
            }
            TaskKind::NonlinearRegression => {
                assert!(dim >= 2, "nonlinear target needs two inputs");
                Target::ProductPlus
            }
        };
        let draw = |salt: u64, n: usize| {
            let mut rng = rng::seeded(spec.data_seed, salt);
            (0..n)
                .map(|_| {
                    let mut inputs = [0.0; MAX_INPUTS];
                    for x in inputs.iter_mut().take(dim) {
                        *x = rng.sample(StandardNormal);
                    }
                    let label = target.label(&inputs, dim);
                    Example { inputs, label }
                })
                .collect::<Vec<_>>()
        };
        let train = draw(TRAIN_SALT, n_train);
        let validation = draw(VALID_SALT, n_validation);
        Self { spec, dim, target, train, validation }
    }

    /// Same ground truth, examples drawn from `data_seed` instead.
    pub fn with_data_seed(&self, data_seed: u64) -> Self {
        Self::new(
            TaskSpec { data_seed, ..self.spec },
            self.dim,
            self.train.len(),
            self.validation.len(),
        )
    }

    /// Ground-truth label for arbitrary inputs.
    pub fn label(&self, inputs: &[f64; MAX_INPUTS]) -> f64 {
        self.target.label(inputs, self.dim)
    }

    /// Affine weights and bias, if this is an affine task.
    pub fn affine_parameters(&self) -> Option<(&[f64], f64)> {
        match &self.target {
            Target::Affine { weights, bias } => Some((&weights[..self.dim], *bias)),
            Target::ProductPlus => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_examples() {
        let spec = TaskSpec { kind: TaskKind::AffineRegression, params_seed: 3, data_seed: 4 };
        let a = Task::new(spec, 4, 50, 20);
        let b = Task::new(spec, 4, 50, 20);
        assert_eq!(a, b);
        let c = a.with_data_seed(5);
        assert_ne!(a.train, c.train);
        assert_eq!(a.affine_parameters(), c.affine_parameters());
    }

    #[test]
    fn labels_follow_target() {
        let spec = TaskSpec { kind: TaskKind::NonlinearRegression, params_seed: 0, data_seed: 9 };
        let t = Task::new(spec, 2, 30, 5);
        for ex in &t.train {
            let [x1, x2, rest @ ..] = ex.inputs;
            assert_eq!(ex.label, x1 * x2 + x2);
            assert!(rest.iter().all(|&r| r == 0.0));
        }
        let aff = Task::new(TaskSpec::default(), 4, 10, 10);
        let (w, b) = aff.affine_parameters().unwrap();
        for ex in &aff.validation {
            let y: f64 = w.iter().zip(&ex.inputs).map(|(w, x)| w * x).sum::<f64>() + b;
            assert!((y - ex.label).abs() < 1e-12);
        }
    }
}
