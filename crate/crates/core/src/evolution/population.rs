//! Bounded populations for the two controllers.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::FitnessRecord;
use crate::ufh::FunctionalHash;

#[derive(Clone, Debug, PartialEq)]
pub struct Individual<C> {
    pub candidate: C,
    pub record: FitnessRecord,
    /// Filled in lazily by techniques that need it.
    pub hash: Option<FunctionalHash>,
    /// Admission order, starting at 0.
    pub index: u64,
}

impl<C> Individual<C> {
    pub fn fitness(&self) -> f64 {
        self.record.fitness
    }

    /// Better fitness first, then newer.
    fn beats(&self, other: &Self) -> bool {
        match self.fitness().total_cmp(&other.fitness()) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => self.index > other.index,
        }
    }
}

/// Search controller, which decides who leaves an overflowing population.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    /// Regularized evolution: the oldest leaves.
    #[default]
    Regularized,
    /// Classic tournament selection: the worst leaves, oldest first among ties.
    ClassicTournament,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("population has {size} individuals, tournament needs {needed}")]
pub struct PopulationTooSmall {
    pub size: usize,
    pub needed: usize,
}

/// Individuals in admission order.
#[derive(Clone, Debug)]
pub struct Population<C> {
    members: VecDeque<Individual<C>>,
    capacity: usize,
    controller: Controller,
}

impl<C> Population<C> {
    pub fn new(capacity: usize, controller: Controller) -> Self {
        assert!(capacity >= 1, "population capacity must be positive");
        Self { members: VecDeque::with_capacity(capacity + 1), capacity, controller }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Individual<C>> {
        self.members.iter()
    }

    pub fn get(&self, pos: usize) -> &Individual<C> {
        &self.members[pos]
    }

    pub fn get_mut(&mut self, pos: usize) -> &mut Individual<C> {
        &mut self.members[pos]
    }

    /// Adds `ind`; once over capacity, removes and returns one individual
    /// according to the replacement rule (possibly `ind` itself).
    pub fn insert(&mut self, ind: Individual<C>) -> Option<Individual<C>> {
        self.members.push_back(ind);
        if self.members.len() <= self.capacity {
            return None;
        }
        match self.controller {
            Controller::Regularized => self.members.pop_front(),
            Controller::ClassicTournament => {
                let mut worst = 0;
                for (pos, m) in self.members.iter().enumerate().skip(1) {
                    let w = &self.members[worst];
                    // Strictly lower fitness, or equal and older.
                    if m.fitness() < w.fitness() || (m.fitness() == w.fitness() && m.index < w.index) {
                        worst = pos;
                    }
                }
                self.members.remove(worst)
            }
        }
    }

    /// Highest fitness, newest among ties.
    pub fn best(&self) -> Option<&Individual<C>> {
        self.members.iter().reduce(|a, b| if b.beats(a) { b } else { a })
    }

    /// Tournament of `size` distinct members drawn uniformly; returns the
    /// winner's position.
    pub fn select_parent<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<usize, PopulationTooSmall> {
        if size == 0 || size > self.len() {
            return Err(PopulationTooSmall { size: self.len(), needed: size });
        }
        let picks = rand::seq::index::sample(rng, self.len(), size);
        let winner = picks
            .iter()
            .reduce(|a, b| if self.members[b].beats(&self.members[a]) { b } else { a })
            .expect("size >= 1");
        Ok(winner)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ind(fitness: f64, index: u64) -> Individual<u64> {
        Individual { candidate: index, record: FitnessRecord::single(fitness, 1.0), hash: None, index }
    }

    #[test]
    fn regularized_removes_oldest() {
        let mut pop = Population::new(3, Controller::Regularized);
        for i in 0..3 {
            assert!(pop.insert(ind(1.0, i)).is_none());
        }
        assert_eq!(pop.insert(ind(0.0, 3)).unwrap().index, 0);
        assert_eq!(pop.len(), 3);
    }

    #[test]
    fn elitist_removes_worst_then_oldest() {
        let mut pop = Population::new(3, Controller::ClassicTournament);
        pop.insert(ind(0.2, 0));
        pop.insert(ind(0.9, 1));
        pop.insert(ind(0.2, 2));
        assert_eq!(pop.insert(ind(0.5, 3)).unwrap().index, 0);
        assert_eq!(pop.insert(ind(0.1, 4)).unwrap().index, 4);
        assert_eq!(pop.best().unwrap().index, 1);
    }

    #[test]
    fn tournament_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pop = Population::new(10, Controller::Regularized);
        for i in 0..10 {
            pop.insert(ind((i * 7 % 10) as f64 / 10.0, i));
        }
        // Whole population: global best.
        for _ in 0..20 {
            let w = pop.select_parent(10, &mut rng).unwrap();
            assert_eq!(pop.get(w).index, pop.best().unwrap().index);
        }
        // Singleton tournaments cover everyone.
        let mut seen = [false; 10];
        for _ in 0..500 {
            seen[pop.select_parent(1, &mut rng).unwrap()] = true;
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(pop.select_parent(11, &mut rng), Err(PopulationTooSmall { size: 10, needed: 11 }));
    }

    #[test]
    fn ties_go_to_newest() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pop = Population::new(5, Controller::Regularized);
        for i in 0..5 {
            pop.insert(ind(0.5, i));
        }
        assert_eq!(pop.get(pop.select_parent(5, &mut rng).unwrap()).index, 4);
        for _ in 0..100 {
            // With three sampled, the winner is never older than two others.
            let w = pop.get(pop.select_parent(3, &mut rng).unwrap()).index;
            assert!(w >= 2);
        }
    }
}
