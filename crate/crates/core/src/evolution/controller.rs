//! The search sequencer. `propose` draws the next candidate and resolves its
//! fitness lookup; `commit` admits a proposal into the population. Schedulers
//! decide when each proposal completes.

use std::collections::{HashMap, HashSet};

use rand_chacha::ChaCha8Rng;

use super::cache::{Cache, CacheCounters, Tabulist};
use super::population::{Individual, Population};
use super::technique::{self, CacheEvent, Pending, Streams};
use super::{EvolutionConfig, Technique};
use crate::rng::{self, Stream};
use crate::space::{FitnessRecord, Problem};
use crate::ufh::{FunctionalHash, HashConfig};

/// A proposed candidate whose fitness lookup has been resolved but which has
/// not been admitted yet.
#[derive(Clone, Debug)]
pub struct Work<C> {
    /// Proposal order, starting at 0.
    pub step: usize,
    pub candidate: C,
    pub(crate) pending: Pending,
    /// Hash computations spent on this candidate, gating and FCM included.
    pub hash_calls: u32,
}

impl<C> Work<C> {
    pub fn hash(&self) -> Option<FunctionalHash> {
        self.pending.hash
    }

    pub fn event(&self) -> CacheEvent {
        self.pending.event
    }

    /// Virtual cost of the evaluation feeding the search, if one ran.
    pub fn eval_cost(&self) -> Option<f64> {
        self.pending.fresh.map(|r| r.eval_cost)
    }
}

/// One admission into the population.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Admission {
    pub step: usize,
    /// Admission order, starting at 0.
    pub index: u64,
    pub hash: Option<FunctionalHash>,
    pub fitness: f64,
    /// Highest fitness admitted so far.
    pub best_fitness: f64,
    /// Highest fitness currently in the population.
    pub population_best: f64,
    pub event: CacheEvent,
    pub evaluations: u32,
    pub collision: Option<bool>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub proposed: u64,
    pub admitted: u64,
    /// Evaluator invocations, counterfactual checks included.
    pub evaluations: u64,
    pub counterfactual_evaluations: u64,
    pub hash_calls: u64,
    /// Mutations applied, FCM and tabulist retries included.
    pub mutations: u64,
    pub hits: u64,
    pub misses: u64,
    pub forgets: u64,
    pub collisions: u64,
}

impl SearchStats {
    /// Fraction of cache lookups resolved without evaluation.
    pub fn hit_fraction(&self) -> f64 {
        let lookups = self.hits + self.misses;
        if lookups == 0 {
            0.0
        } else {
            self.hits as f64 / lookups as f64
        }
    }

    /// Collisions per counterfactual check.
    pub fn collision_rate(&self) -> f64 {
        if self.counterfactual_evaluations == 0 {
            0.0
        } else {
            self.collisions as f64 / self.counterfactual_evaluations as f64
        }
    }
}

pub struct Search<'p, P: Problem> {
    problem: &'p P,
    config: EvolutionConfig,
    hash_config: HashConfig,
    counterfactual: Option<f64>,
    population: Population<P::Candidate>,
    cache: Cache,
    tabulist: Tabulist,
    search_rng: ChaCha8Rng,
    forget_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    stats: SearchStats,
    best: Option<Individual<P::Candidate>>,
    structures: HashMap<FunctionalHash, HashSet<u64>>,
    track_structures: bool,
}

impl<'p, P: Problem> Search<'p, P> {
    /// # Panics
    ///
    /// Panics if `config` or `hash_config` fails validation.
    pub fn new(problem: &'p P, config: EvolutionConfig, hash_config: HashConfig, seed: u64) -> Self {
        if let Err(e) = config.validate().and_then(|()| hash_config.validate()) {
            panic!("invalid search configuration: {e}");
        }
        Self {
            problem,
            config,
            hash_config,
            counterfactual: None,
            population: Population::new(config.population_size, config.controller),
            cache: Cache::new(config.cache_capacity),
            tabulist: Tabulist::new(),
            search_rng: rng::stream(seed, Stream::Search),
            forget_rng: rng::stream(seed, Stream::Forget),
            noise_rng: rng::stream(seed, Stream::Noise),
            stats: SearchStats::default(),
            best: None,
            structures: HashMap::new(),
            track_structures: false,
        }
    }

    /// Also evaluates every cache hit and counts a collision when the fresh
    /// fitness differs from the cached one by more than `tolerance`. The
    /// search still uses the cached value.
    pub fn with_counterfactual(mut self, tolerance: f64) -> Self {
        self.counterfactual = Some(tolerance);
        self
    }

    /// Records the structural key of every hashed admission, for
    /// models-per-hash reporting.
    pub fn with_structure_tracking(mut self) -> Self {
        self.track_structures = true;
        self
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.config
    }

    pub fn has_next(&self) -> bool {
        (self.stats.proposed as usize) < self.config.candidates
    }

    pub fn population(&self) -> &Population<P::Candidate> {
        &self.population
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    pub fn cache_counters(&self) -> CacheCounters {
        self.cache.counters()
    }

    pub fn tabulist(&self) -> &Tabulist {
        &self.tabulist
    }

    pub fn stats(&self) -> SearchStats {
        self.stats
    }

    /// Best individual ever admitted.
    pub fn best_ever(&self) -> Option<&Individual<P::Candidate>> {
        self.best.as_ref()
    }

    /// Distinct hashes and distinct structures among hashed admissions.
    pub fn structure_counts(&self) -> (usize, usize) {
        let structures = self.structures.values().map(HashSet::len).sum();
        (self.structures.len(), structures)
    }

    fn hash(&mut self, c: &P::Candidate) -> FunctionalHash {
        self.stats.hash_calls += 1;
        self.problem.functional_hash(c, &self.hash_config)
    }

    /// Draws the next candidate and resolves its lookup. Returns `None` once
    /// the candidate budget is spent.
    pub fn propose(&mut self) -> Option<Work<P::Candidate>> {
        if !self.has_next() {
            return None;
        }
        let step = self.stats.proposed as usize;
        self.stats.proposed += 1;
        let calls_before = self.stats.hash_calls;
        let warm_up = step < self.config.population_size || self.population.is_empty();

        let mut known_hash = None;
        let mut child = if warm_up {
            self.problem.random_candidate(&mut self.search_rng)
        } else {
            let size = self.config.tournament_size.min(self.population.len());
            let pos = self.population.select_parent(size, &mut self.search_rng).expect("non-empty population");
            match self.config.technique {
                Technique::Fcm => {
                    let parent_hash = match self.population.get(pos).hash {
                        Some(h) => h,
                        None => {
                            let h = self.hash(&self.population.get(pos).candidate.clone());
                            self.population.get_mut(pos).hash = Some(h);
                            h
                        }
                    };
                    let out = technique::mutate_fcm(
                        self.problem,
                        &self.population.get(pos).candidate,
                        parent_hash,
                        &self.hash_config,
                        self.config.max_retry,
                        &mut self.search_rng,
                    );
                    self.stats.hash_calls += u64::from(out.hash_calls);
                    self.stats.mutations += u64::from(out.mutations);
                    known_hash = out.hash;
                    out.child
                }
                _ => {
                    self.stats.mutations += 1;
                    self.problem.mutate(&self.population.get(pos).candidate, &mut self.search_rng)
                }
            }
        };

        if let Technique::Tabulist { max_count } = self.config.technique {
            let out = technique::gate(
                self.problem,
                child,
                &self.tabulist,
                &self.hash_config,
                max_count,
                self.config.max_retry,
                &mut self.search_rng,
            );
            self.stats.hash_calls += u64::from(out.hash_calls);
            self.stats.mutations += u64::from(out.mutations);
            known_hash = Some(out.hash);
            child = out.child;
        }

        let pending = technique::begin(
            self.config.technique,
            self.problem,
            &child,
            known_hash,
            &self.cache,
            &self.hash_config,
            self.counterfactual,
            Streams { forget: &mut self.forget_rng, noise: &mut self.noise_rng },
        );
        self.stats.hash_calls += u64::from(pending.hash_calls);
        self.stats.evaluations += u64::from(pending.evaluations());
        if pending.collision.is_some() {
            self.stats.counterfactual_evaluations += 1;
        }
        if pending.collision == Some(true) {
            self.stats.collisions += 1;
        }
        if self.config.technique.uses_cache() {
            if pending.event.is_hit() {
                self.stats.hits += 1;
            } else {
                self.stats.misses += 1;
            }
            if pending.event == CacheEvent::Forget {
                self.stats.forgets += 1;
            }
        }
        let hash_calls = (self.stats.hash_calls - calls_before) as u32;
        Some(Work { step, candidate: child, pending, hash_calls })
    }

    /// Admits a proposal.
    pub fn commit(&mut self, work: Work<P::Candidate>) -> Admission {
        let record: FitnessRecord = technique::finish(self.config.technique, &self.cache, &work.pending);
        let hash = work.pending.hash;
        if let (Technique::Tabulist { .. }, Some(h)) = (self.config.technique, hash) {
            self.tabulist.increment(h);
        }
        if let (true, Some(h)) = (self.track_structures, hash) {
            let key = self.problem.structural_key(&work.candidate);
            self.structures.entry(h).or_default().insert(key);
        }
        let index = self.stats.admitted;
        self.stats.admitted += 1;
        let ind = Individual { candidate: work.candidate, record, hash, index };
        if self.best.as_ref().is_none_or(|b| record.fitness > b.record.fitness) {
            self.best = Some(ind.clone());
        }
        self.population.insert(ind);
        Admission {
            step: work.step,
            index,
            hash,
            fitness: record.fitness,
            best_fitness: self.best.as_ref().map_or(0.0, |b| b.record.fitness),
            population_best: self.population.best().map_or(0.0, |b| b.record.fitness),
            event: work.pending.event,
            evaluations: work.pending.evaluations(),
            collision: work.pending.collision,
        }
    }
}
