//! The hash-based techniques. Acquisition is split into a lookup phase, run
//! when a candidate is proposed, and a commit phase, run when its result is
//! admitted, so that concurrent workers see realistic cache contents.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::cache::{Cache, Tabulist};
use super::Technique;
use crate::space::{FitnessRecord, Problem};
use crate::ufh::{FunctionalHash, HashConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheEvent {
    /// Evaluated without consulting a cache.
    Evaluated,
    Hit,
    Miss,
    /// A hit whose key was then deleted.
    Forget,
    /// Cached, but below the evaluation cap, so evaluated again.
    Aggregate,
    /// A hit that was also evaluated to check for a collision.
    CollisionCheck,
}

impl CacheEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            CacheEvent::Evaluated => "evaluated",
            CacheEvent::Hit => "hit",
            CacheEvent::Miss => "miss",
            CacheEvent::Forget => "forget",
            CacheEvent::Aggregate => "aggregate",
            CacheEvent::CollisionCheck => "collision_check",
        }
    }

    /// Resolved from the cache without an evaluation feeding the search.
    pub fn is_hit(self) -> bool {
        matches!(self, CacheEvent::Hit | CacheEvent::Forget | CacheEvent::CollisionCheck)
    }
}

/// Lookup result awaiting commit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Pending {
    pub hash: Option<FunctionalHash>,
    pub event: CacheEvent,
    pub cached: Option<FitnessRecord>,
    /// Evaluation feeding the search.
    pub fresh: Option<FitnessRecord>,
    pub hash_calls: u32,
    /// Counterfactual check outcome, if one ran.
    pub collision: Option<bool>,
}

impl Pending {
    pub fn evaluations(&self) -> u32 {
        u32::from(self.fresh.is_some()) + u32::from(self.collision.is_some())
    }
}

/// Random streams the lookup phase may draw from.
pub(crate) struct Streams<'r, R: Rng + ?Sized, S: Rng + ?Sized> {
    pub forget: &'r mut R,
    pub noise: &'r mut S,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn begin<P: Problem, R: Rng + ?Sized, S: Rng + ?Sized>(
    technique: Technique,
    problem: &P,
    child: &P::Candidate,
    known_hash: Option<FunctionalHash>,
    cache: &Cache,
    hash_config: &HashConfig,
    counterfactual_tolerance: Option<f64>,
    rngs: Streams<'_, R, S>,
) -> Pending {
    let mut pending = Pending { hash: known_hash, event: CacheEvent::Evaluated, cached: None, fresh: None, hash_calls: 0, collision: None };
    if !technique.uses_cache() {
        pending.fresh = Some(problem.evaluate(child, rngs.noise));
        return pending;
    }
    let hash = match known_hash {
        Some(h) => h,
        None => {
            pending.hash_calls += 1;
            problem.functional_hash(child, hash_config)
        }
    };
    pending.hash = Some(hash);
    match (technique, cache.lookup(hash)) {
        (_, None) => {
            pending.event = CacheEvent::Miss;
            pending.fresh = Some(problem.evaluate(child, rngs.noise));
        }
        (Technique::Fea { max_evals }, Some(rec)) if rec.evals < max_evals => {
            pending.event = CacheEvent::Aggregate;
            pending.cached = Some(rec);
            pending.fresh = Some(problem.evaluate(child, rngs.noise));
        }
        (_, Some(rec)) => {
            pending.event = CacheEvent::Hit;
            pending.cached = Some(rec);
            if let Technique::FecForgetful { forget_probability } = technique {
                if rngs.forget.random_bool(forget_probability) {
                    cache.forget(hash);
                    pending.event = CacheEvent::Forget;
                }
            }
            if let Some(tol) = counterfactual_tolerance {
                let check = problem.evaluate(child, rngs.noise);
                let collided = (check.fitness - rec.fitness).abs() > tol;
                if collided {
                    cache.record_collision();
                }
                pending.collision = Some(collided);
                if pending.event == CacheEvent::Hit {
                    pending.event = CacheEvent::CollisionCheck;
                }
            }
        }
    }
    pending
}

/// Writes the lookup's outcome to the cache; returns the record the search
/// should use.
pub(crate) fn finish(technique: Technique, cache: &Cache, pending: &Pending) -> FitnessRecord {
    match (technique, pending.fresh, pending.hash) {
        (Technique::Fea { max_evals }, Some(fresh), Some(h)) => cache.aggregate(h, fresh, max_evals),
        (t, Some(fresh), Some(h)) if t.uses_cache() => cache.insert_if_absent(h, fresh),
        (_, Some(fresh), _) => fresh,
        (_, None, _) => pending.cached.expect("a lookup without evaluation is a hit"),
    }
}

/// Fitness for one candidate together with what it took to get it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Acquired {
    pub record: FitnessRecord,
    pub hash: FunctionalHash,
    pub event: CacheEvent,
    pub evaluations: u32,
    pub hash_calls: u32,
}

fn acquire<P: Problem, R: Rng + ?Sized, S: Rng + ?Sized>(
    technique: Technique,
    problem: &P,
    child: &P::Candidate,
    cache: &Cache,
    hash_config: &HashConfig,
    forget: &mut R,
    noise: &mut S,
) -> Acquired {
    let pending = begin(technique, problem, child, None, cache, hash_config, None, Streams { forget, noise });
    let record = finish(technique, cache, &pending);
    Acquired {
        record,
        hash: pending.hash.expect("cached techniques hash"),
        event: pending.event,
        evaluations: pending.evaluations(),
        hash_calls: pending.hash_calls,
    }
}

/// Returns the cached fitness of a functionally equivalent candidate, or
/// evaluates and caches.
pub fn acquire_fec<P: Problem, S: Rng + ?Sized>(
    problem: &P,
    child: &P::Candidate,
    cache: &Cache,
    hash_config: &HashConfig,
    noise: &mut S,
) -> Acquired {
    let mut unused = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    acquire(Technique::Fec, problem, child, cache, hash_config, &mut unused, noise)
}

/// As [`acquire_fec`], deleting the key after a hit with probability
/// `forget_probability`, drawn from `forget`.
pub fn acquire_fec_forgetful<P: Problem, R: Rng + ?Sized, S: Rng + ?Sized>(
    problem: &P,
    child: &P::Candidate,
    cache: &Cache,
    hash_config: &HashConfig,
    forget_probability: f64,
    forget: &mut R,
    noise: &mut S,
) -> Acquired {
    acquire(Technique::FecForgetful { forget_probability }, problem, child, cache, hash_config, forget, noise)
}

/// Aggregating cache: keeps re-evaluating until `max_evals` evaluations are
/// averaged under the key.
pub fn acquire_fea<P: Problem, S: Rng + ?Sized>(
    problem: &P,
    child: &P::Candidate,
    cache: &Cache,
    hash_config: &HashConfig,
    max_evals: u32,
    noise: &mut S,
) -> Acquired {
    let mut unused = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    acquire(Technique::Fea { max_evals }, problem, child, cache, hash_config, &mut unused, noise)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcmOutcome<C> {
    pub child: C,
    /// Hash of `child`, when the loop computed it.
    pub hash: Option<FunctionalHash>,
    pub mutations: u32,
    pub hash_calls: u32,
}

/// Mutates, then keeps mutating the child while its hash equals
/// `parent_hash`, for at most `max_retry` mutations in total.
pub fn mutate_fcm<P: Problem, R: Rng + ?Sized>(
    problem: &P,
    parent: &P::Candidate,
    parent_hash: FunctionalHash,
    hash_config: &HashConfig,
    max_retry: u32,
    rng: &mut R,
) -> FcmOutcome<P::Candidate> {
    let mut out = FcmOutcome { child: problem.mutate(parent, rng), hash: None, mutations: 1, hash_calls: 0 };
    while out.mutations < max_retry {
        let h = problem.functional_hash(&out.child, hash_config);
        out.hash_calls += 1;
        out.hash = Some(h);
        if h != parent_hash {
            break;
        }
        out.child = problem.mutate(&out.child, rng);
        out.hash = None;
        out.mutations += 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateOutcome<C> {
    pub child: C,
    pub hash: FunctionalHash,
    /// Mutations forced by the gate.
    pub mutations: u32,
    pub hash_calls: u32,
}

/// Gate without counting; the caller increments on admission.
pub(crate) fn gate<P: Problem, R: Rng + ?Sized>(
    problem: &P,
    child: P::Candidate,
    tabulist: &Tabulist,
    hash_config: &HashConfig,
    max_count: Option<u64>,
    max_retry: u32,
    rng: &mut R,
) -> GateOutcome<P::Candidate> {
    let hash = problem.functional_hash(&child, hash_config);
    let mut out = GateOutcome { child, hash, mutations: 0, hash_calls: 1 };
    let Some(k) = max_count else {
        return out;
    };
    while out.mutations < max_retry && tabulist.count(out.hash) >= k {
        out.child = problem.mutate(&out.child, rng);
        out.hash = problem.functional_hash(&out.child, hash_config);
        out.mutations += 1;
        out.hash_calls += 1;
    }
    out
}

/// Mutates `child` further while its hash has been seen `max_count` times
/// (at most `max_retry` times), then counts the final hash.
pub fn gate_tabulist<P: Problem, R: Rng + ?Sized>(
    problem: &P,
    child: P::Candidate,
    tabulist: &Tabulist,
    hash_config: &HashConfig,
    max_count: Option<u64>,
    max_retry: u32,
    rng: &mut R,
) -> GateOutcome<P::Candidate> {
    let out = gate(problem, child, tabulist, hash_config, max_count, max_retry, rng);
    tabulist.increment(out.hash);
    out
}
