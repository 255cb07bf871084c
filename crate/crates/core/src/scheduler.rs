//! Virtual-time execution of a search. Serial mode runs one candidate at a
//! time; distributed mode is a deterministic discrete-event simulation of a
//! pool of workers. Nothing here reads the wall clock.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::{Search, Work};
use crate::metrics::{Sample, TimeCourse};
use crate::space::Problem;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    /// Virtual seconds per hash computation.
    pub hash_cost: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { hash_cost: 10.0 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), String> {
        if self.hash_cost >= 0.0 && self.hash_cost.is_finite() {
            Ok(())
        } else {
            Err(format!("cost.hash_cost = {} must be finite and >= 0", self.hash_cost))
        }
    }

    /// Hashing plus the evaluation that fed the search, if any.
    pub fn cost_of<C>(&self, work: &Work<C>) -> f64 {
        f64::from(work.hash_calls) * self.hash_cost + work.eval_cost().unwrap_or(0.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulerMode {
    #[default]
    Serial,
    Distributed { workers: usize },
}

impl SchedulerMode {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            SchedulerMode::Distributed { workers: 0 } => Err("scheduler.workers must be >= 1".into()),
            _ => Ok(()),
        }
    }
}

/// Monotone virtual clock.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VirtualClock {
    now: f64,
}

impl VirtualClock {
    pub fn now(&self) -> f64 {
        self.now
    }

    /// # Panics
    ///
    /// Panics if `t` is earlier than the current time.
    pub fn advance_to(&mut self, t: f64) {
        assert!(t >= self.now, "virtual clock moved backwards: {} -> {t}", self.now);
        self.now = t;
    }
}

fn admit<P: Problem>(search: &mut Search<'_, P>, work: Work<P::Candidate>, time: f64, tc: &mut TimeCourse) {
    let a = search.commit(work);
    tc.push(Sample {
        time,
        step: a.step,
        index: a.index,
        fitness: a.fitness,
        best_fitness: a.best_fitness,
        population_best: a.population_best,
        event: a.event,
        hash: a.hash,
        evaluations: a.evaluations,
    });
}

/// One candidate at a time. A candidate whose completion would pass
/// `budget` is not admitted and the run stops.
pub fn run_serial<P: Problem>(search: &mut Search<'_, P>, cost: &CostModel, budget: Option<f64>) -> TimeCourse {
    let mut clock = VirtualClock::default();
    let mut tc = TimeCourse::new();
    while let Some(work) = search.propose() {
        let done = clock.now() + cost.cost_of(&work);
        if budget.is_some_and(|b| done > b) {
            break;
        }
        clock.advance_to(done);
        admit(search, work, done, &mut tc);
    }
    tc.horizon = budget.unwrap_or(clock.now());
    tc
}

/// `workers` candidates in flight. Whenever one completes it is admitted and
/// the freed worker immediately proposes the next candidate from the current
/// population. Completions are processed in time order, ties by submission
/// order. Warm-up candidates go through the same pool.
pub fn run_distributed<P: Problem>(
    search: &mut Search<'_, P>,
    cost: &CostModel,
    workers: usize,
    budget: Option<f64>,
) -> TimeCourse {
    assert!(workers >= 1, "need at least one worker");
    let mut clock = VirtualClock::default();
    let mut tc = TimeCourse::new();
    // (completion time, submission sequence, work)
    let mut in_flight: Vec<(f64, u64, Work<P::Candidate>)> = Vec::with_capacity(workers);
    let mut seq = 0u64;
    let mut submit = |search: &mut Search<'_, P>, now: f64, in_flight: &mut Vec<_>| {
        if let Some(work) = search.propose() {
            in_flight.push((now + cost.cost_of(&work), seq, work));
            seq += 1;
        }
    };
    for _ in 0..workers {
        submit(search, 0.0, &mut in_flight);
    }
    while !in_flight.is_empty() {
        let next = (0..in_flight.len())
            .min_by(|&a, &b| in_flight[a].0.total_cmp(&in_flight[b].0).then(in_flight[a].1.cmp(&in_flight[b].1)))
            .expect("non-empty");
        let (done, _, work) = in_flight.swap_remove(next);
        if budget.is_some_and(|b| done > b) {
            break;
        }
        clock.advance_to(done);
        admit(search, work, done, &mut tc);
        submit(search, done, &mut in_flight);
    }
    tc.horizon = budget.unwrap_or(clock.now());
    tc
}

pub fn run<P: Problem>(search: &mut Search<'_, P>, mode: SchedulerMode, cost: &CostModel, budget: Option<f64>) -> TimeCourse {
    match mode {
        SchedulerMode::Serial => run_serial(search, cost, budget),
        SchedulerMode::Distributed { workers } => run_distributed(search, cost, workers, budget),
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("predicted speedup undefined: denominator {denominator} is not positive")]
pub struct DomainError {
    pub denominator: f64,
}

/// Per-candidate cost ratio of a plain search to an FEC search with hit rate
/// `h`, when hashing costs `n_e * n_s` example passes and evaluation `n_t`.
pub fn predicted_speedup(h: f64, n_e: usize, n_s: usize, n_t: usize) -> Result<f64, DomainError> {
    let denominator = (n_e * n_s) as f64 + (1.0 - h) * n_t as f64;
    if denominator > 0.0 && denominator.is_finite() {
        Ok(n_t as f64 / denominator)
    } else {
        Err(DomainError { denominator })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{EvolutionConfig, Technique};
    use crate::testkit::Toy;
    use crate::ufh::HashConfig;

    fn search(toy: &Toy, p: usize, n: usize, technique: Technique, seed: u64) -> Search<'_, Toy> {
        Search::new(toy, EvolutionConfig::new(p, 1, n, technique), HashConfig::default(), seed)
    }

    #[test]
    fn serial_costs_add_up() {
        let cost = CostModel { hash_cost: 1.0 };
        // Two different functions.
        let toy = Toy::scripted(&[0, 16], |c| if c == 0 { 5.0 } else { 7.0 });
        let tc = run_serial(&mut search(&toy, 2, 2, Technique::Fec, 0), &cost, None);
        assert_eq!(tc.samples.last().unwrap().time, 14.0);
        // Same function twice: the second is a hit.
        let toy = Toy::scripted(&[0, 1], |c| if c == 0 { 5.0 } else { 7.0 });
        let tc = run_serial(&mut search(&toy, 2, 2, Technique::Fec, 0), &cost, None);
        assert_eq!(tc.samples.iter().map(|s| s.time).collect::<Vec<_>>(), [6.0, 7.0]);
    }

    #[test]
    fn budget_stops_before_overrun() {
        let toy = Toy::scripted(&[0], |_| 10.0);
        let tc = run_serial(&mut search(&toy, 2, 5, Technique::None, 0), &CostModel::default(), Some(5.0));
        assert!(tc.samples.is_empty());
        assert_eq!(tc.horizon, 5.0);
    }

    #[test]
    fn conservation_and_monotonicity() {
        let toy = Toy { cost: |c| 1.0 + f64::from(c % 7), ..Toy::default() };
        let cost = CostModel { hash_cost: 0.5 };
        let mut s = search(&toy, 20, 2000, Technique::Fec, 3);
        let tc = run_serial(&mut s, &cost, None);
        assert!(s.stats().hits > 0);
        let mut expected = s.stats().hash_calls as f64 * 0.5;
        let mut prev = 0.0;
        for w in &tc.samples {
            assert!(w.time >= prev);
            prev = w.time;
        }
        // Re-derive each evaluation's cost from the admitted candidates.
        let mut replay = search(&toy, 20, 2000, Technique::Fec, 3);
        while let Some(work) = replay.propose() {
            expected += work.eval_cost().unwrap_or(0.0);
            replay.commit(work);
        }
        assert!((tc.samples.last().unwrap().time - expected).abs() < 1e-9);
    }

    #[test]
    fn completion_order() {
        let toy = Toy::scripted(&[0, 16], |c| if c == 0 { 10.0 } else { 2.0 });
        let mut s = search(&toy, 2, 2, Technique::None, 0);
        let tc = run_distributed(&mut s, &CostModel { hash_cost: 0.0 }, 2, None);
        let order: Vec<usize> = tc.samples.iter().map(|x| x.step).collect();
        assert_eq!(order, [1, 0]);
        assert_eq!(tc.samples[0].time, 2.0);
    }

    #[test]
    fn one_worker_is_serial() {
        let toy = Toy { sigma: 0.05, cost: |c| 1.0 + f64::from(c % 5), ..Toy::default() };
        for technique in [Technique::None, Technique::Fec, Technique::Fea { max_evals: 3 }] {
            for budget in [None, Some(300.0)] {
                let a = run_serial(&mut search(&toy, 10, 500, technique, 9), &CostModel::default(), budget);
                let b = run_distributed(&mut search(&toy, 10, 500, technique, 9), &CostModel::default(), 1, budget);
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn distributed_is_deterministic() {
        let toy = Toy { cost: |c| 1.0 + f64::from(c % 5), ..Toy::default() };
        let run = || run_distributed(&mut search(&toy, 10, 500, Technique::Fec, 2), &CostModel::default(), 8, None);
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.samples.len(), 500);
    }

    #[test]
    fn speedup_formula() {
        assert_eq!(predicted_speedup(1.0, 10, 3, 3000).unwrap(), 100.0);
        assert_eq!(predicted_speedup(1.0, 10, 3, 30).unwrap(), 1.0);
        let none = predicted_speedup(0.0, 10, 3, 100).unwrap();
        assert!(none < 1.0 && (none - 100.0 / 130.0).abs() < 1e-15);
        assert!(predicted_speedup(3.0, 0, 0, 1).is_err());
    }
}
