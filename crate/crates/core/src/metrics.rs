//! Time courses, AUC, run summaries, counterfactual collision reports and
//! cross-seed aggregation.

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::{CacheEvent, EvolutionConfig, Search, SearchStats, Technique};
use crate::scheduler::{self, CostModel, SchedulerMode};
use crate::space::Problem;
use crate::ufh::{FunctionalHash, HashConfig};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("time course has no samples")]
    EmptyTimeCourse,
    #[error("time course horizon must be positive")]
    NonPositiveHorizon,
    #[error("group `{group}` has {runs} run(s); at least 2 are needed")]
    InsufficientRuns { group: String, runs: usize },
}

/// One admission, stamped with its virtual completion time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub step: usize,
    pub index: u64,
    pub fitness: f64,
    /// Best fitness admitted so far.
    pub best_fitness: f64,
    pub population_best: f64,
    pub event: CacheEvent,
    pub hash: Option<FunctionalHash>,
    pub evaluations: u32,
}

/// Admissions in completion order. Times are non-decreasing; simultaneous
/// completions in distributed mode share a time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimeCourse {
    pub samples: Vec<Sample>,
    /// Integration horizon T.
    pub horizon: f64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    virtual_time_s: f64,
    step: usize,
    best_fitness: f64,
    event: &'a str,
    population_best: f64,
}

impl TimeCourse {
    pub fn new() -> Self {
        Self::default()
    }

    /// # Panics
    ///
    /// Panics if `sample` is earlier than the last one.
    pub fn push(&mut self, sample: Sample) {
        if let Some(last) = self.samples.last() {
            assert!(sample.time >= last.time, "time course must not go back in time");
        }
        self.samples.push(sample);
    }

    pub fn final_best(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.best_fitness)
    }

    /// CSV with columns `virtual_time_s, step, best_fitness, event,
    /// population_best`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.samples {
            w.serialize(CsvRow {
                virtual_time_s: s.time,
                step: s.step,
                best_fitness: s.best_fitness,
                event: s.event.as_str(),
                population_best: s.population_best,
            })?;
        }
        if self.samples.is_empty() {
            w.write_record(["virtual_time_s", "step", "best_fitness", "event", "population_best"])?;
        }
        w.flush()
    }
}

/// `(1/T) ∫₀ᵀ f(t) dt` for the best-so-far step function, which is 0 before
/// the first sample. Samples past the horizon are ignored.
pub fn auc(tc: &TimeCourse) -> Result<f64, MetricsError> {
    if tc.samples.is_empty() {
        return Err(MetricsError::EmptyTimeCourse);
    }
    let horizon = tc.horizon;
    if horizon.is_nan() || horizon <= 0.0 {
        return Err(MetricsError::NonPositiveHorizon);
    }
    let mut area = 0.0;
    for (i, s) in tc.samples.iter().enumerate() {
        if s.time >= horizon {
            break;
        }
        let end = tc.samples.get(i + 1).map_or(horizon, |n| n.time.min(horizon));
        area += s.best_fitness * (end - s.time);
    }
    Ok(area / horizon)
}

/// Outcome of one seeded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub seed: u64,
    pub technique: String,
    pub auc: Option<f64>,
    pub hit_fraction: f64,
    pub miss_fraction: f64,
    pub collision_rate: f64,
    pub eval_calls: u64,
    pub hash_calls: u64,
    pub proposed: u64,
    pub admitted: u64,
    pub hits: u64,
    pub misses: u64,
    pub forgets: u64,
    pub collisions: u64,
    pub final_time_s: f64,
    pub horizon_s: f64,
    /// Highest fitness admitted at any point.
    pub best_admitted_fitness: f64,
    /// Recorded fitness of the best individual in the final population.
    pub final_recorded_fitness: f64,
    /// Noise-free re-evaluation of that individual.
    pub final_fitness: f64,
    pub distinct_hashes: usize,
    pub distinct_structures: usize,
    pub best_candidate: serde_json::Value,
    pub best_candidate_hash: Option<FunctionalHash>,
}

impl ExperimentSummary {
    pub fn models_per_hash(&self) -> f64 {
        if self.distinct_hashes == 0 {
            0.0
        } else {
            self.distinct_structures as f64 / self.distinct_hashes as f64
        }
    }
}

pub fn summarize<P>(problem: &P, search: &Search<'_, P>, tc: &TimeCourse, seed: u64) -> ExperimentSummary
where
    P: Problem,
    P::Candidate: Serialize,
{
    let stats: SearchStats = search.stats();
    let best = search.population().best();
    let lookups = stats.hits + stats.misses;
    let (distinct_hashes, distinct_structures) = search.structure_counts();
    ExperimentSummary {
        seed,
        technique: search.config().technique.name().to_string(),
        auc: auc(tc).ok(),
        hit_fraction: stats.hit_fraction(),
        miss_fraction: if lookups == 0 { 0.0 } else { 1.0 - stats.hit_fraction() },
        collision_rate: stats.collision_rate(),
        eval_calls: stats.evaluations,
        hash_calls: stats.hash_calls,
        proposed: stats.proposed,
        admitted: stats.admitted,
        hits: stats.hits,
        misses: stats.misses,
        forgets: stats.forgets,
        collisions: stats.collisions,
        final_time_s: tc.samples.last().map_or(0.0, |s| s.time),
        horizon_s: tc.horizon,
        best_admitted_fitness: search.best_ever().map_or(0.0, |b| b.fitness()),
        final_recorded_fitness: best.map_or(0.0, |b| b.fitness()),
        final_fitness: best.map_or(0.0, |b| problem.true_fitness(&b.candidate)),
        distinct_hashes,
        distinct_structures,
        best_candidate: best
            .map(|b| serde_json::to_value(&b.candidate).expect("candidates serialize"))
            .unwrap_or(serde_json::Value::Null),
        best_candidate_hash: best.and_then(|b| b.hash),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub tolerance: f64,
    /// Cache hits, each of which was also evaluated.
    pub checks: u64,
    pub collisions: u64,
    pub collision_rate: f64,
}

/// Runs FEC while also evaluating every cache hit; the search itself uses
/// the cached values, so its dynamics are those of plain FEC.
///
/// # Panics
///
/// Panics unless the technique is FEC.
#[allow(clippy::too_many_arguments)]
pub fn run_counterfactual<P: Problem>(
    problem: &P,
    config: EvolutionConfig,
    hash_config: HashConfig,
    seed: u64,
    mode: SchedulerMode,
    cost: &CostModel,
    budget: Option<f64>,
    tolerance: f64,
) -> (CollisionReport, TimeCourse, SearchStats) {
    assert_eq!(config.technique, Technique::Fec, "counterfactual runs need FEC");
    let mut search = Search::new(problem, config, hash_config, seed).with_counterfactual(tolerance);
    let tc = scheduler::run(&mut search, mode, cost, budget);
    let stats = search.stats();
    let report = CollisionReport {
        tolerance,
        checks: stats.counterfactual_evaluations,
        collisions: stats.collisions,
        collision_rate: stats.collision_rate(),
    };
    (report, tc, stats)
}

/// Sample mean and standard error of the mean.
pub fn mean_sem(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, (var / n as f64).sqrt()))
}

/// One run of a sweep, as written to the JSONL record file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_id: String,
    /// Hyperparameter point, shared by the techniques compared there.
    pub point: String,
    pub technique: String,
    pub seed: u64,
    pub auc: f64,
    pub hit_fraction: f64,
    pub collision_rate: f64,
    pub final_fitness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub config_id: String,
    pub point: String,
    pub technique: String,
    pub runs: usize,
    pub auc_mean: f64,
    pub auc_sem: f64,
    pub hit_fraction_mean: f64,
    pub collision_rate_mean: f64,
    pub final_fitness_mean: f64,
    pub final_fitness_sem: f64,
}

/// Mean and standard error per `config_id`, in `config_id` order.
pub fn sweep_aggregate(records: &[RunRecord]) -> Result<Vec<AggregateRow>, MetricsError> {
    let mut groups: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.config_id).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(id, runs)| {
            let insufficient = || MetricsError::InsufficientRuns { group: id.to_string(), runs: runs.len() };
            let col = |f: fn(&RunRecord) -> f64| runs.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (auc_mean, auc_sem) = mean_sem(&col(|r| r.auc)).ok_or_else(insufficient)?;
            let (final_fitness_mean, final_fitness_sem) = mean_sem(&col(|r| r.final_fitness)).ok_or_else(insufficient)?;
            let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
            Ok(AggregateRow {
                config_id: id.to_string(),
                point: runs[0].point.clone(),
                technique: runs[0].technique.clone(),
                runs: runs.len(),
                auc_mean,
                auc_sem,
                hit_fraction_mean: mean(col(|r| r.hit_fraction)),
                collision_rate_mean: mean(col(|r| r.collision_rate)),
                final_fitness_mean,
                final_fitness_sem,
            })
        })
        .collect()
}

/// Baseline-versus-technique AUC at one hyperparameter point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub point: String,
    pub technique: String,
    pub baseline_auc: f64,
    pub baseline_sem: f64,
    pub technique_auc: f64,
    pub technique_sem: f64,
}

/// Pairs every non-baseline row with the baseline row at the same point.
pub fn paired_scatter(rows: &[AggregateRow], baseline: &str) -> Vec<ScatterRow> {
    rows.iter()
        .filter(|r| r.technique != baseline)
        .filter_map(|r| {
            let base = rows.iter().find(|b| b.point == r.point && b.technique == baseline)?;
            Some(ScatterRow {
                point: r.point.clone(),
                technique: r.technique.clone(),
                baseline_auc: base.auc_mean,
                baseline_sem: base.auc_sem,
                technique_auc: r.auc_mean,
                technique_sem: r.auc_sem,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(time: f64, best: f64) -> Sample {
        Sample {
            time,
            step: 0,
            index: 0,
            fitness: best,
            best_fitness: best,
            population_best: best,
            event: CacheEvent::Evaluated,
            hash: None,
            evaluations: 1,
        }
    }

    fn course(points: &[(f64, f64)], horizon: f64) -> TimeCourse {
        TimeCourse { samples: points.iter().map(|&(t, f)| sample(t, f)).collect(), horizon }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&course(&[(0.0, 0.5)], 10.0)), Ok(0.5));
        assert_eq!(auc(&course(&[(0.0, 0.0), (5.0, 1.0)], 10.0)), Ok(0.5));
        assert_eq!(auc(&course(&[(5.0, 1.0)], 10.0)), Ok(0.5));
        assert_eq!(auc(&course(&[(2.0, 1.0), (20.0, 1.0)], 10.0)), Ok(0.8));
        assert_eq!(auc(&course(&[], 10.0)), Err(MetricsError::EmptyTimeCourse));
        assert_eq!(auc(&course(&[(0.0, 1.0)], 0.0)), Err(MetricsError::NonPositiveHorizon));
    }

    /// Midpoint Riemann sum over a uniform grid, evaluating the step
    /// function directly.
    fn riemann(tc: &TimeCourse, n: usize) -> f64 {
        let dt = tc.horizon / n as f64;
        let (mut next, mut f, mut sum) = (0, 0.0, 0.0);
        for i in 0..n {
            let t = (i as f64 + 0.5) * dt;
            while next < tc.samples.len() && tc.samples[next].time <= t {
                f = tc.samples[next].best_fitness;
                next += 1;
            }
            sum += f;
        }
        sum / n as f64
    }

    /// Random monotone staircase whose jump times sit on the oracle grid, so
    /// the midpoint sum has no discretisation error.
    pub(crate) fn grid_staircase(rng: &mut ChaCha8Rng, n: usize) -> TimeCourse {
        let horizon = rng.random_range(1.0..100.0);
        let dt = horizon / n as f64;
        let k = rng.random_range(1..30);
        let mut cells: Vec<usize> = (0..k).map(|_| rng.random_range(0..n)).collect();
        cells.sort_unstable();
        let mut f: f64 = 0.0;
        let pts: Vec<(f64, f64)> = cells
            .into_iter()
            .map(|c| {
                f = (f + rng.random_range(0.0..0.2)).min(1.0);
                (c as f64 * dt, f)
            })
            .collect();
        course(&pts, horizon)
    }

    #[test]
    fn auc_matches_riemann_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let tc = grid_staircase(&mut rng, 100_000);
            let exact = auc(&tc).unwrap();
            assert!((exact - riemann(&tc, 100_000)).abs() < 1e-6, "{exact}");
            assert!((0.0..=1.0).contains(&exact));
        }
    }

    #[test]
    fn mean_and_sem() {
        assert_eq!(mean_sem(&[0.3, 0.3, 0.3]), Some((0.3, 0.0)));
        assert_eq!(mean_sem(&[0.0, 1.0]), Some((0.5, 0.5)));
        assert_eq!(mean_sem(&[1.0]), None);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..100).map(|_| 2.0 + rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let (m, s) = mean_sem(&xs).unwrap();
        assert!((m - 2.0).abs() < 3.0 * s);
    }

    #[test]
    fn aggregate_and_scatter() {
        let rec = |tech: &str, seed, auc| RunRecord {
            config_id: format!("p/{tech}"),
            point: "p".into(),
            technique: tech.into(),
            seed,
            auc,
            hit_fraction: 0.0,
            collision_rate: 0.0,
            final_fitness: auc,
        };
        let rows = sweep_aggregate(&[rec("none", 0, 0.2), rec("none", 1, 0.4), rec("fec", 0, 0.5), rec("fec", 1, 0.7)]).unwrap();
        assert_eq!(rows.len(), 2);
        let scatter = paired_scatter(&rows, "none");
        assert_eq!(scatter.len(), 1);
        assert!((scatter[0].baseline_auc - 0.3).abs() < 1e-12);
        assert!((scatter[0].technique_auc - 0.6).abs() < 1e-12);
        let err = sweep_aggregate(&[rec("none", 0, 0.2)]).unwrap_err();
        assert_eq!(err, MetricsError::InsufficientRuns { group: "p/none".into(), runs: 1 });
    }

    #[test]
    fn csv_columns() {
        let mut buf = Vec::new();
        course(&[(1.5, 0.25)], 2.0).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "virtual_time_s,step,best_fitness,event,population_best\n1.5,0,0.25,evaluated,0.25\n");
    }
}
