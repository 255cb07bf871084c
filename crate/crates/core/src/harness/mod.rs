//! Experiment orchestration behind the `ufhlab` binary: configuration,
//! per-seed runs, sweeps, counterfactual collision checks and replay.
//!
//! Every run directory holds `config.json` (the resolved single-seed config),
//! `timecourse.csv`, `events.jsonl` and `summary.json`.

mod config;

pub use config::{
    output_root, technique_label, ExperimentConfig, SpaceConfig, SweepConfig, DEFAULT_MAX_RUNS, DEFAULT_TOLERANCE,
    SCHEMA_VERSION,
};

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::Search;
use crate::metrics::{self, CollisionReport, ExperimentSummary, RunRecord, TimeCourse};
use crate::scheduler;
use crate::space::{GraphCandidate, GraphProblem, Problem, ProgramCandidate, ProgramProblem};
use crate::ufh::FunctionalHash;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }

    /// 2 for configuration or input errors, 3 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Io { .. } => 3,
        }
    }
}

type Result<T> = std::result::Result<T, HarnessError>;

/// Binds `$p` to the configured problem and evaluates `$body` with it.
macro_rules! with_problem {
    ($cfg:expr, $p:ident => $body:expr) => {
        match $cfg.space {
            SpaceConfig::Program(space) => {
                let $p = &ProgramProblem::new(space, $cfg.task, $cfg.eval);
                $body
            }
            SpaceConfig::Graph(space) => {
                let $p = &GraphProblem::new(space, $cfg.task, $cfg.eval);
                $body
            }
        }
    };
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::io(path, e.into()))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::io(path, e.into_error()))?;
    write_file(path, &bytes)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, &r).expect("serializable");
        out.push(b'\n');
    }
    write_file(path, &out)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

#[derive(Serialize)]
struct EventRow {
    virtual_time_s: f64,
    step: usize,
    index: u64,
    event: &'static str,
    fitness: f64,
    best_fitness: f64,
    population_best: f64,
    evaluations: u32,
    hash: Option<FunctionalHash>,
}

fn write_run(dir: &Path, cfg: &ExperimentConfig, tc: &TimeCourse, summary: &ExperimentSummary) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join("config.json"), cfg)?;
    let mut csv = Vec::new();
    tc.write_csv(&mut csv).map_err(|e| HarnessError::io(dir, e))?;
    write_file(&dir.join("timecourse.csv"), &csv)?;
    write_jsonl(
        &dir.join("events.jsonl"),
        tc.samples.iter().map(|s| EventRow {
            virtual_time_s: s.time,
            step: s.step,
            index: s.index,
            event: s.event.as_str(),
            fitness: s.fitness,
            best_fitness: s.best_fitness,
            population_best: s.population_best,
            evaluations: s.evaluations,
            hash: s.hash,
        }),
    )?;
    write_json(&dir.join("summary.json"), summary)
}

fn simulate<P>(problem: &P, cfg: &ExperimentConfig, seed: u64) -> (TimeCourse, ExperimentSummary)
where
    P: Problem,
    P::Candidate: Serialize,
{
    let mut search = Search::new(problem, cfg.evolution, cfg.hash, seed).with_structure_tracking();
    let tc = scheduler::run(&mut search, cfg.scheduler, &cfg.cost, cfg.budget_s);
    let summary = metrics::summarize(problem, &search, &tc, seed);
    (tc, summary)
}

/// Runs one seed in memory, without writing anything.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> (TimeCourse, ExperimentSummary) {
    with_problem!(cfg, p => simulate(p, cfg, seed))
}

fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed}"))
}

/// One run per seed, in parallel, each written to `root/seed_<n>/`.
pub fn cmd_run(cfg: &ExperimentConfig, root: &Path) -> Result<Vec<ExperimentSummary>> {
    cfg.validate().map_err(HarnessError::Config)?;
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let (tc, summary) = run_seed(cfg, seed);
            write_run(&seed_dir(root, seed), &cfg.for_seed(seed), &tc, &summary)?;
            Ok(summary)
        })
        .collect()
}

/// One cell of a sweep grid.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub point: String,
    pub technique: String,
    pub config: ExperimentConfig,
}

fn axis<T: Copy>(name: &str, values: &Option<Vec<T>>, base: T) -> Result<Vec<T>> {
    match values {
        None => Ok(vec![base]),
        Some(v) if v.is_empty() => Err(HarnessError::Config(format!("sweep.{name} must not be empty"))),
        Some(v) => Ok(v.clone()),
    }
}

/// Expands the Cartesian product of the sweep axes, one config per
/// (point, technique). Every cell is validated.
pub fn sweep_cells(cfg: &ExperimentConfig) -> Result<Vec<SweepCell>> {
    cfg.validate().map_err(HarnessError::Config)?;
    let sweep = cfg.sweep.as_ref().ok_or_else(|| HarnessError::Config("sweep section is missing".into()))?;
    let ps = axis("population_size", &sweep.population_size, cfg.evolution.population_size)?;
    let ts = axis("tournament_size", &sweep.tournament_size, cfg.evolution.tournament_size)?;
    let ms = axis("m_bits", &sweep.m_bits, cfg.hash.m_bits)?;
    let techniques = match &sweep.techniques {
        None => vec![cfg.evolution.technique],
        Some(v) if v.is_empty() => return Err(HarnessError::Config("sweep.techniques must not be empty".into())),
        Some(v) => v.clone(),
    };
    if cfg.seeds.len() < 2 {
        return Err(HarnessError::Config("a sweep needs at least 2 seeds per cell".into()));
    }
    let runs = ps.len() * ts.len() * ms.len() * techniques.len() * cfg.seeds.len();
    if runs > sweep.max_runs {
        return Err(HarnessError::Config(format!("sweep has {runs} runs, more than sweep.max_runs = {}", sweep.max_runs)));
    }
    let mut cells = Vec::new();
    for &p in &ps {
        for &t in &ts {
            for &m in &ms {
                let point = format!("p{p}_t{t}_m{m}");
                for technique in &techniques {
                    let mut config = cfg.clone();
                    config.sweep = None;
                    config.evolution.population_size = p;
                    config.evolution.tournament_size = t;
                    config.evolution.technique = *technique;
                    config.hash.m_bits = m;
                    config.validate().map_err(|e| HarnessError::Config(format!("sweep point {point}: {e}")))?;
                    cells.push(SweepCell { point: point.clone(), technique: technique_label(technique), config });
                }
            }
        }
    }
    Ok(cells)
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub aggregate: Vec<metrics::AggregateRow>,
    pub scatter: Vec<metrics::ScatterRow>,
}

/// Runs every (point, technique, seed) cell and writes `records.jsonl`,
/// `aggregate.csv` and `scatter.csv` at `root`. Each run also gets its own
/// directory `root/<point>/<technique>/seed_<n>/`.
pub fn cmd_sweep(cfg: &ExperimentConfig, root: &Path) -> Result<SweepOutcome> {
    let cells = sweep_cells(cfg)?;
    let jobs: Vec<(&SweepCell, u64)> = cells.iter().flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s))).collect();
    let records = jobs
        .par_iter()
        .map(|&(cell, seed)| {
            let (tc, summary) = run_seed(&cell.config, seed);
            let dir = seed_dir(&root.join(&cell.point).join(&cell.technique), seed);
            write_run(&dir, &cell.config.for_seed(seed), &tc, &summary)?;
            Ok(RunRecord {
                config_id: format!("{}/{}", cell.point, cell.technique),
                point: cell.point.clone(),
                technique: cell.technique.clone(),
                seed,
                auc: summary.auc.unwrap_or(0.0),
                hit_fraction: summary.hit_fraction,
                collision_rate: summary.collision_rate,
                final_fitness: summary.final_fitness,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = metrics::sweep_aggregate(&records).map_err(|e| HarnessError::Config(e.to_string()))?;
    let baseline = cfg.sweep.as_ref().map_or("none", |s| s.baseline.as_str());
    let scatter = metrics::paired_scatter(&aggregate, baseline);
    create_dir(root)?;
    write_json(&root.join("sweep_config.json"), cfg)?;
    write_jsonl(&root.join("records.jsonl"), &records)?;
    write_csv(&root.join("aggregate.csv"), &aggregate)?;
    write_csv(&root.join("scatter.csv"), &scatter)?;
    Ok(SweepOutcome { records, aggregate, scatter })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSeed {
    pub seed: u64,
    #[serde(flatten)]
    pub report: CollisionReport,
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSummary {
    pub m_bits: u32,
    pub tolerance: f64,
    pub checks: u64,
    pub collisions: u64,
    pub collision_rate: f64,
    pub seeds: Vec<CounterfactualSeed>,
}

/// FEC runs that also evaluate every cache hit. Writes
/// `root/seed_<n>/{config.json,timecourse.csv,collisions.json}` and the
/// pooled `root/counterfactual.json`.
pub fn cmd_counterfactual(cfg: &ExperimentConfig, root: &Path) -> Result<CounterfactualSummary> {
    cfg.validate().map_err(HarnessError::Config)?;
    if cfg.evolution.technique != crate::evolution::Technique::Fec {
        return Err(HarnessError::Config(format!(
            "evolution.technique must be fec for a counterfactual run, not {}",
            cfg.evolution.technique.name()
        )));
    }
    let seeds = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let (report, tc, _) = with_problem!(cfg, p => metrics::run_counterfactual(
                p,
                cfg.evolution,
                cfg.hash,
                seed,
                cfg.scheduler,
                &cfg.cost,
                cfg.budget_s,
                cfg.counterfactual_tolerance,
            ));
            let dir = seed_dir(root, seed);
            create_dir(&dir)?;
            write_json(&dir.join("config.json"), &cfg.for_seed(seed))?;
            let mut csv = Vec::new();
            tc.write_csv(&mut csv).map_err(|e| HarnessError::io(&dir, e))?;
            write_file(&dir.join("timecourse.csv"), &csv)?;
            write_json(&dir.join("collisions.json"), &report)?;
            Ok(CounterfactualSeed { seed, report, auc: metrics::auc(&tc).ok() })
        })
        .collect::<Result<Vec<_>>>()?;
    let checks = seeds.iter().map(|s| s.report.checks).sum::<u64>();
    let collisions = seeds.iter().map(|s| s.report.collisions).sum::<u64>();
    let summary = CounterfactualSummary {
        m_bits: cfg.hash.m_bits,
        tolerance: cfg.counterfactual_tolerance,
        checks,
        collisions,
        collision_rate: if checks == 0 { 0.0 } else { collisions as f64 / checks as f64 },
        seeds,
    };
    create_dir(root)?;
    write_json(&root.join("counterfactual.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    /// Noise-free fitness, on unseen data when `data_seed` is set.
    pub fitness: f64,
    pub hash: FunctionalHash,
    /// Task data seed the fitness was measured on.
    pub data_seed: u64,
}

fn replay_with<P>(problem: &P, value: serde_json::Value, data_seed: Option<u64>, cfg: &ExperimentConfig) -> Result<ReplayReport>
where
    P: Problem,
    P::Candidate: serde::de::DeserializeOwned,
    P: Validates<P::Candidate>,
{
    let candidate: P::Candidate =
        serde_json::from_value(value).map_err(|e| HarnessError::Config(format!("malformed candidate: {e}")))?;
    problem.check(&candidate).map_err(|e| HarnessError::Config(format!("invalid candidate: {e}")))?;
    let fitness = match data_seed {
        Some(s) => problem.unseen_fitness(&candidate, s),
        None => problem.true_fitness(&candidate),
    };
    Ok(ReplayReport {
        fitness,
        hash: problem.functional_hash(&candidate, &cfg.hash),
        data_seed: data_seed.unwrap_or(cfg.task.data_seed),
    })
}

trait Validates<C> {
    fn check(&self, candidate: &C) -> std::result::Result<(), String>;
}

impl Validates<ProgramCandidate> for ProgramProblem {
    fn check(&self, c: &ProgramCandidate) -> std::result::Result<(), String> {
        self.space.validate(c)
    }
}

impl Validates<GraphCandidate> for GraphProblem {
    fn check(&self, c: &GraphCandidate) -> std::result::Result<(), String> {
        self.space.validate(c)
    }
}

/// Re-evaluates a serialized candidate. `candidate` is either the candidate
/// itself or a `summary.json`, whose `best_candidate` is used.
pub fn cmd_replay(cfg: &ExperimentConfig, candidate: &Path, data_seed: Option<u64>) -> Result<ReplayReport> {
    let text = fs::read_to_string(candidate).map_err(|e| HarnessError::io(candidate, e))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", candidate.display())))?;
    if let Some(best) = value.get_mut("best_candidate") {
        value = best.take();
    }
    with_problem!(cfg, p => replay_with(p, value, data_seed, cfg))
}
