use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::evolution::{EvolutionConfig, Technique};
use crate::scheduler::{CostModel, SchedulerMode};
use crate::space::{EvalConfig, GraphSpace, ProgramSpace, TaskSpec};
use crate::ufh::HashConfig;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MAX_RUNS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceConfig {
    Program(ProgramSpace),
    Graph(GraphSpace),
}

/// Axis lists for `sweep`. An absent axis keeps the base value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population_size: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tournament_size: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_bits: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub techniques: Option<Vec<Technique>>,
    /// Upper bound on points × techniques × seeds.
    #[serde(default = "default_max_runs")]
    pub max_runs: usize,
    /// Technique label the scatter table compares against.
    #[serde(default = "default_baseline")]
    pub baseline: String,
}

fn default_max_runs() -> usize {
    DEFAULT_MAX_RUNS
}

fn default_baseline() -> String {
    "none".into()
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub space: SpaceConfig,
    #[serde(default)]
    pub task: TaskSpec,
    #[serde(default)]
    pub eval: EvalConfig,
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub hash: HashConfig,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default)]
    pub scheduler: SchedulerMode,
    /// Virtual-time budget; unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_s: Option<f64>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Fitness difference counted as a collision by `counterfactual`.
    #[serde(default = "default_tolerance")]
    pub counterfactual_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate().map_err(HarnessError::Config)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.seeds.is_empty() {
            return Err("seeds must not be empty".into());
        }
        self.eval.validate()?;
        self.evolution.validate()?;
        self.hash.validate()?;
        self.cost.validate()?;
        self.scheduler.validate()?;
        if let Some(b) = self.budget_s {
            if !(b > 0.0 && b.is_finite()) {
                return Err(format!("budget_s = {b} must be finite and > 0"));
            }
        }
        if !(self.counterfactual_tolerance >= 0.0 && self.counterfactual_tolerance.is_finite()) {
            return Err(format!("counterfactual_tolerance = {} must be finite and >= 0", self.counterfactual_tolerance));
        }
        Ok(())
    }

    /// The same experiment restricted to one seed.
    pub fn for_seed(&self, seed: u64) -> Self {
        Self { seeds: vec![seed], sweep: None, ..self.clone() }
    }
}

/// `--out`, then the config, then `UFHLAB_OUT`, then `./runs`.
pub fn output_root(cli: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os("UFHLAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Short label distinguishing technique parameters, e.g. `fea_m10`.
pub fn technique_label(t: &Technique) -> String {
    match *t {
        Technique::FecForgetful { forget_probability } => format!("fec_forgetful_f{forget_probability}"),
        Technique::Fea { max_evals } => format!("fea_m{max_evals}"),
        Technique::Tabulist { max_count: Some(c) } => format!("tabulist_c{c}"),
        _ => t.name().to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "space": {"kind": "program"},
        "evolution": {"population_size": 25, "tournament_size": 2, "candidates": 500},
        "seeds": [0]
    }"#;

    #[test]
    fn minimal_config_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.space, SpaceConfig::Program(ProgramSpace::default()));
        assert_eq!(cfg.hash, HashConfig::default());
        assert_eq!(cfg.scheduler, SchedulerMode::Serial);
        assert_eq!(cfg.evolution.technique, Technique::None);
        let back = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_fields_rejected_with_location() {
        let bad = MINIMAL.replace("\"seeds\"", "\"sedes\": [1], \"seeds\"");
        let err = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("sedes") && err.contains("line"), "{err}");
        let nested = MINIMAL.replace("\"kind\": \"program\"", "\"kind\": \"program\", \"max_forwrd\": 3");
        assert!(ExperimentConfig::from_json(&nested).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let bad = MINIMAL.replace("\"tournament_size\": 2", "\"tournament_size\": 30");
        let err = ExperimentConfig::from_json(&bad).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("tournament_size"), "{err}");
        let bad = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad = MINIMAL.replace("[0]", "[]");
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad = MINIMAL.replace("\"seeds\"", "\"scheduler\": {\"mode\": \"distributed\", \"workers\": 0}, \"seeds\"");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(technique_label(&Technique::Fea { max_evals: 10 }), "fea_m10");
        assert_eq!(technique_label(&Technique::FecForgetful { forget_probability: 0.1 }), "fec_forgetful_f0.1");
        assert_eq!(technique_label(&Technique::Fec), "fec");
    }
}
