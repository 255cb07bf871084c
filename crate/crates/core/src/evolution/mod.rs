//! Search controllers and the hash-based techniques that wrap candidate
//! acquisition.

mod cache;
mod controller;
mod population;
mod technique;

pub use cache::{Cache, CacheCounters, Tabulist, DEFAULT_CACHE_CAPACITY};
pub use controller::{Admission, Search, SearchStats, Work};
pub use population::{Controller, Individual, Population, PopulationTooSmall};
pub use technique::{
    acquire_fea, acquire_fec, acquire_fec_forgetful, gate_tabulist, mutate_fcm, Acquired, CacheEvent, FcmOutcome,
    GateOutcome,
};

use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_RETRY: u32 = 32;
pub const DEFAULT_FORGET_PROBABILITY: f64 = 0.1;

/// How each candidate's fitness is acquired, and how children are gated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TechniqueRepr", into = "TechniqueRepr")]
pub enum Technique {
    /// Evaluate everything.
    #[default]
    None,
    /// Functional equivalence cache.
    Fec,
    /// FEC that deletes a key with probability `forget_probability` on each hit.
    FecForgetful { forget_probability: f64 },
    /// FEC storing a running mean of up to `max_evals` evaluations.
    Fea { max_evals: u32 },
    /// Keep mutating until the child's hash differs from the parent's.
    Fcm,
    /// Force further mutation of children whose hash was seen `max_count`
    /// times. `None` disables the gate.
    Tabulist { max_count: Option<u64> },
}

#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TechniqueKind {
    None,
    Fec,
    FecForgetful,
    Fea,
    Fcm,
    Tabulist,
}

/// Flat JSON form; parameters that do not belong to `kind` are rejected.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TechniqueRepr {
    kind: TechniqueKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    forget_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_evals: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_count: Option<u64>,
}

impl From<Technique> for TechniqueRepr {
    fn from(t: Technique) -> Self {
        let mut r = TechniqueRepr { kind: TechniqueKind::None, forget_probability: None, max_evals: None, max_count: None };
        r.kind = match t {
            Technique::None => TechniqueKind::None,
            Technique::Fec => TechniqueKind::Fec,
            Technique::FecForgetful { forget_probability } => {
                r.forget_probability = Some(forget_probability);
                TechniqueKind::FecForgetful
            }
            Technique::Fea { max_evals } => {
                r.max_evals = Some(max_evals);
                TechniqueKind::Fea
            }
            Technique::Fcm => TechniqueKind::Fcm,
            Technique::Tabulist { max_count } => {
                r.max_count = max_count;
                TechniqueKind::Tabulist
            }
        };
        r
    }
}

impl TryFrom<TechniqueRepr> for Technique {
    type Error = String;

    fn try_from(r: TechniqueRepr) -> Result<Self, String> {
        let params = [
            ("forget_probability", r.forget_probability.is_some(), TechniqueKind::FecForgetful),
            ("max_evals", r.max_evals.is_some(), TechniqueKind::Fea),
            ("max_count", r.max_count.is_some(), TechniqueKind::Tabulist),
        ];
        for (name, present, owner) in params {
            if present && r.kind != owner {
                return Err(format!("`{name}` does not apply to this technique"));
            }
        }
        Ok(match r.kind {
            TechniqueKind::None => Technique::None,
            TechniqueKind::Fec => Technique::Fec,
            TechniqueKind::FecForgetful => {
                Technique::FecForgetful { forget_probability: r.forget_probability.unwrap_or(DEFAULT_FORGET_PROBABILITY) }
            }
            TechniqueKind::Fea => Technique::Fea { max_evals: r.max_evals.ok_or("fea needs `max_evals`")? },
            TechniqueKind::Fcm => Technique::Fcm,
            TechniqueKind::Tabulist => Technique::Tabulist { max_count: r.max_count },
        })
    }
}

impl Technique {
    pub fn name(&self) -> &'static str {
        match self {
            Technique::None => "none",
            Technique::Fec => "fec",
            Technique::FecForgetful { .. } => "fec_forgetful",
            Technique::Fea { .. } => "fea",
            Technique::Fcm => "fcm",
            Technique::Tabulist { .. } => "tabulist",
        }
    }

    /// Whether acquisition goes through the cache.
    pub fn uses_cache(&self) -> bool {
        matches!(self, Technique::Fec | Technique::FecForgetful { .. } | Technique::Fea { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    /// P
    pub population_size: usize,
    /// T
    pub tournament_size: usize,
    /// N, warm-up included.
    pub candidates: usize,
    #[serde(default)]
    pub controller: Controller,
    #[serde(default)]
    pub technique: Technique,
    /// Cap on the FCM and tabulist mutation loops.
    #[serde(default = "default_max_retry")]
    pub max_retry: u32,
    #[serde(default = "default_cache_capacity")]
    pub cache_capacity: usize,
}

fn default_max_retry() -> u32 {
    DEFAULT_MAX_RETRY
}

fn default_cache_capacity() -> usize {
    DEFAULT_CACHE_CAPACITY
}

impl EvolutionConfig {
    pub fn new(population_size: usize, tournament_size: usize, candidates: usize, technique: Technique) -> Self {
        Self {
            population_size,
            tournament_size,
            candidates,
            controller: Controller::Regularized,
            technique,
            max_retry: DEFAULT_MAX_RETRY,
            cache_capacity: DEFAULT_CACHE_CAPACITY,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let (p, t, n) = (self.population_size, self.tournament_size, self.candidates);
        if t < 1 {
            return Err("evolution.tournament_size must be >= 1".into());
        }
        if t > p {
            return Err(format!("evolution.tournament_size ({t}) must not exceed evolution.population_size ({p})"));
        }
        if p > n {
            return Err(format!("evolution.population_size ({p}) must not exceed evolution.candidates ({n})"));
        }
        if self.max_retry < 1 {
            return Err("evolution.max_retry must be >= 1".into());
        }
        if self.cache_capacity < 1 {
            return Err("evolution.cache_capacity must be >= 1".into());
        }
        match self.technique {
            Technique::FecForgetful { forget_probability: f } if !(0.0..=1.0).contains(&f) => {
                Err(format!("evolution.technique.forget_probability ({f}) must lie in [0, 1]"))
            }
            Technique::Fea { max_evals: 0 } => Err("evolution.technique.max_evals must be >= 1".into()),
            Technique::Tabulist { max_count: Some(0) } => Err("evolution.technique.max_count must be >= 1".into()),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_constraints() {
        assert!(EvolutionConfig::new(10, 2, 100, Technique::Fec).validate().is_ok());
        let err = EvolutionConfig::new(10, 11, 100, Technique::None).validate().unwrap_err();
        assert!(err.contains("tournament_size"), "{err}");
        assert!(EvolutionConfig::new(10, 2, 5, Technique::None).validate().is_err());
        let bad_f = EvolutionConfig::new(10, 2, 50, Technique::FecForgetful { forget_probability: 1.5 });
        assert!(bad_f.validate().is_err());
        assert!(EvolutionConfig::new(10, 2, 50, Technique::Fea { max_evals: 0 }).validate().is_err());
    }

    #[test]
    fn technique_json() {
        let t: Technique = serde_json::from_str(r#"{"kind":"fec_forgetful"}"#).unwrap();
        assert_eq!(t, Technique::FecForgetful { forget_probability: 0.1 });
        let t: Technique = serde_json::from_str(r#"{"kind":"tabulist","max_count":3}"#).unwrap();
        assert_eq!(t, Technique::Tabulist { max_count: Some(3) });
        assert!(serde_json::from_str::<Technique>(r#"{"kind":"fec","max_evals":3}"#).is_err());
        assert!(serde_json::from_str::<Technique>(r#"{"kind":"fea"}"#).is_err());
        for t in [Technique::None, Technique::Fea { max_evals: 4 }, Technique::Tabulist { max_count: None }] {
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(serde_json::from_str::<Technique>(&json).unwrap(), t);
        }
    }
}
