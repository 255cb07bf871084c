use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ufhlab::harness::{self, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "ufhlab", version, about = "Functional-hash evolutionary search experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output root; overrides the config and UFHLAB_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Subcommand)]
enum Command {
    /// One run per seed.
    Run(Common),
    /// Every hyperparameter point x technique x seed, plus aggregate tables.
    Sweep(Common),
    /// FEC runs that also evaluate every cache hit, reporting collisions.
    Counterfactual(Common),
    /// Re-evaluate a saved candidate or summary.json.
    Replay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        /// Evaluate on fresh data drawn from this task seed.
        #[arg(long)]
        data_seed: Option<u64>,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seeds) = &common.seeds {
        cfg.seeds = seeds.clone();
        cfg.validate().map_err(HarnessError::Config)?;
    }
    let root = harness::output_root(common.out.as_deref(), &cfg);
    Ok((cfg, root))
}

fn show(root: &Path) {
    println!("wrote {}", root.display());
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run(common) => {
            let (cfg, root) = load(&common)?;
            for s in harness::cmd_run(&cfg, &root)? {
                println!(
                    "seed {}: auc {:.6} final_fitness {:.6} hit_fraction {:.4} evals {}",
                    s.seed,
                    s.auc.unwrap_or(0.0),
                    s.final_fitness,
                    s.hit_fraction,
                    s.eval_calls
                );
            }
            show(&root);
        }
        Command::Sweep(common) => {
            let (cfg, root) = load(&common)?;
            let out = harness::cmd_sweep(&cfg, &root)?;
            for r in &out.aggregate {
                println!("{}: auc {:.6} ± {:.6} ({} runs)", r.config_id, r.auc_mean, r.auc_sem, r.runs);
            }
            show(&root);
        }
        Command::Counterfactual(common) => {
            let (cfg, root) = load(&common)?;
            let s = harness::cmd_counterfactual(&cfg, &root)?;
            println!(
                "m_bits {}: {} collisions in {} checks, rate {:.6}",
                s.m_bits, s.collisions, s.checks, s.collision_rate
            );
            show(&root);
        }
        Command::Replay { config, candidate, data_seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = harness::cmd_replay(&cfg, &candidate, data_seed)?;
            println!("{}", serde_json::to_string(&report).expect("serializable"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ufhlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
