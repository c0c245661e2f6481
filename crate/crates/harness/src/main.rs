use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pspl_core::environments::EnvSpec;
use pspl_core::offline_data::save_dataset;
use pspl_core::pspl::FinalPolicyRule;
use pspl_harness::experiment::{cell_data, run_experiment_with, write_bounds, Problem};
use pspl_harness::grid::build_grid;
use pspl_harness::{load_config, Algo, ExperimentConfig, HarnessError, Result};

#[derive(Parser)]
#[command(
    name = "pspl",
    version,
    about = "Preference-based posterior sampling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an offline preference dataset file.
    GenOffline {
        #[command(flatten)]
        common: CommonArgs,
        /// Destination of the dataset.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a single cell (base values, one seed).
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Use this dataset instead of generating one.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run the full grid and write the bound report.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write the bound report (runs the grid for measured regrets).
    Bounds {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run top-two sampling on random linear bandits.
    Bandit {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        arms: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvKind {
    Riverswim,
    Mountaincar,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    MapUnperturbed,
    LastSample,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config; flags given on the command line override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<Algo>,
    /// Environment with default sizes.
    #[arg(long, value_enum)]
    env: Option<EnvKind>,
    #[arg(long = "n", short = 'N')]
    n: Option<usize>,
    #[arg(long = "k", short = 'K')]
    k: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta_assumed: Option<f64>,
    #[arg(long)]
    lambda_assumed: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Seed of a single-cell run; defaults to the first configured seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    delta1: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tau_reg: Option<f64>,
    #[arg(long, value_enum)]
    final_policy_rule: Option<RuleArg>,
    #[arg(long, value_delimiter = ',')]
    sweep_n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    sweep_lambda: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    sweep_beta: Option<Vec<f64>>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(a) = self.algo {
            cfg.algo = a;
        }
        if let Some(e) = self.env {
            cfg.env = match e {
                EnvKind::Riverswim => EnvSpec::default(),
                EnvKind::Mountaincar => toml::from_str::<EnvSpec>("kind = \"mountaincar\"")
                    .map_err(|e| HarnessError::Config(e.to_string()))?,
            };
        }
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(b) = self.beta {
            cfg.true_competence.beta = b;
        }
        if let Some(l) = self.lambda {
            cfg.true_competence.lambda = l;
        }
        if self.beta_assumed.is_some() || self.lambda_assumed.is_some() {
            let mut a = cfg.assumed_competence.unwrap_or(cfg.true_competence);
            if let Some(b) = self.beta_assumed {
                a.beta = b;
            }
            if let Some(l) = self.lambda_assumed {
                a.lambda = l;
            }
            cfg.assumed_competence = Some(a);
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(d) = self.delta1 {
            cfg.delta1 = d;
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = Some(e);
        }
        if let Some(t) = self.tau_reg {
            cfg.tau_reg = t;
        }
        if let Some(r) = self.final_policy_rule {
            cfg.final_policy_rule = match r {
                RuleArg::MapUnperturbed => FinalPolicyRule::MapUnperturbed,
                RuleArg::LastSample => FinalPolicyRule::LastSample,
            };
        }
        if let Some(v) = &self.sweep_n {
            cfg.sweep.n = v.clone();
        }
        if let Some(v) = &self.sweep_lambda {
            cfg.sweep.lambda = v.clone();
        }
        if let Some(v) = &self.sweep_beta {
            cfg.sweep.beta = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config reduced to one cell.
    fn single(&self) -> Result<ExperimentConfig> {
        let mut cfg = self.resolve()?;
        let seed = self.seed.unwrap_or(cfg.seeds[0]);
        cfg.seeds = vec![seed];
        cfg.sweep = Default::default();
        Ok(cfg)
    }
}

fn report(cfg: &ExperimentConfig, problem: Problem, bounds: bool) -> Result<()> {
    let out = run_experiment_with(cfg, problem, None)?;
    println!("results: {}", out.results.display());
    println!("summary: {}", out.summary.display());
    if bounds {
        println!("bounds: {}", write_bounds(cfg, &out.outcomes)?.display());
    }
    let failed = out.outcomes.iter().filter(|o| o.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} cell(s) failed, see {}", out.errors.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenOffline { common, out } => {
            let cfg = common.single()?;
            let mdp = cfg.env.build()?;
            let cell = build_grid(&cfg)[0];
            let (_, dataset) = cell_data(&cfg, &cell, &mdp, None)?;
            save_dataset(&dataset, &out)?;
            println!("dataset: {} ({} records)", out.display(), dataset.len());
            Ok(())
        }
        Command::Run { common, dataset } => {
            let cfg = common.single()?;
            let out = run_experiment_with(&cfg, Problem::Mdp, dataset.as_deref())?;
            println!("results: {}", out.results.display());
            if let Some(e) = &out.outcomes[0].error {
                eprintln!("cell failed: {e}");
            }
            Ok(())
        }
        Command::Sweep { common } => report(&common.resolve()?, Problem::Mdp, true),
        Command::Bounds { common } => {
            let cfg = common.resolve()?;
            let out = run_experiment_with(&cfg, Problem::Mdp, None)?;
            println!("bounds: {}", write_bounds(&cfg, &out.outcomes)?.display());
            Ok(())
        }
        Command::Bandit { common, arms, dim } => {
            let mut cfg = common.resolve()?;
            if let Some(a) = arms {
                cfg.bandit.arms = a;
            }
            if let Some(d) = dim {
                cfg.bandit.dim = d;
            }
            cfg.validate()?;
            report(&cfg, Problem::Bandit, true)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
