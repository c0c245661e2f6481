//! Cell execution, result files, summaries and bound reports.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pspl_core::bandit::{
    build_information_set, f1_bound, generate_bandit_offline, random_instance, run_bandit_pspl,
};
use pspl_core::baselines::{run_dps, train_offline_baseline, OfflineBaselineKind};
use pspl_core::mdp::TabularMdp;
use pspl_core::offline_data::{generate_offline, load_dataset_with_features, PreferenceDataset};
use pspl_core::offline_estimator::{
    delta2_bound, delta_min, gamma_bound, prior_dependent_bound, regret_bound, BoundInputs,
};
use pspl_core::pspl::{run_pspl, PsplConfig, RunTrace};
use pspl_core::rater::{make_rater, RaterInstance};
use pspl_core::seed::{derive_seed, rng_from_seed};

use crate::config::{Algo, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::grid::{build_grid, logged_episodes, run_ordered, Cell};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FINALS_FILE: &str = "finals.csv";
pub const ERRORS_FILE: &str = "errors.csv";
pub const BOUNDS_FILE: &str = "bounds.csv";

const RATER_TAG: u64 = 1;
const OFFLINE_TAG: u64 = 2;
const RUN_TAG: u64 = 3;
const INSTANCE_TAG: u64 = 4;

pub fn rater_seed(seed: u64) -> u64 {
    derive_seed(seed, RATER_TAG)
}

pub fn offline_seed(seed: u64) -> u64 {
    derive_seed(seed, OFFLINE_TAG)
}

pub fn run_seed(seed: u64) -> u64 {
    derive_seed(seed, RUN_TAG)
}

/// Which problem family the cells run on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    Mdp,
    Bandit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algo: String,
    pub env: String,
    pub seed: u64,
    #[serde(rename = "N")]
    pub n: usize,
    pub lambda_true: f64,
    pub lambda_assumed: f64,
    pub beta_true: f64,
    pub beta_assumed: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub episode: usize,
    /// Empty on the error marker row of a failed cell.
    pub simple_regret: Option<f64>,
    pub cumulative_regret: Option<f64>,
    pub final_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algo: String,
    pub env: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub lambda_true: f64,
    pub lambda_assumed: f64,
    pub beta_true: f64,
    pub beta_assumed: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub episode: usize,
    pub final_flag: bool,
    pub mean_simple_regret: Option<f64>,
    pub std_simple_regret: Option<f64>,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRow {
    pub algo: String,
    pub env: String,
    pub seed: u64,
    #[serde(rename = "N")]
    pub n: usize,
    pub lambda_true: f64,
    pub lambda_assumed: f64,
    pub beta_true: f64,
    pub beta_assumed: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub final_regret: Option<f64>,
    /// Regret of the other final-policy rule (PSPL only).
    pub alternate_regret: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub algo: String,
    pub env: String,
    pub seed: u64,
    #[serde(rename = "N")]
    pub n: usize,
    pub lambda_true: f64,
    pub beta_true: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub delta1: f64,
    pub gamma: Option<f64>,
    pub gamma_condition: Option<bool>,
    pub delta2: Option<f64>,
    pub regret_bound: Option<f64>,
    pub prior_dependent_bound: Option<f64>,
    pub f1: Option<f64>,
    /// Whether the information set kept the best arm (bandit only).
    pub covered: Option<bool>,
    pub measured_simple_regret: Option<f64>,
    pub violation: Option<bool>,
    pub vacuous: Option<bool>,
    pub note: String,
}

/// Problem constants needed by the bound report.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundContext {
    pub b: f64,
    pub d: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub delta_min: Option<f64>,
    /// `(num_arms, mu_min)` for bandit cells.
    pub bandit: Option<(usize, f64)>,
    pub covered: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub cell: Cell,
    pub env: String,
    /// Episodes actually run (0 for offline algorithms).
    pub k: usize,
    /// Mean regret of the two deployed policies, per completed episode.
    pub episode_regrets: Vec<f64>,
    pub final_regret: Option<f64>,
    pub alternate_regret: Option<f64>,
    pub error: Option<String>,
    pub bounds: Option<BoundContext>,
}

impl CellOutcome {
    fn failed(cell: Cell, env: String, k: usize, err: impl std::fmt::Display) -> Self {
        Self {
            cell,
            env,
            k,
            episode_regrets: Vec::new(),
            final_regret: None,
            alternate_regret: None,
            error: Some(err.to_string()),
            bounds: None,
        }
    }
}

fn pspl_config(cfg: &ExperimentConfig, cell: &Cell, dim: usize, num_states: usize) -> PsplConfig {
    PsplConfig {
        episodes: cfg.k,
        assumed_competence: cell.assumed_competence,
        prior: cfg.prior.build(dim, num_states),
        optimizer: cfg.optimizer,
        final_policy_rule: cfg.final_policy_rule,
    }
}

/// Rater and offline dataset of a cell; `dataset` replaces generation.
pub fn cell_data(
    cfg: &ExperimentConfig,
    cell: &Cell,
    mdp: &TabularMdp,
    dataset: Option<&Path>,
) -> Result<(RaterInstance, PreferenceDataset)> {
    let rater = make_rater(
        mdp.theta(),
        cell.true_competence,
        cfg.rater_mode,
        rater_seed(cell.seed),
    )?;
    let offline = match dataset {
        Some(path) => load_dataset_with_features(path, mdp.features())?,
        None => generate_offline(mdp, &rater, &cfg.behavior, cell.n, offline_seed(cell.seed))?,
    };
    Ok((rater, offline))
}

fn trace_outcome(cell: Cell, env: String, k: usize, trace: RunTrace) -> CellOutcome {
    CellOutcome {
        cell,
        env,
        k,
        episode_regrets: trace.episodes.iter().map(|e| e.mean_regret()).collect(),
        final_regret: trace.final_regret,
        alternate_regret: trace.alternate_regret,
        error: trace.error,
        bounds: None,
    }
}

/// Runs one MDP cell.
pub fn run_cell(cfg: &ExperimentConfig, cell: &Cell, dataset: Option<&Path>) -> CellOutcome {
    let env = cfg.env.label();
    let k = if cfg.algo.is_offline() { 0 } else { cfg.k };
    match run_cell_inner(cfg, cell, dataset, &env, k) {
        Ok(o) => o,
        Err(e) => CellOutcome::failed(*cell, env, k, e),
    }
}

fn run_cell_inner(
    cfg: &ExperimentConfig,
    cell: &Cell,
    dataset: Option<&Path>,
    env: &str,
    k: usize,
) -> Result<CellOutcome> {
    let mdp = cfg.env.build()?;
    let (rater, offline) = cell_data(cfg, cell, &mdp, dataset)?;
    let mut outcome = match cfg.algo {
        Algo::Pspl => {
            let pc = pspl_config(cfg, cell, mdp.dim(), mdp.num_states());
            let trace = run_pspl(&mdp, &rater, &offline, &pc, run_seed(cell.seed))?;
            trace_outcome(*cell, env.to_string(), k, trace)
        }
        Algo::Dps => {
            let prior = cfg.prior.build(mdp.dim(), mdp.num_states());
            let trace = run_dps(&mdp, &rater, &offline, k, &prior, run_seed(cell.seed))?;
            trace_outcome(*cell, env.to_string(), k, trace)
        }
        Algo::Dpo | Algo::Ipo => {
            let kind = if cfg.algo == Algo::Dpo {
                OfflineBaselineKind::Dpo
            } else {
                OfflineBaselineKind::Ipo
            };
            let res = train_offline_baseline(kind, &offline, &mdp, &cfg.optimizer, cfg.tau_reg)?;
            CellOutcome {
                cell: *cell,
                env: env.to_string(),
                k,
                episode_regrets: Vec::new(),
                final_regret: Some(res.simple_regret),
                alternate_regret: None,
                error: None,
                bounds: None,
            }
        }
    };
    outcome.bounds = Some(BoundContext {
        b: mdp.features().embedding_bound(mdp.horizon()),
        d: mdp.dim(),
        num_states: mdp.num_states(),
        num_actions: mdp.num_actions(),
        horizon: mdp.horizon(),
        delta_min: delta_min(&offline, mdp.theta()).ok(),
        bandit: None,
        covered: None,
    });
    Ok(outcome)
}

pub fn bandit_label(cfg: &ExperimentConfig) -> String {
    format!("bandit{}x{}", cfg.bandit.arms, cfg.bandit.dim)
}

/// Runs one bandit cell on a random instance drawn from the cell seed.
pub fn run_bandit_cell(cfg: &ExperimentConfig, cell: &Cell) -> CellOutcome {
    let env = bandit_label(cfg);
    match run_bandit_inner(cfg, cell, &env) {
        Ok(o) => o,
        Err(e) => CellOutcome::failed(*cell, env, cfg.k, e),
    }
}

fn run_bandit_inner(cfg: &ExperimentConfig, cell: &Cell, env: &str) -> Result<CellOutcome> {
    if cfg.algo != Algo::Pspl {
        return Err(HarnessError::Config(
            "bandit runs support algo = pspl only".into(),
        ));
    }
    let mut rng = rng_from_seed(derive_seed(cell.seed, INSTANCE_TAG));
    let inst = random_instance(cfg.bandit.arms, cfg.bandit.dim, &mut rng)?;
    let rater = make_rater(
        inst.theta(),
        cell.true_competence,
        cfg.rater_mode,
        rater_seed(cell.seed),
    )?;
    let probs = cfg.bandit.arm_probs.as_deref();
    let offline = generate_bandit_offline(&inst, &rater, probs, cell.n, offline_seed(cell.seed))?;
    let covered = build_information_set(&inst, &offline)?.contains(inst.best_arm());
    let pc = pspl_config(cfg, cell, inst.dim(), 1);
    let trace = run_bandit_pspl(&inst, &rater, &offline, &pc, run_seed(cell.seed))?;
    let mu_min = match probs {
        Some(p) => p.iter().copied().fold(f64::INFINITY, f64::min),
        None => 1.0 / inst.num_arms() as f64,
    };
    Ok(CellOutcome {
        cell: *cell,
        env: env.to_string(),
        k: cfg.k,
        episode_regrets: trace
            .rounds
            .iter()
            .map(|r| 0.5 * (r.regret[0] + r.regret[1]))
            .collect(),
        final_regret: trace.final_regret,
        alternate_regret: None,
        error: trace.error,
        bounds: Some(BoundContext {
            b: inst.embedding_bound(),
            d: inst.dim(),
            num_states: 1,
            num_actions: inst.num_arms(),
            horizon: 1,
            delta_min: delta_min(&offline, inst.theta()).ok(),
            bandit: Some((inst.num_arms(), mu_min)),
            covered: Some(covered),
        }),
    })
}

/// Rows of one cell: logged episodes, then the final row or an error marker.
pub fn result_rows(cfg: &ExperimentConfig, outcome: &CellOutcome) -> Vec<ResultRow> {
    let c = &outcome.cell;
    let row = |episode, simple, cumulative, final_flag| ResultRow {
        algo: cfg.algo.name().to_string(),
        env: outcome.env.clone(),
        seed: c.seed,
        n: c.n,
        lambda_true: c.true_competence.lambda,
        lambda_assumed: c.assumed_competence.lambda,
        beta_true: c.true_competence.beta,
        beta_assumed: c.assumed_competence.beta,
        k: outcome.k,
        episode,
        simple_regret: simple,
        cumulative_regret: cumulative,
        final_flag,
    };
    let mut cumulative = Vec::with_capacity(outcome.episode_regrets.len());
    let mut total = 0.0;
    for r in &outcome.episode_regrets {
        total += r;
        cumulative.push(total);
    }
    let done = outcome.episode_regrets.len();
    let mut rows: Vec<ResultRow> = logged_episodes(outcome.k)
        .into_iter()
        .filter(|&e| e <= done)
        .map(|e| {
            row(
                e,
                Some(outcome.episode_regrets[e - 1]),
                Some(cumulative[e - 1]),
                false,
            )
        })
        .collect();
    if outcome.error.is_some() {
        rows.push(row(done + 1, None, None, false));
    } else if let Some(f) = outcome.final_regret {
        rows.push(row(done, Some(f), Some(total), true));
    }
    rows
}

fn final_row(cfg: &ExperimentConfig, o: &CellOutcome) -> FinalRow {
    let c = &o.cell;
    FinalRow {
        algo: cfg.algo.name().to_string(),
        env: o.env.clone(),
        seed: c.seed,
        n: c.n,
        lambda_true: c.true_competence.lambda,
        lambda_assumed: c.assumed_competence.lambda,
        beta_true: c.true_competence.beta,
        beta_assumed: c.assumed_competence.beta,
        k: o.k,
        final_regret: o.final_regret,
        alternate_regret: o.alternate_regret,
        error: o.error.clone(),
    }
}

/// Sample mean and standard deviation (`n - 1` denominator, 0 for one run).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

/// One row per (axis point, logged episode) plus one final row per axis point,
/// aggregated over seeds.
pub fn summary_rows(cfg: &ExperimentConfig, outcomes: &[CellOutcome]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    let groups = outcomes
        .iter()
        .map(|o| o.cell.group)
        .max()
        .map_or(0, |g| g + 1);
    for g in 0..groups {
        let members: Vec<&CellOutcome> = outcomes.iter().filter(|o| o.cell.group == g).collect();
        let Some(first) = members.first() else {
            continue;
        };
        let c = &first.cell;
        let k = members.iter().map(|o| o.k).max().unwrap_or(0);
        let row = |episode, final_flag, vals: Vec<f64>| {
            let ms = mean_std(&vals);
            SummaryRow {
                algo: cfg.algo.name().to_string(),
                env: first.env.clone(),
                n: c.n,
                lambda_true: c.true_competence.lambda,
                lambda_assumed: c.assumed_competence.lambda,
                beta_true: c.true_competence.beta,
                beta_assumed: c.assumed_competence.beta,
                k,
                episode,
                final_flag,
                mean_simple_regret: ms.map(|m| m.0),
                std_simple_regret: ms.map(|m| m.1),
                runs: vals.len(),
            }
        };
        for e in logged_episodes(k) {
            let vals = members
                .iter()
                .filter_map(|o| o.episode_regrets.get(e - 1).copied())
                .collect();
            rows.push(row(e, false, vals));
        }
        let finals = members.iter().filter_map(|o| o.final_regret).collect();
        rows.push(row(k, true, finals));
    }
    rows
}

fn bound_row(cfg: &ExperimentConfig, o: &CellOutcome) -> BoundRow {
    let c = &o.cell;
    let mut row = BoundRow {
        algo: cfg.algo.name().to_string(),
        env: o.env.clone(),
        seed: c.seed,
        n: c.n,
        lambda_true: c.true_competence.lambda,
        beta_true: c.true_competence.beta,
        k: o.k,
        delta1: cfg.delta1,
        gamma: None,
        gamma_condition: None,
        delta2: None,
        regret_bound: None,
        prior_dependent_bound: None,
        f1: None,
        covered: None,
        measured_simple_regret: o.final_regret,
        violation: None,
        vacuous: None,
        note: String::new(),
    };
    let Some(ctx) = &o.bounds else {
        row.note = o.error.clone().unwrap_or_else(|| "no bound context".into());
        return row;
    };
    row.covered = ctx.covered;
    let mut notes = Vec::new();
    let inputs = BoundInputs {
        beta: c.true_competence.beta,
        lambda: c.true_competence.lambda,
        n: c.n,
        b: ctx.b,
        d: ctx.d,
        delta_min: ctx.delta_min.unwrap_or(0.0),
        delta1: cfg.delta1,
        k: cfg.k,
        num_states: ctx.num_states,
        num_actions: ctx.num_actions,
        horizon: ctx.horizon,
        epsilon: cfg.epsilon.unwrap_or(0.0),
    };
    match gamma_bound(&inputs) {
        Ok(g) => {
            row.gamma = Some(g.value);
            row.gamma_condition = Some(g.condition_holds);
            match delta2_bound(g.value, c.n) {
                Ok(d2) => {
                    row.delta2 = Some(d2);
                    match regret_bound(&inputs, d2) {
                        Ok(b) => row.regret_bound = Some(b),
                        Err(e) => notes.push(format!("regret bound: {e}")),
                    }
                    if cfg.epsilon.is_some() {
                        match prior_dependent_bound(&inputs, d2) {
                            Ok(b) => row.prior_dependent_bound = Some(b),
                            Err(e) => notes.push(format!("prior-dependent bound: {e}")),
                        }
                    }
                }
                Err(e) => notes.push(format!("delta2: {e}")),
            }
        }
        Err(e) => notes.push(format!("gamma: {e}")),
    }
    if let Some((arms, mu_min)) = ctx.bandit {
        let bd = inputs;
        match f1_bound(bd.beta, bd.lambda, c.n, cfg.k, arms, ctx.d, mu_min) {
            Ok(f) => row.f1 = Some(f),
            Err(e) => notes.push(format!("f1: {e}")),
        }
    }
    if let Some(b) = row.regret_bound {
        row.vacuous = Some(b >= ctx.horizon as f64);
        row.violation = o.final_regret.map(|m| m > b);
    }
    if let Some(e) = &o.error {
        notes.push(format!("run: {e}"));
    }
    row.note = notes.join("; ");
    row
}

pub fn bound_rows(cfg: &ExperimentConfig, outcomes: &[CellOutcome]) -> Vec<BoundRow> {
    outcomes.iter().map(|o| bound_row(cfg, o)).collect()
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut file = File::create(path)?;
    file.write_all(format!("{}\n", header.join(",")).as_bytes())?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const RESULT_COLUMNS: &[&str] = &[
    "algo",
    "env",
    "seed",
    "N",
    "lambda_true",
    "lambda_assumed",
    "beta_true",
    "beta_assumed",
    "K",
    "episode",
    "simple_regret",
    "cumulative_regret",
    "final_flag",
];
pub const SUMMARY_COLUMNS: &[&str] = &[
    "algo",
    "env",
    "N",
    "lambda_true",
    "lambda_assumed",
    "beta_true",
    "beta_assumed",
    "K",
    "episode",
    "final_flag",
    "mean_simple_regret",
    "std_simple_regret",
    "runs",
];
pub const FINAL_COLUMNS: &[&str] = &[
    "algo",
    "env",
    "seed",
    "N",
    "lambda_true",
    "lambda_assumed",
    "beta_true",
    "beta_assumed",
    "K",
    "final_regret",
    "alternate_regret",
    "error",
];
pub const BOUND_COLUMNS: &[&str] = &[
    "algo",
    "env",
    "seed",
    "N",
    "lambda_true",
    "beta_true",
    "K",
    "delta1",
    "gamma",
    "gamma_condition",
    "delta2",
    "regret_bound",
    "prior_dependent_bound",
    "f1",
    "covered",
    "measured_simple_regret",
    "violation",
    "vacuous",
    "note",
];

/// Files and outcomes of a completed experiment.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub results: PathBuf,
    pub summary: PathBuf,
    pub finals: PathBuf,
    pub errors: PathBuf,
    pub outcomes: Vec<CellOutcome>,
}

/// Runs every grid cell, streaming result rows in cell order, then writes the
/// summary, final-regret and error files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_experiment_with(cfg, Problem::Mdp, None)
}

pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    problem: Problem,
    dataset: Option<&Path>,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if problem == Problem::Mdp {
        cfg.env.build()?;
    }
    std::fs::create_dir_all(&cfg.output)?;
    let results = cfg.output.join(RESULTS_FILE);
    let mut file = File::create(&results)?;
    file.write_all(format!("{}\n", RESULT_COLUMNS.join(",")).as_bytes())?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    let cells = build_grid(cfg);
    let mut write_err: Option<HarnessError> = None;
    let outcomes = run_ordered(
        &cells,
        cfg.workers,
        |cell| match problem {
            Problem::Mdp => run_cell(cfg, cell, dataset),
            Problem::Bandit => run_bandit_cell(cfg, cell),
        },
        |_, outcome| {
            if write_err.is_some() {
                return;
            }
            let res = result_rows(cfg, outcome)
                .iter()
                .try_for_each(|r| writer.serialize(r))
                .and_then(|_| writer.flush().map_err(csv::Error::from));
            if let Err(e) = res {
                write_err = Some(e.into());
            }
        },
    );
    if let Some(e) = write_err {
        return Err(e);
    }
    writer.flush()?;
    let summary = cfg.output.join(SUMMARY_FILE);
    write_rows(&summary, SUMMARY_COLUMNS, &summary_rows(cfg, &outcomes))?;
    let finals = cfg.output.join(FINALS_FILE);
    let final_rows: Vec<FinalRow> = outcomes.iter().map(|o| final_row(cfg, o)).collect();
    write_rows(&finals, FINAL_COLUMNS, &final_rows)?;
    let errors = cfg.output.join(ERRORS_FILE);
    let mut ew = csv::Writer::from_path(&errors)?;
    ew.write_record(["cell", "seed", "error"])?;
    for o in &outcomes {
        if let Some(e) = &o.error {
            ew.write_record([o.cell.index.to_string(), o.cell.seed.to_string(), e.clone()])?;
        }
    }
    ew.flush()?;
    Ok(ExperimentOutput {
        results,
        summary,
        finals,
        errors,
        outcomes,
    })
}

/// Writes the bound report for finished outcomes.
pub fn write_bounds(cfg: &ExperimentConfig, outcomes: &[CellOutcome]) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output)?;
    let path = cfg.output.join(BOUNDS_FILE);
    write_rows(&path, BOUND_COLUMNS, &bound_rows(cfg, outcomes))?;
    Ok(path)
}

/// Runs the grid and writes the bound report next to the result files.
pub fn report_bounds(cfg: &ExperimentConfig, problem: Problem) -> Result<PathBuf> {
    let out = run_experiment_with(cfg, problem, None)?;
    write_bounds(cfg, &out.outcomes)
}

/// Reads a results CSV back.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<ResultRow>, _>>()?;
    Ok(rows)
}
