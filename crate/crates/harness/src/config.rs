//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pspl_core::environments::EnvSpec;
use pspl_core::offline_data::BehavioralPolicySpec;
use pspl_core::posterior::{DirichletMultiplier, OptimizerConfig, PerturbationCenter, PriorSpec};
use pspl_core::pspl::FinalPolicyRule;
use pspl_core::rater::{RaterCompetence, RaterMode};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    #[default]
    Pspl,
    Dps,
    Dpo,
    Ipo,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Pspl => "pspl",
            Algo::Dps => "dps",
            Algo::Dpo => "dpo",
            Algo::Ipo => "ipo",
        }
    }

    /// Offline-only algorithms ignore `K`.
    pub fn is_offline(self) -> bool {
        matches!(self, Algo::Dpo | Algo::Ipo)
    }
}

impl std::str::FromStr for Algo {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pspl" => Ok(Algo::Pspl),
            "dps" => Ok(Algo::Dps),
            "dpo" => Ok(Algo::Dpo),
            "ipo" => Ok(Algo::Ipo),
            other => Err(HarnessError::Config(format!("unknown algo `{other}`"))),
        }
    }
}

/// Isotropic Gaussian prior on theta and symmetric Dirichlet prior on rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub mean: f64,
    pub variance: f64,
    pub alpha: f64,
    pub dirichlet_multiplier: DirichletMultiplier,
    pub perturbation_center: PerturbationCenter,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            mean: 0.0,
            variance: 1.0,
            alpha: 1.0,
            dirichlet_multiplier: DirichletMultiplier::Literal,
            perturbation_center: PerturbationCenter::Zero,
        }
    }
}

impl PriorConfig {
    pub fn build(&self, dim: usize, num_states: usize) -> PriorSpec {
        PriorSpec {
            dirichlet_multiplier: self.dirichlet_multiplier,
            perturbation_center: self.perturbation_center,
            ..PriorSpec::isotropic(dim, num_states, self.mean, self.variance, self.alpha)
        }
    }
}

/// Values swept over; an empty axis uses the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(alias = "N")]
    pub n: Vec<usize>,
    pub lambda: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Linear bandit used by the `bandit` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditConfig {
    pub arms: usize,
    pub dim: usize,
    /// Offline arm distribution; uniform when absent.
    pub arm_probs: Option<Vec<f64>>,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            arms: 10,
            dim: 4,
            arm_probs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub algo: Algo,
    pub true_competence: RaterCompetence,
    /// Learner's competence; follows the true competence of each cell when absent.
    pub assumed_competence: Option<RaterCompetence>,
    pub rater_mode: RaterMode,
    pub behavior: BehavioralPolicySpec,
    #[serde(alias = "N")]
    pub n: usize,
    #[serde(alias = "K")]
    pub k: usize,
    pub prior: PriorConfig,
    pub optimizer: OptimizerConfig,
    pub final_policy_rule: FinalPolicyRule,
    /// DPO/IPO regularization strength.
    pub tau_reg: f64,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub sweep: SweepAxes,
    pub workers: usize,
    pub delta1: f64,
    /// Misspecification level for the prior-dependent bound column.
    pub epsilon: Option<f64>,
    pub bandit: BanditConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::default(),
            algo: Algo::Pspl,
            true_competence: RaterCompetence {
                beta: 10.0,
                lambda: 1000.0,
            },
            assumed_competence: None,
            rater_mode: RaterMode::BradleyTerry,
            behavior: BehavioralPolicySpec::UniformRandom,
            n: 1000,
            k: 1000,
            prior: PriorConfig::default(),
            optimizer: OptimizerConfig::default(),
            final_policy_rule: FinalPolicyRule::MapUnperturbed,
            tau_reg: 0.5,
            seeds: vec![0, 1, 2, 3, 4],
            output: PathBuf::from("results"),
            sweep: SweepAxes::default(),
            workers: 1,
            delta1: 0.1,
            epsilon: None,
            bandit: BanditConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return cfg_err("seeds: at least one seed is required".into());
        }
        if self.workers == 0 {
            return cfg_err("workers: must be positive".into());
        }
        if !(self.delta1 > 0.0 && self.delta1 < 1.0 / 3.0) {
            return cfg_err(format!("delta1: {} not in (0, 1/3)", self.delta1));
        }
        if !(self.tau_reg > 0.0 && self.tau_reg.is_finite()) {
            return cfg_err(format!("tau_reg: {} must be positive", self.tau_reg));
        }
        if let Some(eps) = self.epsilon {
            if !(eps >= 0.0) {
                return cfg_err(format!("epsilon: {eps} must be nonnegative"));
            }
        }
        if !(self.prior.variance > 0.0 && self.prior.alpha > 0.0) {
            return cfg_err("prior: variance and alpha must be positive".into());
        }
        self.true_competence
            .validate()
            .map_err(|e| HarnessError::Config(format!("true_competence: {e}")))?;
        if let Some(c) = self.assumed_competence {
            c.validate()
                .map_err(|e| HarnessError::Config(format!("assumed_competence: {e}")))?;
        }
        for &l in &self.sweep.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return cfg_err(format!("sweep.lambda: {l} must be positive"));
            }
        }
        for &b in &self.sweep.beta {
            if !(b >= 0.0 && b.is_finite()) {
                return cfg_err(format!("sweep.beta: {b} must be nonnegative"));
            }
        }
        self.optimizer
            .validate()
            .map_err(|e| HarnessError::Config(format!("optimizer: {e}")))?;
        if self.bandit.arms == 0 || self.bandit.dim == 0 {
            return cfg_err("bandit: arms and dim must be positive".into());
        }
        Ok(())
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text)
}
