//! Simulated preference oracle with competence `(lambda, beta)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::Trajectory;
use crate::offline_data::PreferenceDataset;
use crate::seed::{rng_from_seed, SimRng};

/// `beta` is deliberateness, `lambda` knowledgeability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaterCompetence {
    pub beta: f64,
    pub lambda: f64,
}

impl RaterCompetence {
    pub fn new(beta: f64, lambda: f64) -> Result<Self> {
        let c = Self { beta, lambda };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!(
                "lambda must be finite and > 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaterMode {
    #[default]
    BradleyTerry,
    /// Deterministically prefers the trajectory with the higher private score.
    Greedy,
}

/// A rater with its private reward estimate `vartheta ~ N(theta, I / lambda^2)`,
/// drawn once.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterInstance {
    competence: RaterCompetence,
    vartheta: Vec<f64>,
    mode: RaterMode,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws `vartheta = theta + z / lambda`, `z` standard normal.
pub fn make_rater(
    theta: &[f64],
    competence: RaterCompetence,
    mode: RaterMode,
    seed: u64,
) -> Result<RaterInstance> {
    competence.validate()?;
    let mut rng = rng_from_seed(seed);
    let vartheta = theta
        .iter()
        .map(|t| {
            let z: f64 = rng.sample(StandardNormal);
            t + z / competence.lambda
        })
        .collect();
    Ok(RaterInstance {
        competence,
        vartheta,
        mode,
    })
}

impl RaterInstance {
    /// Rater with a given private estimate.
    pub fn from_vartheta(
        vartheta: Vec<f64>,
        competence: RaterCompetence,
        mode: RaterMode,
    ) -> Result<Self> {
        competence.validate()?;
        Ok(Self {
            competence,
            vartheta,
            mode,
        })
    }

    pub fn competence(&self) -> RaterCompetence {
        self.competence
    }

    pub fn vartheta(&self) -> &[f64] {
        &self.vartheta
    }

    pub fn mode(&self) -> RaterMode {
        self.mode
    }

    /// Private score `<phi(tau), vartheta>`.
    pub fn score(&self, tau: &Trajectory) -> f64 {
        dot(&tau.embedding, &self.vartheta)
    }

    /// `Pr(Y = 0)` as a function of `phi(tau0) - phi(tau1)` only.
    pub fn preference_prob_from_diff(&self, diff: &[f64]) -> Result<f64> {
        if diff.len() != self.vartheta.len() {
            return Err(invalid(format!(
                "embedding difference has dimension {}, rater has {}",
                diff.len(),
                self.vartheta.len()
            )));
        }
        let beta = self.competence.beta;
        Ok(match self.mode {
            RaterMode::BradleyTerry => sigmoid(beta * dot(diff, &self.vartheta)),
            RaterMode::Greedy => {
                if beta * dot(diff, &self.vartheta) >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        })
    }

    /// `Pr(Y = 0) = sigma(beta <phi(tau0) - phi(tau1), vartheta>)`; greedy
    /// mode returns 1 when `tau0` scores at least as high.
    pub fn preference_prob(&self, tau0: &Trajectory, tau1: &Trajectory) -> Result<f64> {
        let d = self.vartheta.len();
        if tau0.embedding.len() != d || tau1.embedding.len() != d {
            return Err(invalid(
                "trajectory embedding dimension does not match the rater",
            ));
        }
        match self.mode {
            RaterMode::BradleyTerry => {
                let diff: Vec<f64> = tau0
                    .embedding
                    .iter()
                    .zip(&tau1.embedding)
                    .map(|(a, b)| a - b)
                    .collect();
                self.preference_prob_from_diff(&diff)
            }
            RaterMode::Greedy => {
                let beta = self.competence.beta;
                Ok(if beta * self.score(tau0) >= beta * self.score(tau1) {
                    1.0
                } else {
                    0.0
                })
            }
        }
    }

    /// Draws `Y`, where `Y = 0` means `tau0` is preferred.
    pub fn sample_preference_with<R: Rng + ?Sized>(
        &self,
        tau0: &Trajectory,
        tau1: &Trajectory,
        rng: &mut R,
    ) -> Result<u8> {
        let p = self.preference_prob(tau0, tau1)?;
        let u: f64 = rng.gen();
        Ok(if u < p { 0 } else { 1 })
    }

    pub fn sample_preference(&self, tau0: &Trajectory, tau1: &Trajectory, seed: u64) -> Result<u8> {
        let mut rng: SimRng = rng_from_seed(seed);
        self.sample_preference_with(tau0, tau1, &mut rng)
    }
}

/// Entropy heuristic `c / H(zeta)`, where `zeta` is the empirical
/// distribution of state-action pairs in winning trajectories.
pub fn estimate_beta_entropy(dataset: &PreferenceDataset, c: f64) -> Result<f64> {
    if dataset.is_empty() {
        return Err(invalid("cannot estimate beta from an empty dataset"));
    }
    if !(c > 0.0) {
        return Err(invalid("c must be positive"));
    }
    let na = dataset.num_actions();
    let mut counts = vec![0u64; dataset.num_states() * na];
    for record in dataset.records() {
        let w = record.winner();
        for (&s, &a) in w.states.iter().zip(&w.actions) {
            counts[s * na + a] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let entropy: f64 = counts
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let p = n as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    Ok(c / entropy.max(1e-9))
}
