//! Linear preference bandits as the `S = 1`, `H = 1` case of the MDP
//! machinery: arms are actions and `phi(a)` is the arm vector.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::mdp::{sample_index, FeatureMap, TabularMdp, Trajectory, TransitionKernel};
use crate::offline_data::{DatasetOrigin, PreferenceDataset, PreferenceRecord};
use crate::posterior::{map_estimate, posterior_sample, MapProblem};
use crate::pspl::{EpisodeSeeds, FinalPolicyRule, PsplConfig};
use crate::rater::RaterInstance;
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct BanditInstance {
    arms: Vec<Vec<f64>>,
    theta: Vec<f64>,
    mdp: TabularMdp,
}

impl BanditInstance {
    /// Arms must have l1 norm at most 1 and share the dimension of `theta`.
    pub fn new(arms: Vec<Vec<f64>>, theta: Vec<f64>) -> Result<Self> {
        if arms.is_empty() {
            return Err(invalid("bandit needs at least one arm"));
        }
        let dim = theta.len();
        if dim == 0 || arms.iter().any(|a| a.len() != dim) {
            return Err(invalid("arm and theta dimensions differ"));
        }
        if arms
            .iter()
            .any(|a| a.iter().map(|x| x.abs()).sum::<f64>() > 1.0 + 1e-12)
        {
            return Err(invalid("arm l1 norm exceeds 1"));
        }
        let na = arms.len();
        let kernel = TransitionKernel::new(1, na, vec![1.0; na])?;
        let features = FeatureMap::Table {
            dim,
            rows: arms.clone(),
        };
        let mdp = TabularMdp::with_features(1, vec![1.0], kernel, theta.clone(), features)?;
        Ok(Self { arms, theta, mdp })
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn arms(&self) -> &[Vec<f64>] {
        &self.arms
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// The one-state, one-step MDP view.
    pub fn as_mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn reward(&self, arm: usize) -> f64 {
        dot(&self.arms[arm], &self.theta)
    }

    /// Best arm under the true parameter, lowest index on ties.
    pub fn best_arm(&self) -> usize {
        argmax_over(&self.arms, &self.theta, 0..self.num_arms())
    }

    pub fn simple_regret(&self, arm: usize) -> f64 {
        self.reward(self.best_arm()) - self.reward(arm)
    }

    /// Largest arm l1 norm, used as `B`.
    pub fn embedding_bound(&self) -> f64 {
        self.mdp.features().embedding_bound(1)
    }

    pub fn arm_trajectory(&self, arm: usize) -> Trajectory {
        Trajectory {
            states: vec![0],
            actions: vec![arm],
            embedding: self.arms[arm].clone(),
        }
    }

    pub fn empty_dataset(&self, origin: DatasetOrigin) -> PreferenceDataset {
        PreferenceDataset::for_mdp(&self.mdp, origin)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax_over(
    arms: &[Vec<f64>],
    theta: &[f64],
    members: impl IntoIterator<Item = usize>,
) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for a in members {
        let v = dot(&arms[a], theta);
        if best.map_or(true, |(_, bv)| v > bv) {
            best = Some((a, v));
        }
    }
    best.map(|(a, _)| a).unwrap_or(0)
}

/// Offline comparisons with both arms drawn i.i.d. from `arm_probs`
/// (uniform when `None`).
pub fn generate_bandit_offline(
    instance: &BanditInstance,
    rater: &RaterInstance,
    arm_probs: Option<&[f64]>,
    n: usize,
    seed: u64,
) -> Result<PreferenceDataset> {
    let na = instance.num_arms();
    let uniform = vec![1.0 / na as f64; na];
    let probs = arm_probs.unwrap_or(&uniform);
    if probs.len() != na
        || probs.iter().any(|p| !(*p >= 0.0))
        || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(invalid(
            "arm distribution is not a probability vector over arms",
        ));
    }
    let mut rng = rng_from_seed(seed);
    let mut data = instance.empty_dataset(DatasetOrigin::Offline);
    for _ in 0..n {
        let a0 = sample_index(probs, &mut rng);
        let a1 = sample_index(probs, &mut rng);
        let (t0, t1) = (instance.arm_trajectory(a0), instance.arm_trajectory(a1));
        let label = rater.sample_preference_with(&t0, &t1, &mut rng)?;
        data.push(PreferenceRecord::new(t0, t1, label)?)?;
    }
    Ok(data)
}

/// Arms retained from the offline data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InformationSet {
    pub members: Vec<usize>,
}

impl InformationSet {
    pub fn contains(&self, arm: usize) -> bool {
        self.members.binary_search(&arm).is_ok()
    }
}

/// Keeps every arm that won at least once or never appears.
pub fn build_information_set(
    instance: &BanditInstance,
    dataset: &PreferenceDataset,
) -> Result<InformationSet> {
    let na = instance.num_arms();
    let mut appeared = vec![false; na];
    let mut won = vec![false; na];
    for r in dataset.records() {
        for tau in [&r.tau0, &r.tau1] {
            let a = *tau
                .actions
                .first()
                .ok_or_else(|| invalid("empty bandit trajectory"))?;
            if a >= na || tau.states.iter().any(|&s| s != 0) {
                return Err(invalid(format!("arm index {a} out of range")));
            }
            appeared[a] = true;
        }
        won[r.winner().actions[0]] = true;
    }
    Ok(InformationSet {
        members: (0..na).filter(|&a| won[a] || !appeared[a]).collect(),
    })
}

/// Probability bound on losing the best arm from the information set.
pub fn f1_bound(
    beta: f64,
    lambda: f64,
    n: usize,
    k: usize,
    num_arms: usize,
    d: usize,
    mu_min: f64,
) -> Result<f64> {
    if !(beta > 0.0 && lambda > 0.0) || n == 0 || k == 0 || num_arms == 0 || d == 0 {
        return Err(invalid("f1 inputs must be positive"));
    }
    if !(mu_min > 0.0 && mu_min <= 1.0) {
        return Err(invalid(format!("mu_min {mu_min} not in (0, 1]")));
    }
    let delta = (k as f64 * beta).ln() / beta;
    let m = delta.min(1.0);
    let alpha1 = num_arms as f64 * m;
    let alpha2 = (2.0 * (2.0 * (d as f64).sqrt() * k as f64).ln()).sqrt() / lambda;
    let p = 1.0 - 1.0 / (1.0 + (beta * (m + alpha2 - alpha1)).exp());
    Ok(p.powf(n as f64) + (1.0 - mu_min).powf(2.0 * n as f64) + 1.0 / k as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditRound {
    pub round: usize,
    pub arms: [usize; 2],
    pub regret: [f64; 2],
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditTrace {
    pub rounds: Vec<BanditRound>,
    pub information_set: InformationSet,
    pub final_arm: Option<usize>,
    pub final_regret: Option<f64>,
    pub error: Option<String>,
}

fn pick(instance: &BanditInstance, set: &InformationSet, theta: &[f64]) -> usize {
    argmax_over(instance.arms(), theta, set.members.iter().copied())
}

/// Top-two posterior sampling over arms restricted to the information set.
/// `config.episodes` is the number of online rounds.
pub fn run_bandit_pspl(
    instance: &BanditInstance,
    rater: &RaterInstance,
    offline: &PreferenceDataset,
    config: &PsplConfig,
    seed: u64,
) -> Result<BanditTrace> {
    let mut set = build_information_set(instance, offline)?;
    if set.members.is_empty() {
        set.members = (0..instance.num_arms()).collect();
    }
    let online = instance.empty_dataset(DatasetOrigin::Online);
    let mut problem = MapProblem::new(&online, offline, &config.prior, config.assumed_competence)?;
    let mut trace = BanditTrace {
        rounds: Vec::with_capacity(config.episodes),
        information_set: set.clone(),
        final_arm: None,
        final_regret: None,
        error: None,
    };
    let round = |problem: &MapProblem, k: usize| -> Result<BanditRound> {
        let seeds = EpisodeSeeds::derive(seed, k);
        let s0 = posterior_sample(problem, &config.optimizer, seeds.sample[0])?;
        let s1 = posterior_sample(problem, &config.optimizer, seeds.sample[1])?;
        let arms = [
            pick(instance, &set, &s0.theta_hat),
            pick(instance, &set, &s1.theta_hat),
        ];
        let label = rater.sample_preference(
            &instance.arm_trajectory(arms[0]),
            &instance.arm_trajectory(arms[1]),
            seeds.feedback,
        )?;
        Ok(BanditRound {
            round: k,
            arms,
            regret: [
                instance.simple_regret(arms[0]),
                instance.simple_regret(arms[1]),
            ],
            label,
        })
    };
    for k in 1..=config.episodes {
        match round(&problem, k) {
            Ok(r) => {
                let record = PreferenceRecord::new(
                    instance.arm_trajectory(r.arms[0]),
                    instance.arm_trajectory(r.arms[1]),
                    r.label,
                )?;
                problem.push_online(&record)?;
                trace.rounds.push(r);
            }
            Err(e) => {
                trace.error = Some(format!("round {k}: {e}"));
                return Ok(trace);
            }
        }
    }
    let final_theta = match config.final_policy_rule {
        FinalPolicyRule::MapUnperturbed => {
            map_estimate(&problem, &config.optimizer).map(|m| m.theta_hat)
        }
        FinalPolicyRule::LastSample => {
            let seeds = EpisodeSeeds::derive(seed, config.episodes + 1);
            posterior_sample(&problem, &config.optimizer, seeds.sample[0]).map(|m| m.theta_hat)
        }
    };
    match final_theta {
        Ok(theta) => {
            let arm = pick(instance, &set, &theta);
            trace.final_arm = Some(arm);
            trace.final_regret = Some(instance.simple_regret(arm));
        }
        Err(e) => trace.error = Some(format!("final arm: {e}")),
    }
    Ok(trace)
}

/// Random arms on the l1 sphere scaled into `[0, 1]^d`.
pub fn random_instance<R: Rng + ?Sized>(
    num_arms: usize,
    dim: usize,
    rng: &mut R,
) -> Result<BanditInstance> {
    let arms = (0..num_arms)
        .map(|_| {
            let raw: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
            let norm: f64 = raw.iter().sum::<f64>().max(1e-12);
            raw.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let theta = (0..dim).map(|_| rng.gen::<f64>()).collect();
    BanditInstance::new(arms, theta)
}
