//! The PSPL episode loop: two perturbed-MAP posterior draws per episode,
//! planning on each, dual rollout on the true MDP and one preference query.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::{backward_induction, rollout, Policy, RegretEvaluator, TabularMdp};
use crate::offline_data::{DatasetOrigin, PreferenceDataset, PreferenceRecord};
use crate::posterior::{
    map_estimate_from, posterior_sample_from, MapEstimate, MapProblem, OptimizerConfig, PriorSpec,
};
use crate::rater::{RaterCompetence, RaterInstance};
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalPolicyRule {
    /// Plan on the unperturbed MAP estimate over all data.
    #[default]
    MapUnperturbed,
    /// Return the parity-0 policy of one more episode.
    LastSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsplConfig {
    pub episodes: usize,
    /// Competence the learner assumes; may differ from the rater's.
    pub assumed_competence: RaterCompetence,
    pub prior: PriorSpec,
    pub optimizer: OptimizerConfig,
    pub final_policy_rule: FinalPolicyRule,
}

/// Seeds for one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSeeds {
    pub sample: [u64; 2],
    pub rollout: [u64; 2],
    pub feedback: u64,
}

impl EpisodeSeeds {
    /// `episode seed = hash(run seed, k)`, parity seeds hashed from it.
    pub fn derive(run_seed: u64, episode: usize) -> Self {
        let e = derive_seed(run_seed, episode as u64);
        Self {
            sample: [derive_seed(e, 0), derive_seed(e, 1)],
            rollout: [derive_seed(e, 2), derive_seed(e, 3)],
            feedback: derive_seed(e, 4),
        }
    }

    /// Exchanges the roles of the two parities.
    pub fn swapped(self) -> Self {
        Self {
            sample: [self.sample[1], self.sample[0]],
            rollout: [self.rollout[1], self.rollout[0]],
            feedback: self.feedback,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// 1-based episode index.
    pub episode: usize,
    /// `||theta_hat - theta||_2` of each draw.
    pub theta_error: [f64; 2],
    pub regret: [f64; 2],
    pub label: u8,
}

impl EpisodeRecord {
    /// Mean regret of the two deployed policies.
    pub fn mean_regret(&self) -> f64 {
        0.5 * (self.regret[0] + self.regret[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub episodes: Vec<EpisodeRecord>,
    /// Output under the configured rule.
    pub final_policy: Option<Policy>,
    pub final_regret: Option<f64>,
    /// Regret of the output under the other rule.
    pub alternate_regret: Option<f64>,
    pub dataset_size: usize,
    pub error: Option<String>,
}

/// Mutable state of a run: `D_k` as offline plus online records.
#[derive(Debug, Clone)]
pub struct RunState {
    problem: MapProblem,
    online: PreferenceDataset,
    evaluator: RegretEvaluator,
    /// Unperturbed MAP `vartheta` of the latest solve; starting point of
    /// the next solves.
    warm_start: Option<Vec<f64>>,
}

impl RunState {
    pub fn new(mdp: &TabularMdp, offline: &PreferenceDataset, config: &PsplConfig) -> Result<Self> {
        if (
            offline.num_states(),
            offline.num_actions(),
            offline.horizon(),
            offline.dim(),
        ) != (
            mdp.num_states(),
            mdp.num_actions(),
            mdp.horizon(),
            mdp.dim(),
        ) {
            return Err(invalid("offline dataset shape does not match the MDP"));
        }
        let online = PreferenceDataset::for_mdp(mdp, DatasetOrigin::Online);
        let problem = MapProblem::new(&online, offline, &config.prior, config.assumed_competence)?;
        Ok(Self {
            problem,
            online,
            evaluator: RegretEvaluator::new(mdp),
            warm_start: None,
        })
    }

    pub fn online(&self) -> &PreferenceDataset {
        &self.online
    }

    pub fn problem(&self) -> &MapProblem {
        &self.problem
    }

    pub fn dataset_size(&self) -> usize {
        self.problem.num_offline() + self.problem.num_online()
    }

    pub fn evaluator(&self) -> &RegretEvaluator {
        &self.evaluator
    }

    /// Unperturbed MAP on the current data, started from the previous one.
    pub fn refresh_map(&mut self, cfg: &OptimizerConfig) -> Result<MapEstimate> {
        let map = map_estimate_from(&self.problem, cfg, self.warm_start.as_deref())?;
        self.warm_start = Some(map.vartheta_hat.clone());
        Ok(map)
    }

    /// Posterior draw started from the latest MAP.
    pub fn sample(&self, cfg: &OptimizerConfig, seed: u64) -> Result<MapEstimate> {
        posterior_sample_from(&self.problem, cfg, seed, self.warm_start.as_deref())
    }

    fn append(&mut self, record: PreferenceRecord) -> Result<()> {
        self.problem.push_online(&record)?;
        self.online.push(record)
    }
}

/// Greedy plan on an estimate's reward and transitions.
pub fn plan_on_estimate(mdp: &TabularMdp, estimate: &MapEstimate) -> Result<Policy> {
    let reward = mdp.features().reward_table(&estimate.theta_hat);
    Ok(backward_induction(mdp, &reward, &estimate.eta_hat)?.1)
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The two policies and trajectories of an episode, before feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub policies: [Policy; 2],
    pub record: EpisodeRecord,
    pub preference_prob: f64,
    pub trajectories: PreferenceRecord,
}

/// One episode with explicit seeds; appends the new record to `state`.
pub fn pspl_episode_with_seeds(
    state: &mut RunState,
    mdp: &TabularMdp,
    rater: &RaterInstance,
    config: &PsplConfig,
    episode: usize,
    seeds: EpisodeSeeds,
) -> Result<EpisodeOutcome> {
    state.refresh_map(&config.optimizer)?;
    let draws = [
        state.sample(&config.optimizer, seeds.sample[0])?,
        state.sample(&config.optimizer, seeds.sample[1])?,
    ];
    let policies = [
        plan_on_estimate(mdp, &draws[0])?,
        plan_on_estimate(mdp, &draws[1])?,
    ];
    let tau0 = rollout(mdp, &policies[0], &mut rng_from_seed(seeds.rollout[0]));
    let tau1 = rollout(mdp, &policies[1], &mut rng_from_seed(seeds.rollout[1]));
    let preference_prob = rater.preference_prob(&tau0, &tau1)?;
    let label = rater.sample_preference(&tau0, &tau1, seeds.feedback)?;
    let regret = [
        state.evaluator.regret(mdp, &policies[0])?,
        state.evaluator.regret(mdp, &policies[1])?,
    ];
    let record = EpisodeRecord {
        episode,
        theta_error: [
            l2_distance(&draws[0].theta_hat, mdp.theta()),
            l2_distance(&draws[1].theta_hat, mdp.theta()),
        ],
        regret,
        label,
    };
    let trajectories = PreferenceRecord::new(tau0, tau1, label)?;
    state.append(trajectories.clone())?;
    Ok(EpisodeOutcome {
        policies,
        record,
        preference_prob,
        trajectories,
    })
}

/// One episode with seeds derived from `(run_seed, episode)`.
pub fn pspl_episode(
    state: &mut RunState,
    mdp: &TabularMdp,
    rater: &RaterInstance,
    config: &PsplConfig,
    run_seed: u64,
    episode: usize,
) -> Result<EpisodeRecord> {
    let seeds = EpisodeSeeds::derive(run_seed, episode);
    Ok(pspl_episode_with_seeds(state, mdp, rater, config, episode, seeds)?.record)
}

fn final_policies(
    state: &mut RunState,
    mdp: &TabularMdp,
    config: &PsplConfig,
    run_seed: u64,
) -> Result<(Policy, Policy)> {
    let map = state.refresh_map(&config.optimizer)?;
    let map_policy = plan_on_estimate(mdp, &map)?;
    let seeds = EpisodeSeeds::derive(run_seed, config.episodes + 1);
    let last = state.sample(&config.optimizer, seeds.sample[0])?;
    let last_policy = plan_on_estimate(mdp, &last)?;
    Ok(match config.final_policy_rule {
        FinalPolicyRule::MapUnperturbed => (map_policy, last_policy),
        FinalPolicyRule::LastSample => (last_policy, map_policy),
    })
}

/// Runs `K` episodes from the informed prior on `offline`, then outputs the
/// final policy.
pub fn run_pspl(
    mdp: &TabularMdp,
    rater: &RaterInstance,
    offline: &PreferenceDataset,
    config: &PsplConfig,
    seed: u64,
) -> Result<RunTrace> {
    run_pspl_with(mdp, rater, offline, config, seed, |_| {})
}

/// [`run_pspl`] with a callback after every episode.
pub fn run_pspl_with<F>(
    mdp: &TabularMdp,
    rater: &RaterInstance,
    offline: &PreferenceDataset,
    config: &PsplConfig,
    seed: u64,
    mut on_episode: F,
) -> Result<RunTrace>
where
    F: FnMut(&EpisodeRecord),
{
    let mut state = RunState::new(mdp, offline, config)?;
    let mut trace = RunTrace {
        episodes: Vec::with_capacity(config.episodes),
        final_policy: None,
        final_regret: None,
        alternate_regret: None,
        dataset_size: state.dataset_size(),
        error: None,
    };
    for k in 1..=config.episodes {
        match pspl_episode(&mut state, mdp, rater, config, seed, k) {
            Ok(record) => {
                on_episode(&record);
                trace.episodes.push(record);
            }
            Err(e) => {
                trace.error = Some(format!("episode {k}: {e}"));
                trace.dataset_size = state.dataset_size();
                return Ok(trace);
            }
        }
    }
    trace.dataset_size = state.dataset_size();
    match final_policies(&mut state, mdp, config, seed) {
        Ok((primary, alternate)) => {
            trace.final_regret = Some(state.evaluator.regret(mdp, &primary)?);
            trace.alternate_regret = Some(state.evaluator.regret(mdp, &alternate)?);
            trace.final_policy = Some(primary);
        }
        Err(e) => trace.error = Some(format!("final policy: {e}")),
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::make_riverswim;
    use crate::mdp::TransitionKernel;
    use crate::offline_data::{generate_offline, BehavioralPolicySpec};
    use crate::posterior::Covariance;
    use crate::rater::{make_rater, RaterMode};

    fn setup(
        n: usize,
        beta: f64,
        lambda: f64,
        seed: u64,
    ) -> (TabularMdp, RaterInstance, PreferenceDataset) {
        let mdp = make_riverswim(4, 8).unwrap();
        let c = RaterCompetence::new(beta, lambda).unwrap();
        let rater = make_rater(mdp.theta(), c, RaterMode::BradleyTerry, seed).unwrap();
        let data = generate_offline(
            &mdp,
            &rater,
            &BehavioralPolicySpec::UniformRandom,
            n,
            seed + 1,
        )
        .unwrap();
        (mdp, rater, data)
    }

    fn config(mdp: &TabularMdp, k: usize, c: RaterCompetence) -> PsplConfig {
        PsplConfig {
            episodes: k,
            assumed_competence: c,
            prior: PriorSpec::isotropic(mdp.dim(), mdp.num_states(), 0.0, 1.0, 1.0),
            optimizer: OptimizerConfig::default(),
            final_policy_rule: FinalPolicyRule::MapUnperturbed,
        }
    }

    #[test]
    fn zero_episodes_leave_dataset_unchanged() {
        let (mdp, rater, data) = setup(20, 5.0, 10.0, 1);
        let cfg = config(&mdp, 0, rater.competence());
        let trace = run_pspl(&mdp, &rater, &data, &cfg, 3).unwrap();
        assert!(trace.episodes.is_empty());
        assert_eq!(trace.dataset_size, 20);
        assert!(trace.final_policy.is_some());
    }

    #[test]
    fn no_data_no_episodes_is_deterministic_baseline() {
        let (mdp, rater, data) = setup(0, 5.0, 10.0, 1);
        let cfg = config(&mdp, 0, rater.competence());
        let a = run_pspl(&mdp, &rater, &data, &cfg, 3).unwrap();
        let b = run_pspl(&mdp, &rater, &data, &cfg, 4).unwrap();
        assert_eq!(a.final_policy, b.final_policy);
        // zero mean reward prior: all actions tie, lowest index everywhere
        assert!(a.final_policy.unwrap().table().iter().all(|&x| x == 0));
    }

    #[test]
    fn runs_are_reproducible_and_grow_dataset() {
        let (mdp, rater, data) = setup(30, 5.0, 10.0, 2);
        let cfg = config(&mdp, 6, rater.competence());
        let a = run_pspl(&mdp, &rater, &data, &cfg, 11).unwrap();
        let b = run_pspl(&mdp, &rater, &data, &cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.episodes.len(), 6);
        assert_eq!(a.dataset_size, 36);
        let bits = |t: &RunTrace| {
            t.episodes
                .iter()
                .map(|e| e.regret[0].to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn parity_seeds_differ() {
        let s = EpisodeSeeds::derive(5, 1);
        assert_ne!(s.sample[0], s.sample[1]);
        assert_ne!(s.rollout[0], s.rollout[1]);
    }

    #[test]
    fn swapping_parity_seeds_swaps_policies() {
        let (mdp, rater, data) = setup(25, 3.0, 5.0, 3);
        let cfg = config(&mdp, 1, rater.competence());
        for episode_seed in [1u64, 2, 3] {
            let seeds = EpisodeSeeds::derive(episode_seed, 1);
            let mut s1 = RunState::new(&mdp, &data, &cfg).unwrap();
            let mut s2 = RunState::new(&mdp, &data, &cfg).unwrap();
            let a = pspl_episode_with_seeds(&mut s1, &mdp, &rater, &cfg, 1, seeds).unwrap();
            let b =
                pspl_episode_with_seeds(&mut s2, &mdp, &rater, &cfg, 1, seeds.swapped()).unwrap();
            assert_eq!(a.policies[0], b.policies[1]);
            assert_eq!(a.policies[1], b.policies[0]);
            assert_eq!(a.trajectories.tau0, b.trajectories.tau1);
            assert_eq!(a.trajectories.tau1, b.trajectories.tau0);
            assert!((a.preference_prob + b.preference_prob - 1.0).abs() < 1e-12);
            assert_eq!(a.record.regret, [b.record.regret[1], b.record.regret[0]]);
        }
    }

    fn oracle_config(mdp: &TabularMdp, k: usize, c: RaterCompetence) -> PsplConfig {
        let mut cfg = config(mdp, k, c);
        cfg.prior.mu0 = mdp.theta().to_vec();
        cfg.prior.sigma0 = Covariance::Diagonal(vec![1e-12; mdp.dim()]);
        cfg
    }

    fn concentrated_problem_mdp() -> TabularMdp {
        // 2 states, 2 actions, deterministic moves; eta known through counts.
        let kernel =
            TransitionKernel::new(2, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        TabularMdp::new(3, vec![1.0, 0.0], kernel, vec![0.0, 0.3, 0.1, 1.0]).unwrap()
    }

    #[test]
    fn oracle_prior_plays_optimal_policy() {
        let mdp = concentrated_problem_mdp();
        let c = RaterCompetence::new(1.0, 1e6).unwrap();
        let rater = make_rater(mdp.theta(), c, RaterMode::BradleyTerry, 1).unwrap();
        let mut cfg = oracle_config(&mdp, 4, c);
        // Dirichlet concentrated at the true (deterministic) rows: alpha0 = 1
        // plus offline counts from exhaustive behavior data.
        let data =
            generate_offline(&mdp, &rater, &BehavioralPolicySpec::UniformRandom, 400, 2).unwrap();
        cfg.prior.alpha0 = vec![1.0, 1.0];
        let mut state = RunState::new(&mdp, &data, &cfg).unwrap();
        for k in 1..=4 {
            let rec = pspl_episode(&mut state, &mdp, &rater, &cfg, 9, k).unwrap();
            assert!(
                rec.regret[0].abs() < 1e-12 && rec.regret[1].abs() < 1e-12,
                "{rec:?}"
            );
        }
        let trace = run_pspl(&mdp, &rater, &data, &cfg, 9).unwrap();
        assert!(trace.final_regret.unwrap().abs() < 1e-12);
    }
}
