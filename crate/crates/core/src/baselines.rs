//! Comparison algorithms: tabular DPO and IPO fitted offline, and dueling
//! posterior sampling with a Gaussian reward posterior.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{backward_induction, rollout, Policy, RegretEvaluator, TabularMdp, Trajectory};
use crate::offline_data::{PreferenceDataset, PreferenceRecord};
use crate::posterior::{informed_prior_eta, Covariance, OptimizerConfig, PriorSpec};
use crate::pspl::{EpisodeRecord, EpisodeSeeds, RunTrace};
use crate::rater::{sigmoid, RaterInstance};
use crate::seed::rng_from_seed;

/// Per-step softmax policy with a reference policy, logits `[H][S][A]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicyParams {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    pub logits: Vec<f64>,
    pub reference_logits: Vec<f64>,
    pub tau_reg: f64,
}

impl SoftmaxPolicyParams {
    /// Uniform policy and uniform reference.
    pub fn uniform(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        tau_reg: f64,
    ) -> Result<Self> {
        if !(tau_reg > 0.0) {
            return Err(invalid("tau_reg must be positive"));
        }
        let n = horizon * num_states * num_actions;
        Ok(Self {
            horizon,
            num_states,
            num_actions,
            logits: vec![0.0; n],
            reference_logits: vec![0.0; n],
            tau_reg,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn offset(&self, h: usize, s: usize) -> usize {
        (h * self.num_states + s) * self.num_actions
    }

    /// Action probabilities at `(h, s)`.
    pub fn probs(&self, h: usize, s: usize) -> Vec<f64> {
        let o = self.offset(h, s);
        softmax(&self.logits[o..o + self.num_actions])
    }

    /// `ln pi(tau) = sum_h ln pi_h(a_h | s_h)`.
    pub fn log_prob(&self, tau: &Trajectory) -> f64 {
        self.log_prob_of(&self.logits, tau)
    }

    pub fn reference_log_prob(&self, tau: &Trajectory) -> f64 {
        self.log_prob_of(&self.reference_logits, tau)
    }

    fn log_prob_of(&self, logits: &[f64], tau: &Trajectory) -> f64 {
        let na = self.num_actions;
        tau.states
            .iter()
            .zip(&tau.actions)
            .enumerate()
            .map(|(h, (&s, &a))| {
                let o = self.offset(h, s);
                let row = &logits[o..o + na];
                row[a] - log_sum_exp(row)
            })
            .sum()
    }

    /// Adds `scale * grad ln pi(tau)` into `grad`.
    fn accumulate_log_prob_grad(&self, tau: &Trajectory, scale: f64, grad: &mut [f64]) {
        let na = self.num_actions;
        for (h, (&s, &a)) in tau.states.iter().zip(&tau.actions).enumerate() {
            let o = self.offset(h, s);
            let p = softmax(&self.logits[o..o + na]);
            for b in 0..na {
                grad[o + b] -= scale * p[b];
            }
            grad[o + a] += scale;
        }
    }

    /// Argmax of the logits at every `(h, s)`, lowest index on ties.
    pub fn greedy_policy(&self) -> Policy {
        let mut policy = Policy::constant(self.horizon, self.num_states, self.num_actions, 0);
        for h in 0..self.horizon {
            for s in 0..self.num_states {
                let o = self.offset(h, s);
                let row = &self.logits[o..o + self.num_actions];
                let mut best = 0;
                for a in 1..row.len() {
                    if row[a] > row[best] {
                        best = a;
                    }
                }
                policy.set_action(h, s, best);
            }
        }
        policy
    }

    fn check(&self, dataset: &PreferenceDataset) -> Result<()> {
        if dataset.is_empty() {
            return Err(invalid("preference loss of an empty dataset"));
        }
        if (
            dataset.horizon(),
            dataset.num_states(),
            dataset.num_actions(),
        ) != (self.horizon, self.num_states, self.num_actions)
        {
            return Err(invalid("dataset shape does not match the policy"));
        }
        Ok(())
    }

    /// `h(y, y') = ln(pi(y) pi_ref(y') / (pi(y') pi_ref(y)))`.
    pub fn log_ratio_margin(&self, y: &Trajectory, y_prime: &Trajectory) -> Result<f64> {
        let ref_y = self.reference_log_prob(y);
        let ref_yp = self.reference_log_prob(y_prime);
        if !ref_y.is_finite() || !ref_yp.is_finite() {
            return Err(Error::Domain(
                "trajectory has zero reference probability".into(),
            ));
        }
        Ok(self.log_prob(y) - self.log_prob(y_prime) - (ref_y - ref_yp))
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfflineBaselineKind {
    Dpo,
    Ipo,
}

/// Mean DPO loss `-ln sigmoid(tau * h(y_w, y_l))` and its gradient.
pub fn dpo_loss_and_grad(
    params: &SoftmaxPolicyParams,
    dataset: &PreferenceDataset,
) -> Result<(f64, Vec<f64>)> {
    params.check(dataset)?;
    let tau = params.tau_reg;
    let n = dataset.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.logits.len()];
    for r in dataset.records() {
        let x = tau * params.log_ratio_margin(r.winner(), r.loser())?;
        loss += softplus(-x);
        let dx = -sigmoid(-x) * tau / n;
        params.accumulate_log_prob_grad(r.winner(), dx, &mut grad);
        params.accumulate_log_prob_grad(r.loser(), -dx, &mut grad);
    }
    Ok((loss / n, grad))
}

/// Mean IPO loss `(h(y_w, y_l) - 1 / (2 tau))^2` and its gradient.
pub fn ipo_loss_and_grad(
    params: &SoftmaxPolicyParams,
    dataset: &PreferenceDataset,
) -> Result<(f64, Vec<f64>)> {
    params.check(dataset)?;
    let target = 1.0 / (2.0 * params.tau_reg);
    let n = dataset.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.logits.len()];
    for r in dataset.records() {
        let e = params.log_ratio_margin(r.winner(), r.loser())? - target;
        loss += e * e;
        let dh = 2.0 * e / n;
        params.accumulate_log_prob_grad(r.winner(), dh, &mut grad);
        params.accumulate_log_prob_grad(r.loser(), -dh, &mut grad);
    }
    Ok((loss / n, grad))
}

pub fn offline_loss_and_grad(
    kind: OfflineBaselineKind,
    params: &SoftmaxPolicyParams,
    dataset: &PreferenceDataset,
) -> Result<(f64, Vec<f64>)> {
    match kind {
        OfflineBaselineKind::Dpo => dpo_loss_and_grad(params, dataset),
        OfflineBaselineKind::Ipo => ipo_loss_and_grad(params, dataset),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineBaselineResult {
    pub params: SoftmaxPolicyParams,
    pub policy: Policy,
    pub simple_regret: f64,
    /// Loss at the start and after every accepted step.
    pub loss_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Gradient descent with backtracking on the DPO or IPO loss from uniform
/// logits, then greedy extraction.
pub fn train_offline_baseline(
    kind: OfflineBaselineKind,
    dataset: &PreferenceDataset,
    mdp: &TabularMdp,
    cfg: &OptimizerConfig,
    tau_reg: f64,
) -> Result<OfflineBaselineResult> {
    cfg.validate()?;
    let mut params =
        SoftmaxPolicyParams::uniform(mdp.horizon(), mdp.num_states(), mdp.num_actions(), tau_reg)?;
    let (mut loss, mut grad) = offline_loss_and_grad(kind, &params, dataset)?;
    let mut history = vec![loss];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm < cfg.tol {
            converged = true;
            break;
        }
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        let mut step = cfg.step;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = params.clone();
            for (l, g) in trial.logits.iter_mut().zip(&grad) {
                *l -= step * g;
            }
            let (tl, tg) = offline_loss_and_grad(kind, &trial, dataset)?;
            if tl.is_finite() && tl <= loss - 1e-4 * step * g2 {
                accepted = Some((trial, tl, tg));
                break;
            }
            step *= cfg.backtrack;
        }
        iterations += 1;
        match accepted {
            Some((p, l, g)) => {
                params = p;
                loss = l;
                grad = g;
                history.push(loss);
            }
            None => break,
        }
    }
    let policy = params.greedy_policy();
    let simple_regret = RegretEvaluator::new(mdp).regret(mdp, &policy)?;
    Ok(OfflineBaselineResult {
        params,
        policy,
        simple_regret,
        loss_history: history,
        iterations,
        converged,
    })
}

/// Bayesian linear regression of preference signs on embedding differences,
/// unit noise variance, kept in information form.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRewardPosterior {
    precision: DMatrix<f64>,
    /// `Sigma0^-1 mu0 + X' y`.
    shift: DVector<f64>,
}

impl GaussianRewardPosterior {
    pub fn from_prior(prior: &PriorSpec) -> Result<Self> {
        let d = prior.dim();
        let mu0 = DVector::from_column_slice(&prior.mu0);
        let precision = match &prior.sigma0 {
            Covariance::Diagonal(v) => {
                if v.len() != d || v.iter().any(|x| !(*x > 0.0)) {
                    return Err(invalid("diagonal Sigma0 must have d positive entries"));
                }
                DMatrix::from_diagonal(&DVector::from_iterator(d, v.iter().map(|x| 1.0 / x)))
            }
            Covariance::Dense(m) => m
                .clone()
                .cholesky()
                .ok_or_else(|| invalid("Sigma0 must be positive definite"))?
                .inverse(),
        };
        let shift = &precision * mu0;
        Ok(Self { precision, shift })
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    /// Adds the design row `x` with target `y`.
    pub fn observe(&mut self, x: &[f64], y: f64) {
        let x = DVector::from_column_slice(x);
        self.precision.ger(1.0, &x, &x, 1.0);
        self.shift.axpy(y, &x, 1.0);
    }

    /// Row `phi(tau0) - phi(tau1)`, target `+1` if `tau0` won else `-1`.
    pub fn observe_record(&mut self, record: &PreferenceRecord) {
        let x: Vec<f64> = record
            .tau0
            .embedding
            .iter()
            .zip(&record.tau1.embedding)
            .map(|(a, b)| a - b)
            .collect();
        self.observe(&x, if record.label == 0 { 1.0 } else { -1.0 });
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    fn factor(&self) -> Result<Cholesky<f64, Dyn>> {
        self.precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("posterior precision is not positive definite".into()))
    }

    pub fn mean(&self) -> Result<Vec<f64>> {
        Ok(self.factor()?.solve(&self.shift).as_slice().to_vec())
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        Ok(self.factor()?.inverse())
    }

    /// Draws from `N(mean, precision^-1)`.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let chol = self.factor()?;
        let mean = chol.solve(&self.shift);
        let z = DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        // precision = L L', so L'^-1 z has covariance precision^-1
        let noise = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Domain("singular Cholesky factor".into()))?;
        Ok((mean + noise).as_slice().to_vec())
    }
}

/// Dueling posterior sampling seeded with the offline data.
pub fn run_dps(
    mdp: &TabularMdp,
    rater: &RaterInstance,
    offline: &PreferenceDataset,
    episodes: usize,
    prior: &PriorSpec,
    seed: u64,
) -> Result<RunTrace> {
    prior.validate(mdp.dim(), mdp.num_states())?;
    let mut eta = informed_prior_eta(prior, offline)?;
    let mut reward = GaussianRewardPosterior::from_prior(prior)?;
    for r in offline.records() {
        reward.observe_record(r);
    }
    let evaluator = RegretEvaluator::new(mdp);
    let mut trace = RunTrace {
        episodes: Vec::with_capacity(episodes),
        final_policy: None,
        final_regret: None,
        alternate_regret: None,
        dataset_size: offline.len(),
        error: None,
    };
    let features = mdp.features();
    for k in 1..=episodes {
        let seeds = EpisodeSeeds::derive(seed, k);
        let mut policies = Vec::with_capacity(2);
        let mut errors = [0.0; 2];
        for i in 0..2 {
            let mut rng = rng_from_seed(seeds.sample[i]);
            let theta = match reward.sample_with(&mut rng) {
                Ok(t) => t,
                Err(e) => {
                    trace.error = Some(format!("episode {k}: {e}"));
                    return Ok(trace);
                }
            };
            let kernel = eta.sample_eta_with(&mut rng);
            let (_, policy) = backward_induction(mdp, &features.reward_table(&theta), &kernel)?;
            errors[i] = theta
                .iter()
                .zip(mdp.theta())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            policies.push(policy);
        }
        let tau0 = rollout(mdp, &policies[0], &mut rng_from_seed(seeds.rollout[0]));
        let tau1 = rollout(mdp, &policies[1], &mut rng_from_seed(seeds.rollout[1]));
        let label = rater.sample_preference(&tau0, &tau1, seeds.feedback)?;
        let record = PreferenceRecord::new(tau0, tau1, label)?;
        eta.observe_record(&record)?;
        reward.observe_record(&record);
        trace.episodes.push(EpisodeRecord {
            episode: k,
            theta_error: errors,
            regret: [
                evaluator.regret(mdp, &policies[0])?,
                evaluator.regret(mdp, &policies[1])?,
            ],
            label,
        });
        trace.dataset_size += 1;
    }
    match reward.mean() {
        Ok(theta) => {
            let (_, policy) = backward_induction(mdp, &features.reward_table(&theta), &eta.mean())?;
            trace.final_regret = Some(evaluator.regret(mdp, &policy)?);
            trace.final_policy = Some(policy);
        }
        Err(e) => trace.error = Some(format!("final policy: {e}")),
    }
    Ok(trace)
}
