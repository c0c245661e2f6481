//! Posterior machinery: conjugate Dirichlet transitions, the MAP surrogate
//! losses and the perturbed-MAP sampler.
//!
//! For fixed `vartheta` the perturbed loss is quadratic in `theta`, so the
//! solver minimizes the profiled objective
//! `G(v) = sum_g w_g softplus(-beta <D_g, v>) + 1/2 (v - c)' C (v - c)`
//! with `c = mu0 + theta' + vartheta'` and `C = (Sigma0 + I / lambda^2)^-1`,
//! then recovers `theta` in closed form. The `eta` block separates and is
//! solved exactly.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{Trajectory, TransitionKernel};
use crate::offline_data::{PreferenceDataset, PreferenceRecord};
use crate::rater::{sigmoid, RaterCompetence};
use crate::seed::{rng_from_seed, SimRng};

/// Prior covariance of `theta`.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

/// Scale applied to the Dirichlet prior term of the MAP loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirichletMultiplier {
    /// `S * A`, as written in the loss.
    #[default]
    Literal,
    Unit,
}

/// Mean of the prior draws `theta'` and `vartheta'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationCenter {
    #[default]
    Zero,
    PriorMean,
}

/// `theta ~ N(mu0, Sigma0)`, `eta(s, a) ~ Dir(alpha0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub mu0: Vec<f64>,
    pub sigma0: Covariance,
    pub alpha0: Vec<f64>,
    pub dirichlet_multiplier: DirichletMultiplier,
    pub perturbation_center: PerturbationCenter,
}

impl PriorSpec {
    pub fn isotropic(dim: usize, num_states: usize, mean: f64, variance: f64, alpha: f64) -> Self {
        Self {
            mu0: vec![mean; dim],
            sigma0: Covariance::Diagonal(vec![variance; dim]),
            alpha0: vec![alpha; num_states],
            dirichlet_multiplier: DirichletMultiplier::Literal,
            perturbation_center: PerturbationCenter::Zero,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn validate(&self, dim: usize, num_states: usize) -> Result<()> {
        if self.mu0.len() != dim {
            return Err(invalid(format!(
                "mu0 has dimension {}, expected {dim}",
                self.mu0.len()
            )));
        }
        if self.alpha0.len() != num_states {
            return Err(invalid(format!(
                "alpha0 has length {}, expected S = {num_states}",
                self.alpha0.len()
            )));
        }
        if self.alpha0.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(invalid("alpha0 entries must be positive"));
        }
        match &self.sigma0 {
            Covariance::Diagonal(v) => {
                if v.len() != dim || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                    return Err(invalid("diagonal Sigma0 must have d positive entries"));
                }
            }
            Covariance::Dense(m) => {
                if m.nrows() != dim || m.ncols() != dim {
                    return Err(invalid("Sigma0 must be d x d"));
                }
                if (m - m.transpose()).abs().max() > 1e-12 * (1.0 + m.abs().max()) {
                    return Err(invalid("Sigma0 must be symmetric"));
                }
                if m.clone().cholesky().is_none() {
                    return Err(invalid("Sigma0 must be positive definite"));
                }
            }
        }
        Ok(())
    }

    fn dirichlet_scale(&self, num_states: usize, num_actions: usize) -> f64 {
        match self.dirichlet_multiplier {
            DirichletMultiplier::Literal => (num_states * num_actions) as f64,
            DirichletMultiplier::Unit => 1.0,
        }
    }
}

/// Per-(s, a) Dirichlet parameters over next states.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPosterior {
    num_states: usize,
    num_actions: usize,
    alpha: Vec<f64>,
}

fn check_indices(tau: &Trajectory, num_states: usize, num_actions: usize) -> Result<()> {
    if tau.states.iter().any(|&s| s >= num_states) || tau.actions.iter().any(|&a| a >= num_actions)
    {
        return Err(invalid("trajectory state or action index out of range"));
    }
    Ok(())
}

impl DirichletPosterior {
    /// Every row set to `alpha0`.
    pub fn from_prior(alpha0: &[f64], num_actions: usize) -> Self {
        let num_states = alpha0.len();
        let mut alpha = Vec::with_capacity(num_states * num_actions * num_states);
        for _ in 0..num_states * num_actions {
            alpha.extend_from_slice(alpha0);
        }
        Self {
            num_states,
            num_actions,
            alpha,
        }
    }

    pub fn alpha(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.alpha[start..start + self.num_states]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.alpha
    }

    /// Adds the transition counts of one trajectory.
    pub fn observe(&mut self, tau: &Trajectory) -> Result<()> {
        check_indices(tau, self.num_states, self.num_actions)?;
        for h in 1..tau.states.len() {
            let (s, a, next) = (tau.states[h - 1], tau.actions[h - 1], tau.states[h]);
            self.alpha[(s * self.num_actions + a) * self.num_states + next] += 1.0;
        }
        Ok(())
    }

    pub fn observe_record(&mut self, record: &PreferenceRecord) -> Result<()> {
        self.observe(&record.tau0)?;
        self.observe(&record.tau1)
    }

    /// Independent Dirichlet draws per row via normalized Gamma variates.
    pub fn sample_eta_with<R: Rng + ?Sized>(&self, rng: &mut R) -> TransitionKernel {
        let ns = self.num_states;
        let mut probs = Vec::with_capacity(self.alpha.len());
        for row in self.alpha.chunks(ns) {
            let draws: Vec<f64> = row
                .iter()
                .map(|&a| {
                    Gamma::new(a, 1.0)
                        .expect("positive Dirichlet parameter")
                        .sample(rng)
                })
                .collect();
            let total: f64 = draws.iter().sum();
            if total > 0.0 && total.is_finite() {
                probs.extend(draws.iter().map(|x| x / total));
            } else {
                let best = argmax(row);
                probs.extend((0..ns).map(|i| if i == best { 1.0 } else { 0.0 }));
            }
        }
        TransitionKernel::new_unchecked(ns, self.num_actions, probs).expect("shape is consistent")
    }

    pub fn sample_eta(&self, seed: u64) -> TransitionKernel {
        self.sample_eta_with(&mut rng_from_seed(seed))
    }

    /// Posterior mean `alpha / sum(alpha)` per row.
    pub fn mean(&self) -> TransitionKernel {
        let probs = self
            .alpha
            .chunks(self.num_states)
            .flat_map(|row| {
                let total: f64 = row.iter().sum();
                row.iter().map(move |a| a / total)
            })
            .collect();
        TransitionKernel::new_unchecked(self.num_states, self.num_actions, probs)
            .expect("shape is consistent")
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// `alpha(s, a) = alpha0 + transition counts` over both trajectories of
/// every record.
pub fn informed_prior_eta(
    prior: &PriorSpec,
    dataset: &PreferenceDataset,
) -> Result<DirichletPosterior> {
    if prior.alpha0.len() != dataset.num_states() {
        return Err(invalid(
            "alpha0 length does not match the dataset's state count",
        ));
    }
    let mut post = DirichletPosterior::from_prior(&prior.alpha0, dataset.num_actions());
    for record in dataset.records() {
        post.observe_record(record)?;
    }
    Ok(post)
}

/// Bootstrap weights and prior draws for one perturbed MAP solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationDraw {
    /// One weight per online record, `Bern(0.75)`.
    pub zeta: Vec<u8>,
    /// One weight per offline record, `Bern(0.6)`.
    pub omega: Vec<u8>,
    pub theta_prime: Vec<f64>,
    pub vartheta_prime: Vec<f64>,
}

pub const ZETA_PROB: f64 = 0.75;
pub const OMEGA_PROB: f64 = 0.6;

impl PerturbationDraw {
    /// Unit weights and zero prior draws: the unperturbed loss.
    pub fn identity(num_online: usize, num_offline: usize, dim: usize) -> Self {
        Self {
            zeta: vec![1; num_online],
            omega: vec![1; num_offline],
            theta_prime: vec![0.0; dim],
            vartheta_prime: vec![0.0; dim],
        }
    }

    /// Zero weights and zero prior draws.
    pub fn zeros(num_online: usize, num_offline: usize, dim: usize) -> Self {
        Self {
            zeta: vec![0; num_online],
            omega: vec![0; num_offline],
            theta_prime: vec![0.0; dim],
            vartheta_prime: vec![0.0; dim],
        }
    }
}

/// Gradient-method settings for [`perturbed_map`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub step: f64,
    pub backtrack: f64,
    pub method: OptimizerMethod,
    pub lbfgs_memory: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 2000,
            step: 1.0,
            backtrack: 0.5,
            method: OptimizerMethod::Auto,
            lbfgs_memory: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerMethod {
    /// Newton for small active dimension, L-BFGS otherwise.
    #[default]
    Auto,
    /// Plain gradient descent on the joint `(theta, vartheta)` loss.
    GradientDescent,
    Lbfgs,
    Newton,
}

const AUTO_NEWTON_MAX_DIM: usize = 1024;

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0)
            || !(self.step > 0.0)
            || !(self.backtrack > 0.0 && self.backtrack < 1.0)
        {
            return Err(invalid(
                "optimizer needs tol > 0, step > 0 and backtrack in (0, 1)",
            ));
        }
        if self.lbfgs_memory == 0 {
            return Err(invalid("lbfgs_memory must be positive"));
        }
        Ok(())
    }
}

/// Result of a (perturbed) MAP solve.
#[derive(Debug, Clone, PartialEq)]
pub struct MapEstimate {
    pub theta_hat: Vec<f64>,
    pub vartheta_hat: Vec<f64>,
    pub eta_hat: TransitionKernel,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// The three MAP loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.l1 + self.l2 + self.l3
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Prior precision and the derived matrices used by the solver.
#[derive(Debug, Clone)]
enum PriorAlgebra {
    Diagonal {
        variance: Vec<f64>,
    },
    Dense {
        precision: DMatrix<f64>,
        sigma_chol: DMatrix<f64>,
        /// `(Sigma0 + I / lambda^2)^-1`
        curvature: DMatrix<f64>,
        /// Cholesky factor of `lambda^2 I + Sigma0^-1`.
        theta_system: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    },
}

impl PriorAlgebra {
    fn new(prior: &PriorSpec, lambda: f64) -> Result<Self> {
        Ok(match &prior.sigma0 {
            Covariance::Diagonal(v) => PriorAlgebra::Diagonal {
                variance: v.clone(),
            },
            Covariance::Dense(m) => {
                let d = m.nrows();
                let chol = m
                    .clone()
                    .cholesky()
                    .ok_or_else(|| invalid("Sigma0 must be positive definite"))?;
                let precision = chol.inverse();
                let mut shifted = m.clone();
                for i in 0..d {
                    shifted[(i, i)] += 1.0 / (lambda * lambda);
                }
                let curvature = shifted
                    .cholesky()
                    .ok_or_else(|| invalid("Sigma0 + I / lambda^2 is not positive definite"))?
                    .inverse();
                let mut system = precision.clone();
                for i in 0..d {
                    system[(i, i)] += lambda * lambda;
                }
                let theta_system = system
                    .cholesky()
                    .ok_or_else(|| invalid("lambda^2 I + Sigma0^-1 is not positive definite"))?;
                PriorAlgebra::Dense {
                    precision,
                    sigma_chol: chol.l(),
                    curvature,
                    theta_system,
                }
            }
        })
    }

    /// `(x - m)' Sigma0^-1 (x - m)` and its gradient `Sigma0^-1 (x - m)`.
    fn quad(&self, diff: &[f64]) -> (f64, Vec<f64>) {
        match self {
            PriorAlgebra::Diagonal { variance } => {
                let g: Vec<f64> = diff.iter().zip(variance).map(|(x, v)| x / v).collect();
                (dot(diff, &g), g)
            }
            PriorAlgebra::Dense { precision, .. } => {
                let x = DVector::from_column_slice(diff);
                let g = precision * &x;
                (x.dot(&g), g.as_slice().to_vec())
            }
        }
    }

    /// Draws `z ~ N(0, Sigma0)`.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            PriorAlgebra::Diagonal { variance } => variance
                .iter()
                .map(|v| v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            PriorAlgebra::Dense { sigma_chol, .. } => {
                let z = DVector::from_fn(sigma_chol.nrows(), |_, _| {
                    rng.sample::<f64, _>(StandardNormal)
                });
                (sigma_chol * z).as_slice().to_vec()
            }
        }
    }

    /// `argmin_theta lambda^2/2 |theta - u|^2 + 1/2 (theta - m)' P (theta - m)`.
    fn solve_theta(&self, lambda: f64, u: &[f64], m: &[f64]) -> Vec<f64> {
        let l2 = lambda * lambda;
        match self {
            PriorAlgebra::Diagonal { variance } => u
                .iter()
                .zip(m)
                .zip(variance)
                .map(|((u, m), v)| (l2 * u + m / v) / (l2 + 1.0 / v))
                .collect(),
            PriorAlgebra::Dense {
                precision,
                theta_system,
                ..
            } => {
                let rhs =
                    DVector::from_column_slice(u) * l2 + precision * DVector::from_column_slice(m);
                theta_system.solve(&rhs).as_slice().to_vec()
            }
        }
    }
}

/// Deduplicated sparse `phi(winner) - phi(loser)` vectors.
#[derive(Debug, Clone, Default)]
struct GroupStore {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    index: HashMap<Vec<(u32, u64)>, usize>,
}

impl GroupStore {
    fn new() -> Self {
        Self {
            offsets: vec![0],
            ..Default::default()
        }
    }

    fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    fn intern(&mut self, diff: &[f64]) -> usize {
        let key: Vec<(u32, u64)> = diff
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, v.to_bits()))
            .collect();
        if let Some(&g) = self.index.get(&key) {
            return g;
        }
        let g = self.len();
        for &(i, bits) in &key {
            self.cols.push(i);
            self.vals.push(f64::from_bits(bits));
        }
        self.offsets.push(self.cols.len());
        self.index.insert(key, g);
        g
    }

    fn group(&self, g: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.offsets[g], self.offsets[g + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    fn dot(&self, g: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.group(g);
        cols.iter().zip(vals).map(|(&c, v)| v * x[c as usize]).sum()
    }
}

/// Data-dependent state of the MAP problem over `D_k = D_0 ⊕ H_k`.
#[derive(Debug, Clone)]
pub struct MapProblem {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    prior: PriorSpec,
    competence: RaterCompetence,
    algebra: PriorAlgebra,
    groups: GroupStore,
    offline_groups: Vec<usize>,
    online_groups: Vec<usize>,
    /// Flat `(s * A + a) * S + s'` indices of each online record's transitions.
    online_transitions: Vec<Vec<u32>>,
    /// `m (alpha0 - 1) + offline counts`, flat `[S][A][S]`.
    base_eta_coef: Vec<f64>,
}

fn transition_indices(tau: &Trajectory, ns: usize, na: usize, out: &mut Vec<u32>) {
    for h in 1..tau.states.len() {
        let (s, a, next) = (tau.states[h - 1], tau.actions[h - 1], tau.states[h]);
        out.push(((s * na + a) * ns + next) as u32);
    }
}

impl MapProblem {
    pub fn new(
        online: &PreferenceDataset,
        offline: &PreferenceDataset,
        prior: &PriorSpec,
        competence: RaterCompetence,
    ) -> Result<Self> {
        competence.validate()?;
        let (ns, na, dim) = (offline.num_states(), offline.num_actions(), offline.dim());
        if (
            online.num_states(),
            online.num_actions(),
            online.dim(),
            online.horizon(),
        ) != (ns, na, dim, offline.horizon())
        {
            return Err(invalid("online and offline datasets differ in shape"));
        }
        prior.validate(dim, ns)?;
        let algebra = PriorAlgebra::new(prior, competence.lambda)?;
        let scale = prior.dirichlet_scale(ns, na);
        let mut base_eta_coef = Vec::with_capacity(ns * na * ns);
        for _ in 0..ns * na {
            base_eta_coef.extend(prior.alpha0.iter().map(|a| scale * (a - 1.0)));
        }
        let mut problem = Self {
            num_states: ns,
            num_actions: na,
            dim,
            prior: prior.clone(),
            competence,
            algebra,
            groups: GroupStore::new(),
            offline_groups: Vec::with_capacity(offline.len()),
            online_groups: Vec::new(),
            online_transitions: Vec::new(),
            base_eta_coef,
        };
        let mut idx = Vec::new();
        for record in offline.records() {
            check_indices(&record.tau0, ns, na)?;
            check_indices(&record.tau1, ns, na)?;
            let g = problem.groups.intern(&record.winner_minus_loser());
            problem.offline_groups.push(g);
            idx.clear();
            transition_indices(&record.tau0, ns, na, &mut idx);
            transition_indices(&record.tau1, ns, na, &mut idx);
            for &i in &idx {
                problem.base_eta_coef[i as usize] += 1.0;
            }
        }
        for record in online.records() {
            problem.push_online(record)?;
        }
        Ok(problem)
    }

    /// Appends one online record.
    pub fn push_online(&mut self, record: &PreferenceRecord) -> Result<()> {
        let (ns, na) = (self.num_states, self.num_actions);
        check_indices(&record.tau0, ns, na)?;
        check_indices(&record.tau1, ns, na)?;
        if record.tau0.embedding.len() != self.dim || record.tau1.embedding.len() != self.dim {
            return Err(invalid(
                "record embedding dimension does not match the problem",
            ));
        }
        let g = self.groups.intern(&record.winner_minus_loser());
        self.online_groups.push(g);
        let mut idx = Vec::with_capacity(2 * record.tau0.states.len());
        transition_indices(&record.tau0, ns, na, &mut idx);
        transition_indices(&record.tau1, ns, na, &mut idx);
        self.online_transitions.push(idx);
        Ok(())
    }

    pub fn num_online(&self) -> usize {
        self.online_groups.len()
    }
    pub fn num_offline(&self) -> usize {
        self.offline_groups.len()
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }
    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }
    pub fn competence(&self) -> RaterCompetence {
        self.competence
    }

    fn check_perturbation(&self, p: &PerturbationDraw) -> Result<()> {
        if p.zeta.len() != self.num_online()
            || p.omega.len() != self.num_offline()
            || p.theta_prime.len() != self.dim
            || p.vartheta_prime.len() != self.dim
        {
            return Err(invalid("perturbation lengths do not match the datasets"));
        }
        if p.theta_prime
            .iter()
            .chain(&p.vartheta_prime)
            .any(|x| !x.is_finite())
        {
            return Err(Error::Domain("non-finite perturbation".into()));
        }
        Ok(())
    }

    /// Draws `zeta ~ Bern(0.75)`, `omega ~ Bern(0.6)`, `theta' ~ N(., Sigma0)`
    /// and `vartheta' ~ N(., I / lambda^2)`.
    pub fn draw_perturbation<R: Rng + ?Sized>(&self, rng: &mut R) -> PerturbationDraw {
        let zeta = (0..self.num_online())
            .map(|_| rng.gen_bool(ZETA_PROB) as u8)
            .collect();
        let omega = (0..self.num_offline())
            .map(|_| rng.gen_bool(OMEGA_PROB) as u8)
            .collect();
        let mut theta_prime = self.algebra.sample(rng);
        let lambda = self.competence.lambda;
        let mut vartheta_prime: Vec<f64> = (0..self.dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) / lambda)
            .collect();
        if self.prior.perturbation_center == PerturbationCenter::PriorMean {
            for ((t, v), m) in theta_prime
                .iter_mut()
                .zip(&mut vartheta_prime)
                .zip(&self.prior.mu0)
            {
                *t += m;
                *v += m;
            }
        }
        PerturbationDraw {
            zeta,
            omega,
            theta_prime,
            vartheta_prime,
        }
    }

    fn group_weights(&self, p: &PerturbationDraw) -> Vec<f64> {
        let mut w = vec![0.0; self.groups.len()];
        for (&g, &z) in self.online_groups.iter().zip(&p.zeta) {
            w[g] += z as f64;
        }
        for (&g, &o) in self.offline_groups.iter().zip(&p.omega) {
            w[g] += o as f64;
        }
        w
    }

    fn eta_coefficients(&self, zeta: &[u8]) -> Vec<f64> {
        let mut coef = self.base_eta_coef.clone();
        for (idx, &z) in self.online_transitions.iter().zip(zeta) {
            if z != 0 {
                for &i in idx {
                    coef[i as usize] += z as f64;
                }
            }
        }
        coef
    }

    /// Weighted preference term and the joint quadratic terms with gradients.
    fn theta_vartheta_loss(
        &self,
        theta: &[f64],
        vartheta: &[f64],
        weights: &[f64],
        p: &PerturbationDraw,
    ) -> (f64, Vec<f64>, Vec<f64>) {
        let beta = self.competence.beta;
        let l2 = self.competence.lambda * self.competence.lambda;
        let mut loss = 0.0;
        let mut g_vt = vec![0.0; self.dim];
        for (g, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let x = beta * self.groups.dot(g, vartheta);
            loss += w * softplus(-x);
            let coef = -w * beta * sigmoid(-x);
            let (cols, vals) = self.groups.group(g);
            for (&c, v) in cols.iter().zip(vals) {
                g_vt[c as usize] += coef * v;
            }
        }
        let r: Vec<f64> = (0..self.dim)
            .map(|i| theta[i] - vartheta[i] + p.vartheta_prime[i])
            .collect();
        loss += 0.5 * l2 * dot(&r, &r);
        let diff: Vec<f64> = (0..self.dim)
            .map(|i| theta[i] - self.prior.mu0[i] - p.theta_prime[i])
            .collect();
        let (q, pg) = self.algebra.quad(&diff);
        loss += 0.5 * q;
        let g_th: Vec<f64> = (0..self.dim).map(|i| l2 * r[i] + pg[i]).collect();
        for i in 0..self.dim {
            g_vt[i] -= l2 * r[i];
        }
        (loss, g_th, g_vt)
    }

    /// Perturbed loss `L1' + L2' + L3'` with `eta = softmax(logits)` per row,
    /// and analytic gradients for all three blocks.
    pub fn loss_and_grad_perturbed(
        &self,
        theta: &[f64],
        vartheta: &[f64],
        eta_logits: &[f64],
        p: &PerturbationDraw,
    ) -> Result<PerturbedLoss> {
        self.check_perturbation(p)?;
        let ns = self.num_states;
        if theta.len() != self.dim
            || vartheta.len() != self.dim
            || eta_logits.len() != self.base_eta_coef.len()
        {
            return Err(invalid("parameter dimensions do not match the problem"));
        }
        if theta
            .iter()
            .chain(vartheta)
            .chain(eta_logits)
            .any(|x| !x.is_finite())
        {
            return Err(Error::Domain("non-finite parameters".into()));
        }
        let weights = self.group_weights(p);
        let (mut loss, grad_theta, grad_vartheta) =
            self.theta_vartheta_loss(theta, vartheta, &weights, p);
        let coef = self.eta_coefficients(&p.zeta);
        let mut grad_logits = vec![0.0; eta_logits.len()];
        for ((z, c), g) in eta_logits
            .chunks(ns)
            .zip(coef.chunks(ns))
            .zip(grad_logits.chunks_mut(ns))
        {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            let total: f64 = c.iter().sum();
            for i in 0..ns {
                let log_eta = z[i] - lse;
                loss -= c[i] * log_eta;
                g[i] = total * log_eta.exp() - c[i];
            }
        }
        Ok(PerturbedLoss {
            loss,
            grad_theta,
            grad_vartheta,
            grad_eta_logits: grad_logits,
        })
    }

    /// Exact minimizer of the `eta` block: rows proportional to the positive
    /// part of the count coefficients, uniform when all vanish.
    fn eta_map(&self, zeta: &[u8]) -> TransitionKernel {
        let ns = self.num_states;
        let coef = self.eta_coefficients(zeta);
        let mut probs = Vec::with_capacity(coef.len());
        for row in coef.chunks(ns) {
            let total: f64 = row.iter().map(|c| c.max(0.0)).sum();
            if total > 0.0 {
                probs.extend(row.iter().map(|c| c.max(0.0) / total));
            } else {
                probs.extend(std::iter::repeat(1.0 / ns as f64).take(ns));
            }
        }
        TransitionKernel::new_unchecked(ns, self.num_actions, probs).expect("shape is consistent")
    }

    fn eta_loss(&self, zeta: &[u8], eta: &TransitionKernel) -> f64 {
        let coef = self.eta_coefficients(zeta);
        coef.iter()
            .zip(eta.as_slice())
            .filter(|(c, _)| **c != 0.0)
            .map(|(c, e)| -c * e.ln())
            .sum()
    }
}

/// Value and gradients of the perturbed loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedLoss {
    pub loss: f64,
    pub grad_theta: Vec<f64>,
    pub grad_vartheta: Vec<f64>,
    pub grad_eta_logits: Vec<f64>,
}

/// The literal loss terms over the given datasets.
///
/// `L1` covers online records (preference plus transition log-likelihood of
/// both trajectories), `L2` the offline preferences, and `L3` the prior
/// terms. Offline transition counts enter `L3` through the Dirichlet term,
/// matching the informed transition prior.
pub fn loss_terms(
    theta: &[f64],
    vartheta: &[f64],
    eta: &TransitionKernel,
    online: &PreferenceDataset,
    offline: &PreferenceDataset,
    prior: &PriorSpec,
    competence: RaterCompetence,
) -> Result<LossTerms> {
    let (ns, na, dim) = (offline.num_states(), offline.num_actions(), offline.dim());
    prior.validate(dim, ns)?;
    if theta.len() != dim || vartheta.len() != dim {
        return Err(invalid("parameter dimension does not match the datasets"));
    }
    if eta.num_states() != ns || eta.num_actions() != na {
        return Err(invalid("eta shape does not match the datasets"));
    }
    if eta.as_slice().iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Domain(
            "eta entries must be strictly positive".into(),
        ));
    }
    let beta = competence.beta;
    let preference = |r: &PreferenceRecord| {
        let s0 = beta * dot(&r.tau0.embedding, vartheta);
        let s1 = beta * dot(&r.tau1.embedding, vartheta);
        let chosen = if r.label == 0 { s0 } else { s1 };
        -(chosen - log_sum_exp2(s0, s1))
    };
    let log_lik = |tau: &Trajectory| -> f64 {
        (1..tau.states.len())
            .map(|h| eta.row(tau.states[h - 1], tau.actions[h - 1])[tau.states[h]].ln())
            .sum()
    };
    let mut l1 = 0.0;
    for r in online.records() {
        l1 += preference(r) - log_lik(&r.tau0) - log_lik(&r.tau1);
    }
    let l2: f64 = offline.records().iter().map(preference).sum();

    let algebra = PriorAlgebra::new(prior, competence.lambda)?;
    let lambda2 = competence.lambda * competence.lambda;
    let gap: f64 = theta
        .iter()
        .zip(vartheta)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let diff: Vec<f64> = theta.iter().zip(&prior.mu0).map(|(a, b)| a - b).collect();
    let (quad, _) = algebra.quad(&diff);
    let scale = prior.dirichlet_scale(ns, na);
    let mut dirichlet = 0.0;
    for s in 0..ns {
        for a in 0..na {
            for (i, e) in eta.row(s, a).iter().enumerate() {
                dirichlet -= scale * (prior.alpha0[i] - 1.0) * e.ln();
            }
        }
    }
    for r in offline.records() {
        dirichlet -= log_lik(&r.tau0) + log_lik(&r.tau1);
    }
    let l3 = 0.5 * lambda2 * gap + dirichlet + 0.5 * quad;
    Ok(LossTerms { l1, l2, l3 })
}

/// Profiled objective in `vartheta`, restricted to active coordinates.
struct Profiled {
    beta: f64,
    /// Full-dimensional center `c`.
    center: Vec<f64>,
    /// Active coordinate indices into the full vector.
    active: Vec<usize>,
    curvature: ProfiledCurvature,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    weights: Vec<f64>,
}

enum ProfiledCurvature {
    /// Diagonal of `C` on the active coordinates.
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl Profiled {
    fn dim(&self) -> usize {
        self.active.len()
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut loss = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (g, w) in self.weights.iter().enumerate() {
            let (a, b) = (self.offsets[g], self.offsets[g + 1]);
            let mut m = 0.0;
            for k in a..b {
                m += self.vals[k] * x[self.cols[k] as usize];
            }
            let z = self.beta * m;
            loss += w * softplus(-z);
            let coef = -w * self.beta * sigmoid(-z);
            for k in a..b {
                grad[self.cols[k] as usize] += coef * self.vals[k];
            }
        }
        match &self.curvature {
            ProfiledCurvature::Diagonal(c) => {
                for (j, &i) in self.active.iter().enumerate() {
                    let r = x[j] - self.center[i];
                    loss += 0.5 * c[j] * r * r;
                    grad[j] += c[j] * r;
                }
            }
            ProfiledCurvature::Dense(c) => {
                let r = DVector::from_fn(x.len(), |j, _| x[j] - self.center[self.active[j]]);
                let cr = c * &r;
                loss += 0.5 * r.dot(&cr);
                for j in 0..x.len() {
                    grad[j] += cr[j];
                }
            }
        }
        loss
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let mut h = match &self.curvature {
            ProfiledCurvature::Diagonal(c) => {
                DMatrix::from_diagonal(&DVector::from_column_slice(c))
            }
            ProfiledCurvature::Dense(c) => c.clone(),
        };
        let b2 = self.beta * self.beta;
        for (g, w) in self.weights.iter().enumerate() {
            let (a, b) = (self.offsets[g], self.offsets[g + 1]);
            let mut m = 0.0;
            for k in a..b {
                m += self.vals[k] * x[self.cols[k] as usize];
            }
            let s = sigmoid(self.beta * m);
            // saturated groups contribute below rounding level
            if s * (1.0 - s) < 1e-12 {
                continue;
            }
            let coef = w * b2 * s * (1.0 - s);
            // columns are sorted within a group: fill the lower triangle only,
            // which is all the Cholesky factorization reads
            let data = h.as_mut_slice();
            for l in a..b {
                let base = self.cols[l] as usize * n;
                let vl = coef * self.vals[l];
                for k in l..b {
                    data[base + self.cols[k] as usize] += vl * self.vals[k];
                }
            }
        }
        h
    }

    fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut full = self.center.clone();
        for (j, &i) in self.active.iter().enumerate() {
            full[i] = x[j];
        }
        full
    }
}

/// Sorts parallel index/value slices by index.
fn sort_segment(cols: &mut [u32], vals: &mut [f64]) {
    let mut pairs: Vec<(u32, f64)> = cols.iter().copied().zip(vals.iter().copied()).collect();
    pairs.sort_unstable_by_key(|p| p.0);
    for (i, (c, v)) in pairs.into_iter().enumerate() {
        cols[i] = c;
        vals[i] = v;
    }
}

struct SolveOutcome {
    x: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn diverged(iterations: usize, last_loss: f64, last_iterate: Vec<f64>) -> Error {
    Error::Optimization {
        iterations,
        last_loss,
        last_iterate,
    }
}

/// Backtracking Armijo search along `dir`; returns the accepted step and
/// loss, or `None` when the step underflows. `eval` returns the loss and the
/// gradient infinity norm. A step whose loss change is below rounding level
/// is accepted when it lowers the gradient norm.
fn armijo<F>(
    x: &[f64],
    f0: f64,
    g0: &[f64],
    dir: &[f64],
    step0: f64,
    shrink: f64,
    mut eval: F,
) -> Option<(f64, f64)>
where
    F: FnMut(&[f64]) -> (f64, f64),
{
    let slope = dot(g0, dir);
    if !(slope < 0.0) {
        return None;
    }
    let g0_norm = inf_norm(g0);
    let flat = 64.0 * f64::EPSILON * (1.0 + f0.abs());
    let mut t = step0;
    let mut trial = vec![0.0; x.len()];
    for _ in 0..80 {
        for i in 0..x.len() {
            trial[i] = x[i] + t * dir[i];
        }
        let (f, g_norm) = eval(&trial);
        if f.is_finite() && (f <= f0 + 1e-4 * t * slope || (f <= f0 + flat && g_norm < g0_norm)) {
            return Some((t, f));
        }
        t *= shrink;
    }
    None
}

fn solve_newton(obj: &Profiled, x0: Vec<f64>, cfg: &OptimizerConfig) -> Result<SolveOutcome> {
    let n = obj.dim();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = obj.value_grad(&x, &mut g);
    if !f.is_finite() {
        return Err(diverged(0, f64::NAN, obj.expand(&x)));
    }
    let mut scratch = vec![0.0; n];
    let mut factor: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> = None;
    let mut stale = false;
    let mut prev_gnorm = f64::INFINITY;
    for it in 0..cfg.max_iters {
        let gnorm = inf_norm(&g);
        if gnorm < cfg.tol {
            return Ok(SolveOutcome {
                x,
                iterations: it,
                converged: true,
            });
        }
        let reuse = stale && gnorm < 0.5 * prev_gnorm;
        if !reuse {
            factor = obj.hessian(&x).cholesky();
            stale = factor.is_some();
        }
        prev_gnorm = gnorm;
        let dir: Vec<f64> = match &factor {
            Some(chol) => chol
                .solve(&DVector::from_column_slice(&g))
                .iter()
                .map(|v| -v)
                .collect(),
            None => g.iter().map(|v| -v).collect(),
        };
        let Some((t, f_new)) = armijo(&x, f, &g, &dir, cfg.step, cfg.backtrack, |y| {
            let v = obj.value_grad(y, &mut scratch);
            (v, inf_norm(&scratch))
        }) else {
            if reuse {
                prev_gnorm = 0.0;
                continue;
            }
            return Ok(SolveOutcome {
                x,
                iterations: it,
                converged: false,
            });
        };
        for i in 0..n {
            x[i] += t * dir[i];
        }
        f = f_new;
        std::mem::swap(&mut g, &mut scratch);
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(diverged(it + 1, f_new, obj.expand(&x)));
        }
    }
    let converged = inf_norm(&g) < cfg.tol;
    Ok(SolveOutcome {
        x,
        iterations: cfg.max_iters,
        converged,
    })
}

fn solve_lbfgs(obj: &Profiled, x0: Vec<f64>, cfg: &OptimizerConfig) -> Result<SolveOutcome> {
    let n = obj.dim();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = obj.value_grad(&x, &mut g);
    if !f.is_finite() {
        return Err(diverged(0, f64::NAN, obj.expand(&x)));
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut scratch = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    for it in 0..cfg.max_iters {
        if inf_norm(&g) < cfg.tol {
            return Ok(SolveOutcome {
                x,
                iterations: it,
                converged: true,
            });
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for j in (0..k).rev() {
            alphas[j] = rho_hist[j] * dot(&s_hist[j], &q);
            for i in 0..n {
                q[i] -= alphas[j] * y_hist[j][i];
            }
        }
        let gamma = if k > 0 {
            dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1])
        } else {
            1.0 / inf_norm(&g).max(1.0)
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for j in 0..k {
            let b = rho_hist[j] * dot(&y_hist[j], &q);
            for i in 0..n {
                q[i] += s_hist[j][i] * (alphas[j] - b);
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut step0 = cfg.step;
        if dot(&dir, &g) >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            step0 = cfg.step / inf_norm(&g).max(1.0);
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }
        let Some((t, f_new)) = armijo(&x, f, &g, &dir, step0, cfg.backtrack, |y| {
            let v = obj.value_grad(y, &mut scratch);
            (v, inf_norm(&scratch))
        }) else {
            return Ok(SolveOutcome {
                x,
                iterations: it,
                converged: false,
            });
        };
        let s: Vec<f64> = dir.iter().map(|d| t * d).collect();
        for i in 0..n {
            x[i] += s[i];
        }
        let f_eval = obj.value_grad(&x, &mut g_new);
        if !f_eval.is_finite() || g_new.iter().any(|v| !v.is_finite()) {
            return Err(diverged(it + 1, f_new, obj.expand(&x)));
        }
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if s_hist.len() == cfg.lbfgs_memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(y);
        }
        std::mem::swap(&mut g, &mut g_new);
        f = f_eval;
    }
    let converged = inf_norm(&g) < cfg.tol;
    Ok(SolveOutcome {
        x,
        iterations: cfg.max_iters,
        converged,
    })
}

impl MapProblem {
    fn profiled(&self, p: &PerturbationDraw) -> Profiled {
        let weights_all = self.group_weights(p);
        let center: Vec<f64> = (0..self.dim)
            .map(|i| self.prior.mu0[i] + p.theta_prime[i] + p.vartheta_prime[i])
            .collect();
        let dense = matches!(self.algebra, PriorAlgebra::Dense { .. });
        let mut local = vec![usize::MAX; self.dim];
        let mut active = Vec::new();
        if dense {
            active = (0..self.dim).collect();
            for (i, l) in local.iter_mut().enumerate() {
                *l = i;
            }
        }
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut weights = Vec::new();
        for (g, &w) in weights_all.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (gc, gv) = self.groups.group(g);
            if gc.is_empty() {
                // softplus(0) constant; no gradient
                continue;
            }
            let start = cols.len();
            for (&c, &v) in gc.iter().zip(gv) {
                let c = c as usize;
                if local[c] == usize::MAX {
                    local[c] = active.len();
                    active.push(c);
                }
                cols.push(local[c] as u32);
                vals.push(v);
            }
            sort_segment(&mut cols[start..], &mut vals[start..]);
            offsets.push(cols.len());
            weights.push(w);
        }
        let lambda2 = self.competence.lambda * self.competence.lambda;
        let curvature = match &self.algebra {
            PriorAlgebra::Diagonal { variance } => ProfiledCurvature::Diagonal(
                active
                    .iter()
                    .map(|&i| 1.0 / (variance[i] + 1.0 / lambda2))
                    .collect(),
            ),
            PriorAlgebra::Dense { curvature, .. } => ProfiledCurvature::Dense(curvature.clone()),
        };
        Profiled {
            beta: self.competence.beta,
            center,
            active,
            curvature,
            offsets,
            cols,
            vals,
            weights,
        }
    }

    fn solve_gradient_descent(
        &self,
        p: &PerturbationDraw,
        cfg: &OptimizerConfig,
    ) -> Result<(Vec<f64>, Vec<f64>, SolveOutcome)> {
        let d = self.dim;
        let weights = self.group_weights(p);
        let eval = |z: &[f64]| self.theta_vartheta_loss(&z[..d], &z[d..], &weights, p);
        let mut z: Vec<f64> = self
            .prior
            .mu0
            .iter()
            .chain(&self.prior.mu0)
            .cloned()
            .collect();
        let (mut f, gt, gv) = eval(&z);
        let mut g: Vec<f64> = gt.into_iter().chain(gv).collect();
        if !f.is_finite() {
            return Err(diverged(0, f64::NAN, z));
        }
        let mut iterations = cfg.max_iters;
        let mut converged = false;
        for it in 0..cfg.max_iters {
            if inf_norm(&g) < cfg.tol {
                iterations = it;
                converged = true;
                break;
            }
            let dir: Vec<f64> = g.iter().map(|v| -v).collect();
            let Some((t, _)) = armijo(&z, f, &g, &dir, cfg.step, cfg.backtrack, |y| {
                let (v, gt, gv) = eval(y);
                (v, inf_norm(&gt).max(inf_norm(&gv)))
            }) else {
                iterations = it;
                break;
            };
            for i in 0..2 * d {
                z[i] += t * dir[i];
            }
            let (fv, gt, gv) = eval(&z);
            if !fv.is_finite() {
                return Err(diverged(it + 1, f, z));
            }
            f = fv;
            g = gt.into_iter().chain(gv).collect();
        }
        if !converged {
            converged = inf_norm(&g) < cfg.tol;
        }
        let (theta, vartheta) = (z[..d].to_vec(), z[d..].to_vec());
        Ok((
            theta,
            vartheta,
            SolveOutcome {
                x: Vec::new(),
                iterations,
                converged,
            },
        ))
    }
}

/// Minimizes the perturbed loss.
pub fn perturbed_map(
    problem: &MapProblem,
    perturbation: &PerturbationDraw,
    cfg: &OptimizerConfig,
) -> Result<MapEstimate> {
    perturbed_map_from(problem, perturbation, cfg, None)
}

/// [`perturbed_map`] started from a full-dimensional `vartheta` guess.
/// The joint gradient-descent method ignores `start`.
pub fn perturbed_map_from(
    problem: &MapProblem,
    perturbation: &PerturbationDraw,
    cfg: &OptimizerConfig,
    start: Option<&[f64]>,
) -> Result<MapEstimate> {
    problem.check_perturbation(perturbation)?;
    cfg.validate()?;
    let (theta, vartheta, outcome) = if cfg.method == OptimizerMethod::GradientDescent {
        problem.solve_gradient_descent(perturbation, cfg)?
    } else {
        let obj = problem.profiled(perturbation);
        let x0: Vec<f64> = match start {
            Some(v) => obj.active.iter().map(|&i| v[i]).collect(),
            None => obj.active.iter().map(|&i| obj.center[i]).collect(),
        };
        let newton = match cfg.method {
            OptimizerMethod::Newton => true,
            OptimizerMethod::Lbfgs => false,
            _ => obj.dim() <= AUTO_NEWTON_MAX_DIM,
        };
        let outcome = if obj.dim() == 0 {
            SolveOutcome {
                x: Vec::new(),
                iterations: 0,
                converged: true,
            }
        } else if newton {
            solve_newton(&obj, x0, cfg)?
        } else {
            solve_lbfgs(&obj, x0, cfg)?
        };
        let vartheta = obj.expand(&outcome.x);
        let u: Vec<f64> = vartheta
            .iter()
            .zip(&perturbation.vartheta_prime)
            .map(|(v, w)| v - w)
            .collect();
        let m: Vec<f64> = problem
            .prior
            .mu0
            .iter()
            .zip(&perturbation.theta_prime)
            .map(|(a, b)| a + b)
            .collect();
        let theta = problem
            .algebra
            .solve_theta(problem.competence.lambda, &u, &m);
        (theta, vartheta, outcome)
    };
    let weights = problem.group_weights(perturbation);
    let (tv_loss, _, _) = problem.theta_vartheta_loss(&theta, &vartheta, &weights, perturbation);
    let eta_hat = problem.eta_map(&perturbation.zeta);
    let final_loss = tv_loss + problem.eta_loss(&perturbation.zeta, &eta_hat);
    let converged = outcome.converged;
    Ok(MapEstimate {
        theta_hat: theta,
        vartheta_hat: vartheta,
        eta_hat,
        final_loss,
        iterations: outcome.iterations,
        converged,
    })
}

/// Unperturbed MAP (`zeta = omega = 1`, zero prior draws).
pub fn map_estimate(problem: &MapProblem, cfg: &OptimizerConfig) -> Result<MapEstimate> {
    let p = PerturbationDraw::identity(problem.num_online(), problem.num_offline(), problem.dim());
    perturbed_map(problem, &p, cfg)
}

/// [`map_estimate`] started from `start`.
pub fn map_estimate_from(
    problem: &MapProblem,
    cfg: &OptimizerConfig,
    start: Option<&[f64]>,
) -> Result<MapEstimate> {
    let p = PerturbationDraw::identity(problem.num_online(), problem.num_offline(), problem.dim());
    perturbed_map_from(problem, &p, cfg, start)
}

/// One approximate posterior draw: fresh perturbations from `seed`, then the
/// perturbed MAP.
pub fn posterior_sample(
    problem: &MapProblem,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<MapEstimate> {
    let mut rng: SimRng = rng_from_seed(seed);
    let p = problem.draw_perturbation(&mut rng);
    perturbed_map(problem, &p, cfg)
}

/// [`posterior_sample`] started from `start`.
pub fn posterior_sample_from(
    problem: &MapProblem,
    cfg: &OptimizerConfig,
    seed: u64,
    start: Option<&[f64]>,
) -> Result<MapEstimate> {
    let mut rng: SimRng = rng_from_seed(seed);
    let p = problem.draw_perturbation(&mut rng);
    perturbed_map_from(problem, &p, cfg, start)
}

/// Random-walk Metropolis over `(theta, vartheta)` targeting the unperturbed
/// loss; returns the `theta` chain after burn-in. Meant for small `d`.
pub fn metropolis_theta_samples(
    problem: &MapProblem,
    num_samples: usize,
    burn_in: usize,
    proposal_scale: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let d = problem.dim();
    if d > 4 {
        return Err(invalid("Metropolis validation sampler supports d <= 4"));
    }
    let p = PerturbationDraw::identity(problem.num_online(), problem.num_offline(), d);
    let weights = problem.group_weights(&p);
    let energy = |z: &[f64]| {
        problem
            .theta_vartheta_loss(&z[..d], &z[d..], &weights, &p)
            .0
    };
    let mut rng = rng_from_seed(seed);
    let mut z: Vec<f64> = problem
        .prior
        .mu0
        .iter()
        .chain(&problem.prior.mu0)
        .cloned()
        .collect();
    let mut e = energy(&z);
    let mut out = Vec::with_capacity(num_samples);
    let mut proposal = vec![0.0; 2 * d];
    for it in 0..burn_in + num_samples {
        for (q, x) in proposal.iter_mut().zip(&z) {
            *q = x + proposal_scale * rng.sample::<f64, _>(StandardNormal);
        }
        let e_new = energy(&proposal);
        if e_new.is_finite() && rng.gen::<f64>().ln() < e - e_new {
            z.copy_from_slice(&proposal);
            e = e_new;
        }
        if it >= burn_in {
            out.push(z[..d].to_vec());
        }
    }
    Ok(out)
}
