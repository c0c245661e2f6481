//! Offline constructions from net visitation counts and the closed-form
//! bound calculators.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::mdp::Policy;
use crate::offline_data::PreferenceDataset;
use crate::rater::RaterInstance;
use crate::seed::{derive_seed, rng_from_seed};

/// Per-step winning, losing and net counts, indexed `[h][s][a]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfflineCounts {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    n: usize,
    w: Vec<i64>,
    l: Vec<i64>,
}

impl OfflineCounts {
    fn idx(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.num_states + s) * self.num_actions + a
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

    /// Number of records counted.
    pub fn num_records(&self) -> usize {
        self.n
    }

    pub fn w(&self, h: usize, s: usize, a: usize) -> i64 {
        self.w[self.idx(h, s, a)]
    }

    pub fn l(&self, h: usize, s: usize, a: usize) -> i64 {
        self.l[self.idx(h, s, a)]
    }

    pub fn c(&self, h: usize, s: usize, a: usize) -> i64 {
        let i = self.idx(h, s, a);
        self.w[i] - self.l[i]
    }

    /// `c_h(s, .)`.
    pub fn net_row(&self, h: usize, s: usize) -> Vec<i64> {
        (0..self.num_actions).map(|a| self.c(h, s, a)).collect()
    }

    /// `U^W_h(s) = {a : c_h(s, a) > 0}`.
    pub fn winning_set(&self, h: usize, s: usize) -> Vec<usize> {
        (0..self.num_actions)
            .filter(|&a| self.c(h, s, a) > 0)
            .collect()
    }

    /// Complement of the winning set.
    pub fn undecided_set(&self, h: usize, s: usize) -> Vec<usize> {
        (0..self.num_actions)
            .filter(|&a| self.c(h, s, a) <= 0)
            .collect()
    }
}

/// Counts `(s, a)` visits at each step of preferred and non-preferred
/// trajectories.
pub fn build_counts(dataset: &PreferenceDataset) -> OfflineCounts {
    let (hz, ns, na) = (
        dataset.horizon(),
        dataset.num_states(),
        dataset.num_actions(),
    );
    let mut counts = OfflineCounts {
        horizon: hz,
        num_states: ns,
        num_actions: na,
        n: dataset.len(),
        w: vec![0; hz * ns * na],
        l: vec![0; hz * ns * na],
    };
    for r in dataset.records() {
        for h in 0..hz {
            let i = counts.idx(h, r.winner().states[h], r.winner().actions[h]);
            counts.w[i] += 1;
            let j = counts.idx(h, r.loser().states[h], r.loser().actions[h]);
            counts.l[j] += 1;
        }
    }
    counts
}

/// Threshold fraction `(1 - gamma) / 2`, or 0.1 without a usable `gamma`.
pub fn default_threshold(gamma: Option<f64>) -> f64 {
    match gamma {
        Some(g) if g.is_finite() && g > 0.0 && g < 1.0 => (1.0 - g) / 2.0,
        _ => 0.1,
    }
}

/// Policy estimate from net counts. States whose net row sums to at least
/// `delta * n` take the best winning action; others draw uniformly from the
/// undecided set with a per-`(h, s)` seed.
pub fn build_pi_hat(counts: &OfflineCounts, n: usize, delta: f64, seed: u64) -> Result<Policy> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("threshold fraction {delta} not in (0, 1)")));
    }
    let (hz, ns, na) = (counts.horizon, counts.num_states, counts.num_actions);
    let threshold = delta * n as f64;
    let mut policy = Policy::constant(hz, ns, na, 0);
    for h in 0..hz {
        for s in 0..ns {
            let row = counts.net_row(h, s);
            let total: i64 = row.iter().sum();
            let winning = counts.winning_set(h, s);
            let action = if total as f64 >= threshold && !winning.is_empty() {
                let mut best = winning[0];
                for &a in &winning[1..] {
                    if row[a] > row[best] {
                        best = a;
                    }
                }
                best
            } else {
                let undecided = counts.undecided_set(h, s);
                let mut rng = rng_from_seed(derive_seed(derive_seed(seed, h as u64), s as u64));
                if undecided.is_empty() {
                    rng.gen_range(0..na)
                } else {
                    undecided[rng.gen_range(0..undecided.len())]
                }
            };
            policy.set_action(h, s, action);
        }
    }
    Ok(policy)
}

/// Inputs to the bound calculators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub beta: f64,
    pub lambda: f64,
    pub n: usize,
    /// Embedding bound `B`.
    pub b: f64,
    pub d: usize,
    pub delta_min: f64,
    pub delta1: f64,
    pub k: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub epsilon: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.lambda > 0.0 && self.b > 0.0) {
            return Err(invalid("beta, lambda and B must be positive"));
        }
        if self.d == 0 || self.num_states == 0 || self.num_actions == 0 || self.horizon == 0 {
            return Err(invalid("d, S, A, H must be positive"));
        }
        if !(self.delta_min >= 0.0) || !(self.epsilon >= 0.0) {
            return Err(invalid("delta_min and epsilon must be nonnegative"));
        }
        if !(self.delta1 > 0.0 && self.delta1 < 1.0 / 3.0) {
            return Err(invalid(format!("delta1 {} not in (0, 1/3)", self.delta1)));
        }
        Ok(())
    }

    /// Smallest `beta` for which the error bound applies.
    pub fn beta_threshold(&self) -> f64 {
        let gap = (self.b * self.lambda * self.lambda - 2.0 * self.delta_min).abs();
        2.0 * (2.0 * (self.d as f64).sqrt()).ln() / gap
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaBound {
    pub value: f64,
    /// Whether `beta` exceeds that threshold.
    pub condition_holds: bool,
}

/// `gamma = exp(-beta B sqrt(2 ln(2 sqrt(d) N)) / lambda - beta Delta_min) + 1/N`.
pub fn gamma_bound(inputs: &BoundInputs) -> Result<GammaBound> {
    if inputs.n <= 2 {
        return Err(invalid("gamma bound needs N > 2"));
    }
    if !(inputs.beta > 0.0 && inputs.lambda > 0.0 && inputs.b > 0.0 && inputs.d > 0) {
        return Err(invalid("beta, lambda, B, d must be positive"));
    }
    let n = inputs.n as f64;
    let root = (2.0 * (2.0 * (inputs.d as f64).sqrt() * n).ln()).sqrt();
    let value = (-inputs.beta * inputs.b * root / inputs.lambda - inputs.beta * inputs.delta_min)
        .exp()
        + 1.0 / n;
    Ok(GammaBound {
        value,
        condition_holds: inputs.beta > inputs.beta_threshold(),
    })
}

/// `delta2 = 2 exp(-N (1 + gamma)^2) + exp(-(N / 4) (1 - gamma)^3)`.
pub fn delta2_bound(gamma: f64, n: usize) -> Result<f64> {
    if n <= 2 {
        return Err(invalid("delta2 needs N > 2"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid(format!("gamma {gamma} not in (0, 1)")));
    }
    let n = n as f64;
    Ok(2.0 * (-n * (1.0 + gamma).powi(2)).exp() + (-(n / 4.0) * (1.0 - gamma).powi(3)).exp())
}

fn bound_parts(inputs: &BoundInputs, delta2: f64) -> Result<(f64, f64)> {
    inputs.validate()?;
    if inputs.k == 0 {
        return Err(invalid("K must be positive"));
    }
    if !(delta2 >= 0.0) {
        return Err(invalid("delta2 must be nonnegative"));
    }
    let (s, a, h, k) = (
        inputs.num_states as f64,
        inputs.num_actions as f64,
        inputs.horizon as f64,
        inputs.k as f64,
    );
    let log_sah = (s * a * h / inputs.delta1).ln();
    let denom = 2.0 * k * (1.0 + log_sah) - log_sah;
    if !(denom > 0.0) {
        return Err(invalid(
            "nonpositive bound denominator: K too small for delta1",
        ));
    }
    let core = delta2 * s * s * a * h.powi(3) * (2.0 * k * s * a / inputs.delta1).ln();
    Ok((core, denom))
}

/// Simple-regret bound of the learner.
pub fn regret_bound(inputs: &BoundInputs, delta2: f64) -> Result<f64> {
    let (core, denom) = bound_parts(inputs, delta2)?;
    Ok((20.0 * core / denom).sqrt())
}

/// Prior-dependent variant with misspecification `epsilon`.
pub fn prior_dependent_bound(inputs: &BoundInputs, delta2: f64) -> Result<f64> {
    let (core, denom) = bound_parts(inputs, delta2)?;
    let (s, a, h) = (
        inputs.num_states as f64,
        inputs.num_actions as f64,
        inputs.horizon as f64,
    );
    Ok(((10.0 * core + 3.0 * s * a * h * h * inputs.epsilon * inputs.epsilon) / denom).sqrt())
}

/// Minimum absolute true-reward gap over the records.
pub fn delta_min(dataset: &PreferenceDataset, theta: &[f64]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(invalid("delta_min of an empty dataset"));
    }
    if theta.len() != dataset.dim() {
        return Err(invalid("theta dimension mismatch"));
    }
    Ok(dataset
        .records()
        .iter()
        .map(|r| (r.tau0.score(theta) - r.tau1.score(theta)).abs())
        .fold(f64::INFINITY, f64::min))
}

/// Fraction of records whose winner has the strictly lower rater score.
pub fn rater_error_frequency(dataset: &PreferenceDataset, rater: &RaterInstance) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let errors = dataset
        .records()
        .iter()
        .filter(|r| rater.score(r.winner()) < rater.score(r.loser()))
        .count();
    errors as f64 / dataset.len() as f64
}
