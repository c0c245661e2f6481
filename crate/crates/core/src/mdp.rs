//! Tabular finite-horizon MDPs: exact planning, occupancy measures, rollouts
//! and simple-regret evaluation.
//!
//! Steps are indexed `0..H` internally. Value tables carry an extra terminal
//! row `V[H] = 0`.

use rand::Rng;

use crate::error::{invalid, Result};

const ROW_TOL: f64 = 1e-9;

/// Maps a state-action pair to a feature vector; trajectories embed as the
/// sum of their per-step features.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// Indicator of the flat index `s * A + a`, so `d = S * A`.
    OneHot {
        num_states: usize,
        num_actions: usize,
    },
    /// Arbitrary feature rows, one per flat `(s, a)` index.
    Table { dim: usize, rows: Vec<Vec<f64>> },
}

impl FeatureMap {
    pub fn one_hot(num_states: usize, num_actions: usize) -> Self {
        FeatureMap::OneHot {
            num_states,
            num_actions,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::OneHot {
                num_states,
                num_actions,
            } => num_states * num_actions,
            FeatureMap::Table { dim, .. } => *dim,
        }
    }

    fn num_actions(&self) -> Option<usize> {
        match self {
            FeatureMap::OneHot { num_actions, .. } => Some(*num_actions),
            FeatureMap::Table { .. } => None,
        }
    }

    /// Adds `scale * phi(s, a)` into `out`, where `flat = s * A + a`.
    pub fn accumulate(&self, flat: usize, scale: f64, out: &mut [f64]) {
        match self {
            FeatureMap::OneHot { .. } => out[flat] += scale,
            FeatureMap::Table { rows, .. } => {
                for (o, x) in out.iter_mut().zip(&rows[flat]) {
                    *o += scale * x;
                }
            }
        }
    }

    /// Per-(s, a) reward `<phi(s, a), theta>` as a flat `S * A` table.
    pub fn reward_table(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::OneHot { .. } => theta.to_vec(),
            FeatureMap::Table { rows, .. } => rows
                .iter()
                .map(|r| r.iter().zip(theta).map(|(a, b)| a * b).sum())
                .collect(),
        }
    }

    /// Bound `B` on the l1 norm of any length-`horizon` trajectory embedding.
    pub fn embedding_bound(&self, horizon: usize) -> f64 {
        match self {
            FeatureMap::OneHot { .. } => horizon as f64,
            FeatureMap::Table { rows, .. } => {
                let max_row = rows
                    .iter()
                    .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
                    .fold(0.0, f64::max);
                horizon as f64 * max_row
            }
        }
    }

    pub fn embed(&self, num_actions: usize, states: &[usize], actions: &[usize]) -> Vec<f64> {
        debug_assert!(self.num_actions().map_or(true, |a| a == num_actions));
        let mut out = vec![0.0; self.dim()];
        for (&s, &a) in states.iter().zip(actions) {
            self.accumulate(s * num_actions + a, 1.0, &mut out);
        }
        out
    }
}

/// Transition probabilities `P(s' | s, a)` stored flat as `[S][A][S]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl TransitionKernel {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        let kernel = Self::new_unchecked(num_states, num_actions, probs)?;
        kernel.validate(ROW_TOL)?;
        Ok(kernel)
    }

    /// Builds a kernel checking only the shape; rows are not validated.
    pub fn new_unchecked(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != num_states * num_actions * num_states {
            return Err(invalid(format!(
                "transition table has {} entries, expected {}",
                probs.len(),
                num_states * num_actions * num_states
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.probs[start..start + self.num_states]
    }

    pub fn row_mut(&mut self, s: usize, a: usize) -> &mut [f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &mut self.probs[start..start + self.num_states]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Checks every row is a probability vector within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let row = self.row(s, a);
                if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(invalid(format!(
                        "transition row ({s}, {a}) has a negative or non-finite entry"
                    )));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > tol {
                    return Err(invalid(format!(
                        "transition row ({s}, {a}) sums to {total}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A finite-horizon tabular MDP together with its true reward parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    initial: Vec<f64>,
    transitions: TransitionKernel,
    theta: Vec<f64>,
    features: FeatureMap,
}

impl TabularMdp {
    /// One-hot features, `theta` indexed by `s * A + a`.
    pub fn new(
        horizon: usize,
        initial: Vec<f64>,
        transitions: TransitionKernel,
        theta: Vec<f64>,
    ) -> Result<Self> {
        let features = FeatureMap::one_hot(transitions.num_states(), transitions.num_actions());
        Self::with_features(horizon, initial, transitions, theta, features)
    }

    pub fn with_features(
        horizon: usize,
        initial: Vec<f64>,
        transitions: TransitionKernel,
        theta: Vec<f64>,
        features: FeatureMap,
    ) -> Result<Self> {
        let num_states = transitions.num_states();
        let num_actions = transitions.num_actions();
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(invalid("S, A and H must be positive"));
        }
        if initial.len() != num_states {
            return Err(invalid("initial distribution has wrong length"));
        }
        if initial.iter().any(|p| !(*p >= 0.0)) || (initial.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(invalid("initial distribution is not a probability vector"));
        }
        transitions.validate(1e-12)?;
        if let FeatureMap::Table { rows, dim } = &features {
            if rows.len() != num_states * num_actions || rows.iter().any(|r| r.len() != *dim) {
                return Err(invalid("feature table shape does not match S * A x d"));
            }
        }
        if theta.len() != features.dim() {
            return Err(invalid(format!(
                "theta has dimension {}, features have {}",
                theta.len(),
                features.dim()
            )));
        }
        if theta.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(invalid("true reward parameters must lie in [0, 1]"));
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            initial,
            transitions,
            theta,
            features,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn initial(&self) -> &[f64] {
        &self.initial
    }
    pub fn transitions(&self) -> &TransitionKernel {
        &self.transitions
    }
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    pub fn features(&self) -> &FeatureMap {
        &self.features
    }
    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    /// True per-(s, a) rewards.
    pub fn reward_table(&self) -> Vec<f64> {
        self.features.reward_table(&self.theta)
    }

    pub fn embed(&self, states: &[usize], actions: &[usize]) -> Vec<f64> {
        self.features.embed(self.num_actions, states, actions)
    }
}

/// A length-H sequence of visited states and chosen actions plus its cached
/// embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub embedding: Vec<f64>,
}

impl Trajectory {
    pub fn new(
        states: Vec<usize>,
        actions: Vec<usize>,
        features: &FeatureMap,
        num_actions: usize,
    ) -> Result<Self> {
        if states.len() != actions.len() {
            return Err(invalid("trajectory states and actions differ in length"));
        }
        let embedding = features.embed(num_actions, &states, &actions);
        Ok(Self {
            states,
            actions,
            embedding,
        })
    }

    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    /// `<phi(tau), theta>`.
    pub fn score(&self, theta: &[f64]) -> f64 {
        self.embedding.iter().zip(theta).map(|(a, b)| a * b).sum()
    }
}

/// Deterministic Markov policy, one action per `(h, s)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    table: Vec<usize>,
}

impl Policy {
    pub fn new(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        table: Vec<usize>,
    ) -> Result<Self> {
        if table.len() != horizon * num_states {
            return Err(invalid("policy table has wrong size"));
        }
        if table.iter().any(|&a| a >= num_actions) {
            return Err(invalid("policy action out of range"));
        }
        Ok(Self {
            horizon,
            num_states,
            num_actions,
            table,
        })
    }

    pub fn constant(horizon: usize, num_states: usize, num_actions: usize, action: usize) -> Self {
        assert!(action < num_actions);
        Self {
            horizon,
            num_states,
            num_actions,
            table: vec![action; horizon * num_states],
        }
    }

    pub fn action(&self, h: usize, s: usize) -> usize {
        self.table[h * self.num_states + s]
    }

    pub fn set_action(&mut self, h: usize, s: usize, a: usize) {
        assert!(a < self.num_actions);
        self.table[h * self.num_states + s] = a;
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
    pub fn table(&self) -> &[usize] {
        &self.table
    }

    fn check_against(&self, mdp: &TabularMdp) -> Result<()> {
        if self.horizon != mdp.horizon
            || self.num_states != mdp.num_states
            || self.num_actions != mdp.num_actions
        {
            return Err(invalid("policy shape does not match the MDP"));
        }
        Ok(())
    }
}

/// Q and V tables from backward induction.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    q: Vec<f64>,
    v: Vec<f64>,
}

impl ValueTables {
    pub fn q(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q[(h * self.num_states + s) * self.num_actions + a]
    }

    /// `v(h, s)` for `h` in `0..=H`; `v(H, s) = 0`.
    pub fn v(&self, h: usize, s: usize) -> f64 {
        self.v[h * self.num_states + s]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Expected return from the initial distribution.
    pub fn initial_value(&self, initial: &[f64]) -> f64 {
        initial
            .iter()
            .enumerate()
            .map(|(s, p)| p * self.v(0, s))
            .sum()
    }
}

/// Exact finite-horizon dynamic programming with greedy action selection.
/// Ties go to the lowest action index.
pub fn backward_induction(
    mdp: &TabularMdp,
    reward: &[f64],
    transitions: &TransitionKernel,
) -> Result<(ValueTables, Policy)> {
    let (ns, na, horizon) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    if reward.len() != ns * na {
        return Err(invalid(format!(
            "reward has dimension {}, expected S * A = {}",
            reward.len(),
            ns * na
        )));
    }
    if transitions.num_states() != ns || transitions.num_actions() != na {
        return Err(invalid("transition kernel shape does not match the MDP"));
    }
    transitions.validate(ROW_TOL)?;
    Ok(plan_unchecked(ns, na, horizon, reward, transitions))
}

pub(crate) fn plan_unchecked(
    ns: usize,
    na: usize,
    horizon: usize,
    reward: &[f64],
    transitions: &TransitionKernel,
) -> (ValueTables, Policy) {
    let mut q = vec![0.0; horizon * ns * na];
    let mut v = vec![0.0; (horizon + 1) * ns];
    let mut table = vec![0usize; horizon * ns];
    for h in (0..horizon).rev() {
        let (head, tail) = v.split_at_mut((h + 1) * ns);
        let next = &tail[..ns];
        let current = &mut head[h * ns..];
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..na {
                let row = transitions.row(s, a);
                let mut cont = 0.0;
                for (p, vn) in row.iter().zip(next) {
                    if *p != 0.0 {
                        cont += p * vn;
                    }
                }
                let value = reward[s * na + a] + cont;
                q[(h * ns + s) * na + a] = value;
                if value > best {
                    best = value;
                    best_a = a;
                }
            }
            current[s] = best;
            table[h * ns + s] = best_a;
        }
    }
    (
        ValueTables {
            horizon,
            num_states: ns,
            num_actions: na,
            q,
            v,
        },
        Policy {
            horizon,
            num_states: ns,
            num_actions: na,
            table,
        },
    )
}

/// State and state-action visitation probabilities per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    state: Vec<f64>,
    state_action: Vec<f64>,
}

impl Occupancy {
    pub fn state(&self, h: usize, s: usize) -> f64 {
        self.state[h * self.num_states + s]
    }

    pub fn state_action(&self, h: usize, s: usize, a: usize) -> f64 {
        self.state_action[(h * self.num_states + s) * self.num_actions + a]
    }

    /// Distribution over states at step `h`.
    pub fn step(&self, h: usize) -> &[f64] {
        &self.state[h * self.num_states..(h + 1) * self.num_states]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `sum_h sum_{s,a} p_h(s, a) * reward[s * A + a]`.
    pub fn value(&self, reward: &[f64]) -> f64 {
        let stride = self.num_states * self.num_actions;
        (0..self.horizon)
            .map(|h| {
                self.state_action[h * stride..(h + 1) * stride]
                    .iter()
                    .zip(reward)
                    .map(|(p, r)| p * r)
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Forward recursion `p_1 = rho`, `p_{h+1}(s') = sum_s p_h(s) P(s' | s, pi_h(s))`.
pub fn occupancy(mdp: &TabularMdp, policy: &Policy) -> Result<Occupancy> {
    policy.check_against(mdp)?;
    Ok(occupancy_under(mdp, mdp.transitions(), policy))
}

pub(crate) fn occupancy_under(
    mdp: &TabularMdp,
    transitions: &TransitionKernel,
    policy: &Policy,
) -> Occupancy {
    let (ns, na, horizon) = (mdp.num_states, mdp.num_actions, mdp.horizon);
    let mut state = vec![0.0; horizon * ns];
    let mut state_action = vec![0.0; horizon * ns * na];
    state[..ns].copy_from_slice(&mdp.initial);
    for h in 0..horizon {
        for s in 0..ns {
            let p = state[h * ns + s];
            let a = policy.action(h, s);
            state_action[(h * ns + s) * na + a] = p;
            if h + 1 < horizon && p != 0.0 {
                let row = transitions.row(s, a);
                for (next, q) in row.iter().enumerate() {
                    if *q != 0.0 {
                        state[(h + 1) * ns + next] += p * q;
                    }
                }
            }
        }
    }
    Occupancy {
        horizon,
        num_states: ns,
        num_actions: na,
        state,
        state_action,
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Rolls out one episode choosing actions with `choose(h, s, rng)`.
pub fn rollout_with<R, F>(mdp: &TabularMdp, rng: &mut R, mut choose: F) -> Trajectory
where
    R: Rng + ?Sized,
    F: FnMut(usize, usize, &mut R) -> usize,
{
    let horizon = mdp.horizon;
    let mut states = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    let mut s = sample_index(&mdp.initial, rng);
    for h in 0..horizon {
        let a = choose(h, s, rng);
        states.push(s);
        actions.push(a);
        if h + 1 < horizon {
            s = sample_index(mdp.transitions.row(s, a), rng);
        }
    }
    let embedding = mdp.embed(&states, &actions);
    Trajectory {
        states,
        actions,
        embedding,
    }
}

/// Samples `s_1 ~ rho`, `a_h = pi_h(s_h)`, `s_{h+1} ~ P(. | s_h, a_h)`.
pub fn rollout<R: Rng + ?Sized>(mdp: &TabularMdp, policy: &Policy, rng: &mut R) -> Trajectory {
    rollout_with(mdp, rng, |h, s, _| policy.action(h, s))
}

/// Expected true return of `policy`.
pub fn expected_return(mdp: &TabularMdp, policy: &Policy) -> Result<f64> {
    Ok(occupancy(mdp, policy)?.value(&mdp.reward_table()))
}

/// Caches the optimal policy and value of an MDP so repeated regret
/// evaluations cost one forward pass each.
#[derive(Debug, Clone)]
pub struct RegretEvaluator {
    reward: Vec<f64>,
    optimal_policy: Policy,
    optimal_value: f64,
}

impl RegretEvaluator {
    pub fn new(mdp: &TabularMdp) -> Self {
        let reward = mdp.reward_table();
        let (_, optimal_policy) = plan_unchecked(
            mdp.num_states,
            mdp.num_actions,
            mdp.horizon,
            &reward,
            &mdp.transitions,
        );
        let optimal_value = occupancy_under(mdp, &mdp.transitions, &optimal_policy).value(&reward);
        Self {
            reward,
            optimal_policy,
            optimal_value,
        }
    }

    pub fn optimal_policy(&self) -> &Policy {
        &self.optimal_policy
    }

    pub fn optimal_value(&self) -> f64 {
        self.optimal_value
    }

    pub fn regret(&self, mdp: &TabularMdp, policy: &Policy) -> Result<f64> {
        let occ = occupancy(mdp, policy)?;
        Ok(self.optimal_value - occ.value(&self.reward))
    }
}

/// `<occupancy(pi*) - occupancy(pi), r_theta>` for the true parameters.
pub fn simple_regret(mdp: &TabularMdp, policy: &Policy) -> Result<f64> {
    RegretEvaluator::new(mdp).regret(mdp, policy)
}
