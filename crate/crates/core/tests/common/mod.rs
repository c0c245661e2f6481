//! Brute-force oracles shared by integration and acceptance tests.
#![allow(dead_code)]

use pspl_core::mdp::{rollout, Policy, TabularMdp};
use pspl_core::seed::rng_from_seed;

/// Expected return of an `[H][S]` action table by forward propagation of the
/// state distribution.
pub fn table_value(mdp: &TabularMdp, table: &[usize]) -> f64 {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let theta = mdp.theta();
    let mut dist = mdp.initial().to_vec();
    let mut total = 0.0;
    for h in 0..mdp.horizon() {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            let a = table[h * ns + s];
            total += dist[s] * theta[s * na + a];
            for (s2, p) in mdp.transitions().row(s, a).iter().enumerate() {
                next[s2] += dist[s] * p;
            }
        }
        dist = next;
    }
    total
}

/// Best expected return over every deterministic Markov policy.
pub fn enumerate_optimum(mdp: &TabularMdp) -> f64 {
    let cells = mdp.horizon() * mdp.num_states();
    let na = mdp.num_actions();
    let mut table = vec![0usize; cells];
    let mut best = f64::NEG_INFINITY;
    loop {
        best = best.max(table_value(mdp, &table));
        let mut i = 0;
        loop {
            if i == cells {
                return best;
            }
            table[i] += 1;
            if table[i] < na {
                break;
            }
            table[i] = 0;
            i += 1;
        }
    }
}

/// Empirical `(h, s)` visit frequencies from `n` rollouts.
pub fn mc_state_frequencies(mdp: &TabularMdp, policy: &Policy, n: usize, seed: u64) -> Vec<f64> {
    let ns = mdp.num_states();
    let mut counts = vec![0usize; mdp.horizon() * ns];
    let mut rng = rng_from_seed(seed);
    for _ in 0..n {
        let tau = rollout(mdp, policy, &mut rng);
        for (h, s) in tau.states.iter().enumerate() {
            counts[h * ns + s] += 1;
        }
    }
    counts.into_iter().map(|c| c as f64 / n as f64).collect()
}

/// Shapes `(S, A, H)` with `S * A * H <= 12`, `A >= 2`.
pub fn small_shapes() -> Vec<(usize, usize, usize)> {
    let mut v = Vec::new();
    for s in 1..=6 {
        for a in 2..=6 {
            for h in 1..=6 {
                if s * a * h <= 12 {
                    v.push((s, a, h));
                }
            }
        }
    }
    v
}
