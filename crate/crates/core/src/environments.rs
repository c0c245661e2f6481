//! Benchmark MDPs: RiverSwim, a discretized MountainCar and seeded random
//! MDPs.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::{TabularMdp, TransitionKernel};
use crate::seed::rng_from_seed;

pub const RIVERSWIM_LEFT: usize = 0;
pub const RIVERSWIM_RIGHT: usize = 1;

const MC_POS_MIN: f64 = -1.2;
const MC_POS_MAX: f64 = 0.6;
const MC_VEL_MAX: f64 = 0.07;
const MC_GOAL: f64 = 0.5;

/// Continuous updates simulated per discrete MountainCar step.
pub const DEFAULT_MOUNTAINCAR_SUBSTEPS: usize = 10;

/// Declarative environment description, usable from config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvSpec {
    Riverswim {
        #[serde(default = "default_river_states")]
        states: usize,
        #[serde(default = "default_river_horizon")]
        horizon: usize,
    },
    Mountaincar {
        #[serde(default = "default_pos_bins")]
        pos_bins: usize,
        #[serde(default = "default_vel_bins")]
        vel_bins: usize,
        #[serde(default = "default_mc_horizon")]
        horizon: usize,
        #[serde(default = "default_substeps")]
        substeps: usize,
    },
    Random {
        states: usize,
        actions: usize,
        horizon: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_river_states() -> usize {
    6
}
fn default_river_horizon() -> usize {
    20
}
fn default_pos_bins() -> usize {
    12
}
fn default_vel_bins() -> usize {
    10
}
fn default_mc_horizon() -> usize {
    60
}
fn default_substeps() -> usize {
    DEFAULT_MOUNTAINCAR_SUBSTEPS
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::Riverswim {
            states: default_river_states(),
            horizon: default_river_horizon(),
        }
    }
}

impl EnvSpec {
    pub fn build(&self) -> Result<TabularMdp> {
        match *self {
            EnvSpec::Riverswim { states, horizon } => make_riverswim(states, horizon),
            EnvSpec::Mountaincar {
                pos_bins,
                vel_bins,
                horizon,
                substeps,
            } => make_mountaincar_with_substeps(pos_bins, vel_bins, horizon, substeps),
            EnvSpec::Random {
                states,
                actions,
                horizon,
                seed,
            } => make_random_mdp(states, actions, horizon, seed),
        }
    }

    /// Short label used in result files.
    pub fn label(&self) -> String {
        match self {
            EnvSpec::Riverswim { states, .. } => format!("riverswim{states}"),
            EnvSpec::Mountaincar {
                pos_bins, vel_bins, ..
            } => format!("mountaincar{pos_bins}x{vel_bins}"),
            EnvSpec::Random {
                states,
                actions,
                seed,
                ..
            } => format!("random{states}x{actions}s{seed}"),
        }
    }

    pub fn horizon(&self) -> usize {
        match *self {
            EnvSpec::Riverswim { horizon, .. }
            | EnvSpec::Mountaincar { horizon, .. }
            | EnvSpec::Random { horizon, .. } => horizon,
        }
    }
}

/// RiverSwim chain with actions left (0) and right (1).
pub fn make_riverswim(n_states: usize, horizon: usize) -> Result<TabularMdp> {
    if n_states < 2 {
        return Err(invalid("RiverSwim needs at least 2 states"));
    }
    let n = n_states;
    let mut probs = vec![0.0; n * 2 * n];
    let idx = |s: usize, a: usize, t: usize| (s * 2 + a) * n + t;
    for s in 0..n {
        probs[idx(s, RIVERSWIM_LEFT, s.saturating_sub(1))] = 1.0;
        if s == 0 {
            probs[idx(s, RIVERSWIM_RIGHT, 1)] = 0.35;
            probs[idx(s, RIVERSWIM_RIGHT, 0)] = 0.65;
        } else if s == n - 1 {
            probs[idx(s, RIVERSWIM_RIGHT, s)] = 0.6;
            probs[idx(s, RIVERSWIM_RIGHT, s - 1)] = 0.4;
        } else {
            probs[idx(s, RIVERSWIM_RIGHT, s + 1)] = 0.35;
            probs[idx(s, RIVERSWIM_RIGHT, s)] = 0.6;
            probs[idx(s, RIVERSWIM_RIGHT, s - 1)] = 0.05;
        }
    }
    let mut theta = vec![0.0; n * 2];
    theta[RIVERSWIM_LEFT] = 0.005;
    theta[(n - 1) * 2 + RIVERSWIM_RIGHT] = 1.0;
    let mut initial = vec![0.0; n];
    initial[0] = 1.0;
    TabularMdp::new(horizon, initial, TransitionKernel::new(n, 2, probs)?, theta)
}

/// Discretized MountainCar with the default number of sub-steps.
pub fn make_mountaincar(pos_bins: usize, vel_bins: usize, horizon: usize) -> Result<TabularMdp> {
    make_mountaincar_with_substeps(pos_bins, vel_bins, horizon, DEFAULT_MOUNTAINCAR_SUBSTEPS)
}

/// Grid layout of the discretized MountainCar.
#[derive(Debug, Clone, Copy)]
pub struct MountainCarGrid {
    pub pos_bins: usize,
    pub vel_bins: usize,
}

impl MountainCarGrid {
    fn pos_width(&self) -> f64 {
        (MC_POS_MAX - MC_POS_MIN) / self.pos_bins as f64
    }

    fn vel_width(&self) -> f64 {
        2.0 * MC_VEL_MAX / self.vel_bins as f64
    }

    pub fn state(&self, pos_bin: usize, vel_bin: usize) -> usize {
        pos_bin * self.vel_bins + vel_bin
    }

    pub fn center(&self, state: usize) -> (f64, f64) {
        let (p, v) = (state / self.vel_bins, state % self.vel_bins);
        (
            MC_POS_MIN + (p as f64 + 0.5) * self.pos_width(),
            -MC_VEL_MAX + (v as f64 + 0.5) * self.vel_width(),
        )
    }

    /// Bin containing `(x, v)`; values on a boundary go to the upper bin.
    pub fn locate(&self, x: f64, v: f64) -> usize {
        let p = ((x - MC_POS_MIN) / self.pos_width()).floor();
        let q = ((v + MC_VEL_MAX) / self.vel_width()).floor();
        let p = (p.max(0.0) as usize).min(self.pos_bins - 1);
        let q = (q.max(0.0) as usize).min(self.vel_bins - 1);
        self.state(p, q)
    }

    pub fn is_goal_bin(&self, pos_bin: usize) -> bool {
        MC_POS_MIN + (pos_bin as f64 + 1.0) * self.pos_width() > MC_GOAL
    }
}

/// One step of the classic continuous dynamics.
pub fn mountaincar_step(x: f64, v: f64, action: usize) -> (f64, f64) {
    let mut v = v + 0.001 * (action as f64 - 1.0) - 0.0025 * (3.0 * x).cos();
    v = v.clamp(-MC_VEL_MAX, MC_VEL_MAX);
    let mut x = x + v;
    x = x.clamp(MC_POS_MIN, MC_POS_MAX);
    if x <= MC_POS_MIN && v < 0.0 {
        v = 0.0;
    }
    (x, v)
}

/// Discretized MountainCar: each discrete step applies `substeps` continuous
/// updates from the bin center and maps the result to the containing bin.
/// Goal-bin states are absorbing.
pub fn make_mountaincar_with_substeps(
    pos_bins: usize,
    vel_bins: usize,
    horizon: usize,
    substeps: usize,
) -> Result<TabularMdp> {
    if pos_bins < 2 || vel_bins < 2 {
        return Err(invalid("MountainCar needs at least 2 bins per axis"));
    }
    if substeps == 0 {
        return Err(invalid("MountainCar needs at least one sub-step"));
    }
    let grid = MountainCarGrid { pos_bins, vel_bins };
    let ns = pos_bins * vel_bins;
    let na = 3;
    let mut probs = vec![0.0; ns * na * ns];
    let mut theta = vec![0.0; ns * na];
    for s in 0..ns {
        let goal = grid.is_goal_bin(s / vel_bins);
        for a in 0..na {
            let next = if goal {
                s
            } else {
                let (mut x, mut v) = grid.center(s);
                for _ in 0..substeps {
                    (x, v) = mountaincar_step(x, v, a);
                }
                grid.locate(x, v)
            };
            probs[(s * na + a) * ns + next] = 1.0;
            if goal {
                theta[s * na + a] = 1.0;
            }
        }
    }
    let mut initial = vec![0.0; ns];
    initial[grid.locate(-0.5, 0.0)] = 1.0;
    TabularMdp::new(
        horizon,
        initial,
        TransitionKernel::new(ns, na, probs)?,
        theta,
    )
}

/// Random MDP with Dirichlet(1) transition rows, uniform rewards in [0, 1]
/// and a uniform initial distribution.
pub fn make_random_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    seed: u64,
) -> Result<TabularMdp> {
    if num_states == 0 || num_actions == 0 || horizon == 0 {
        return Err(invalid("S, A and H must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let mut probs = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        let row: Vec<f64> = (0..num_states).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = row.iter().sum();
        probs.extend(row.iter().map(|x: &f64| x / total));
    }
    let theta: Vec<f64> = (0..num_states * num_actions)
        .map(|_| rng.gen::<f64>())
        .collect();
    let initial = vec![1.0 / num_states as f64; num_states];
    TabularMdp::new(
        horizon,
        initial,
        TransitionKernel::new(num_states, num_actions, probs)?,
        theta,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{backward_induction, occupancy, Policy};

    #[test]
    fn riverswim_structure() {
        let mdp = make_riverswim(6, 20).unwrap();
        mdp.transitions().validate(1e-12).unwrap();
        let nonzero: Vec<f64> = mdp.theta().iter().copied().filter(|t| *t != 0.0).collect();
        assert_eq!(nonzero, vec![0.005, 1.0]);
        assert!(make_riverswim(1, 5).is_err());
    }

    #[test]
    fn riverswim_optimal_policy_swims_right_early() {
        let mdp = make_riverswim(6, 20).unwrap();
        let (_, pi) = backward_induction(&mdp, &mdp.reward_table(), mdp.transitions()).unwrap();
        for s in 0..6 {
            assert_eq!(pi.action(0, s), RIVERSWIM_RIGHT, "state {s}");
        }
        // With one step left at the leftmost state, only left pays.
        assert_eq!(pi.action(19, 0), RIVERSWIM_LEFT);
    }

    #[test]
    fn riverswim_right_policy_reaches_every_state() {
        let mdp = make_riverswim(6, 6).unwrap();
        let occ = occupancy(&mdp, &Policy::constant(6, 6, 2, RIVERSWIM_RIGHT)).unwrap();
        for s in 0..6 {
            assert!((0..6).any(|h| occ.state(h, s) > 0.0));
        }
    }

    #[test]
    fn mountaincar_is_deterministic_with_absorbing_goal() {
        let mdp = make_mountaincar(12, 10, 60).unwrap();
        let grid = MountainCarGrid {
            pos_bins: 12,
            vel_bins: 10,
        };
        let kernel = mdp.transitions();
        for s in 0..120 {
            for a in 0..3 {
                let row = kernel.row(s, a);
                assert_eq!(row.iter().filter(|p| **p == 1.0).count(), 1);
                if grid.is_goal_bin(s / 10) {
                    assert_eq!(row[s], 1.0);
                }
            }
        }
        let goal_states = (0..120).filter(|s| grid.is_goal_bin(s / 10)).count();
        assert_eq!(goal_states, 10);
    }

    #[test]
    fn mountaincar_goal_reachable_from_start() {
        let mdp = make_mountaincar(12, 10, 60).unwrap();
        let (values, _) = backward_induction(&mdp, &mdp.reward_table(), mdp.transitions()).unwrap();
        assert!(values.initial_value(mdp.initial()) >= 1.0);
    }

    #[test]
    fn mountaincar_start_bin() {
        let grid = MountainCarGrid {
            pos_bins: 12,
            vel_bins: 10,
        };
        assert_eq!(grid.locate(-0.5, 0.0), grid.state(4, 5));
    }

    #[test]
    fn random_mdp_is_seeded() {
        let a = make_random_mdp(3, 2, 2, 7).unwrap();
        let b = make_random_mdp(3, 2, 2, 7).unwrap();
        let c = make_random_mdp(3, 2, 2, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.transitions().validate(1e-12).unwrap();
    }

    #[test]
    fn env_spec_builds_and_labels() {
        let spec = EnvSpec::default();
        assert_eq!(spec.label(), "riverswim6");
        assert_eq!(spec.build().unwrap().horizon(), 20);
        let mc = EnvSpec::Mountaincar {
            pos_bins: 12,
            vel_bins: 10,
            horizon: 60,
            substeps: DEFAULT_MOUNTAINCAR_SUBSTEPS,
        };
        assert_eq!(mc.label(), "mountaincar12x10");
        assert_eq!(mc.build().unwrap().dim(), 360);
    }
}
