//! Preference datasets: generation under a behavioral policy, concatenation
//! and a line-based text format.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{rollout_with, FeatureMap, Policy, RegretEvaluator, TabularMdp, Trajectory};
use crate::rater::RaterInstance;
use crate::seed::rng_from_seed;

/// `(tau0, tau1, Y)`; `Y = 0` means `tau0` was preferred.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    pub tau0: Trajectory,
    pub tau1: Trajectory,
    pub label: u8,
}

impl PreferenceRecord {
    pub fn new(tau0: Trajectory, tau1: Trajectory, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(invalid("label must be 0 or 1"));
        }
        if tau0.horizon() != tau1.horizon() {
            return Err(invalid("trajectories of a record differ in horizon"));
        }
        Ok(Self { tau0, tau1, label })
    }

    pub fn winner(&self) -> &Trajectory {
        if self.label == 0 {
            &self.tau0
        } else {
            &self.tau1
        }
    }

    pub fn loser(&self) -> &Trajectory {
        if self.label == 0 {
            &self.tau1
        } else {
            &self.tau0
        }
    }

    /// `phi(winner) - phi(loser)`.
    pub fn winner_minus_loser(&self) -> Vec<f64> {
        self.winner()
            .embedding
            .iter()
            .zip(&self.loser().embedding)
            .map(|(a, b)| a - b)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetOrigin {
    Offline,
    Online,
    Merged,
}

impl DatasetOrigin {
    fn as_str(self) -> &'static str {
        match self {
            DatasetOrigin::Offline => "offline",
            DatasetOrigin::Online => "online",
            DatasetOrigin::Merged => "merged",
        }
    }
}

/// Ordered preference records over a fixed `(S, A, H, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    dim: usize,
    origin: DatasetOrigin,
    records: Vec<PreferenceRecord>,
}

impl PreferenceDataset {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        dim: usize,
        origin: DatasetOrigin,
    ) -> Self {
        Self {
            num_states,
            num_actions,
            horizon,
            dim,
            origin,
            records: Vec::new(),
        }
    }

    /// Empty dataset shaped like `mdp`.
    pub fn for_mdp(mdp: &TabularMdp, origin: DatasetOrigin) -> Self {
        Self::new(
            mdp.num_states(),
            mdp.num_actions(),
            mdp.horizon(),
            mdp.dim(),
            origin,
        )
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
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn origin(&self) -> DatasetOrigin {
        self.origin
    }
    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }
    pub fn len(&self) -> usize {
        self.records.len()
    }
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn check_trajectory(&self, tau: &Trajectory) -> Result<()> {
        if tau.horizon() != self.horizon || tau.actions.len() != self.horizon {
            return Err(invalid("trajectory horizon does not match the dataset"));
        }
        if tau.embedding.len() != self.dim {
            return Err(invalid(
                "trajectory embedding dimension does not match the dataset",
            ));
        }
        if tau.states.iter().any(|&s| s >= self.num_states)
            || tau.actions.iter().any(|&a| a >= self.num_actions)
        {
            return Err(invalid("state or action index out of range"));
        }
        Ok(())
    }

    pub fn push(&mut self, record: PreferenceRecord) -> Result<()> {
        self.check_trajectory(&record.tau0)?;
        self.check_trajectory(&record.tau1)?;
        self.records.push(record);
        Ok(())
    }

    /// `self ⊕ other`, preserving order.
    pub fn concat(&self, other: &PreferenceDataset) -> Result<PreferenceDataset> {
        if (self.num_states, self.num_actions, self.horizon, self.dim)
            != (
                other.num_states,
                other.num_actions,
                other.horizon,
                other.dim,
            )
        {
            return Err(invalid("cannot concatenate datasets of different shapes"));
        }
        let mut out = self.clone();
        out.origin = DatasetOrigin::Merged;
        out.records.extend(other.records.iter().cloned());
        Ok(out)
    }

    /// Line-based text encoding; see [`load_dataset`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "S={}|A={}|H={}|d={}|origin={}",
            self.num_states,
            self.num_actions,
            self.horizon,
            self.dim,
            self.origin.as_str()
        );
        let join = |xs: &[usize]| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}|{}|{}|{}|{}|{}",
                r.tau0.horizon(),
                join(&r.tau0.states),
                join(&r.tau0.actions),
                join(&r.tau1.states),
                join(&r.tau1.actions),
                r.label
            );
        }
        out
    }

    /// Parses the text format, embedding trajectories with `features`.
    pub fn from_text(text: &str, features: &FeatureMap) -> Result<PreferenceDataset> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let mut fields = [None; 4];
        let mut origin = DatasetOrigin::Offline;
        for part in header.split('|') {
            let (key, value) = part.split_once('=').ok_or(Error::Parse {
                line: 1,
                message: format!("malformed header field '{part}'"),
            })?;
            let slot = match key.trim() {
                "S" => 0,
                "A" => 1,
                "H" => 2,
                "d" => 3,
                "origin" => {
                    origin = match value.trim() {
                        "offline" => DatasetOrigin::Offline,
                        "online" => DatasetOrigin::Online,
                        "merged" => DatasetOrigin::Merged,
                        other => {
                            return Err(Error::Parse {
                                line: 1,
                                message: format!("unknown origin '{other}'"),
                            })
                        }
                    };
                    continue;
                }
                other => {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!("unknown header key '{other}'"),
                    })
                }
            };
            fields[slot] = Some(value.trim().parse::<usize>().map_err(|e| Error::Parse {
                line: 1,
                message: format!("header value for {key}: {e}"),
            })?);
        }
        let [Some(ns), Some(na), Some(horizon), Some(dim)] = fields else {
            return Err(Error::Parse {
                line: 1,
                message: "header must define S, A, H and d".into(),
            });
        };
        if features.dim() != dim {
            return Err(Error::Validation {
                line: 1,
                message: format!(
                    "header d={dim} but feature map has dimension {}",
                    features.dim()
                ),
            });
        }
        let mut dataset = PreferenceDataset::new(ns, na, horizon, dim, origin);
        for (idx, raw) in lines {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = raw.split('|').collect();
            if parts.len() != 6 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected 6 fields, found {}", parts.len()),
                });
            }
            let parse_int = |s: &str| {
                s.trim().parse::<usize>().map_err(|e| Error::Parse {
                    line,
                    message: format!("bad integer '{s}': {e}"),
                })
            };
            let parse_list = |s: &str| -> Result<Vec<usize>> {
                if s.trim().is_empty() {
                    return Ok(Vec::new());
                }
                s.split(',').map(parse_int).collect()
            };
            let h = parse_int(parts[0])?;
            let s0 = parse_list(parts[1])?;
            let a0 = parse_list(parts[2])?;
            let s1 = parse_list(parts[3])?;
            let a1 = parse_list(parts[4])?;
            let label = parse_int(parts[5])?;
            let validation = |message: String| Error::Validation { line, message };
            if label > 1 {
                return Err(validation(format!("label {label} is not 0 or 1")));
            }
            if h != horizon {
                return Err(validation(format!(
                    "record horizon {h} differs from header H={horizon}"
                )));
            }
            for (name, xs) in [
                ("states0", &s0),
                ("actions0", &a0),
                ("states1", &s1),
                ("actions1", &a1),
            ] {
                if xs.len() != h {
                    return Err(validation(format!(
                        "{name} has length {}, expected H={h}",
                        xs.len()
                    )));
                }
            }
            let tau0 =
                Trajectory::new(s0, a0, features, na).map_err(|e| validation(e.to_string()))?;
            let tau1 =
                Trajectory::new(s1, a1, features, na).map_err(|e| validation(e.to_string()))?;
            let record = PreferenceRecord::new(tau0, tau1, label as u8)
                .map_err(|e| validation(e.to_string()))?;
            dataset
                .push(record)
                .map_err(|e| validation(e.to_string()))?;
        }
        Ok(dataset)
    }
}

/// Writes the dataset deterministically.
pub fn save_dataset(dataset: &PreferenceDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dataset.to_text())?;
    Ok(())
}

/// Loads a dataset with one-hot features (`d` must equal `S * A`).
pub fn load_dataset(path: impl AsRef<Path>) -> Result<PreferenceDataset> {
    let text = std::fs::read_to_string(path)?;
    let header = text.lines().next().unwrap_or("");
    let value = |key: &str| {
        header
            .split('|')
            .filter_map(|p| p.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .and_then(|(_, v)| v.trim().parse::<usize>().ok())
    };
    let features = match (value("S"), value("A")) {
        (Some(s), Some(a)) => FeatureMap::one_hot(s, a),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "header must define S and A".into(),
            })
        }
    };
    PreferenceDataset::from_text(&text, &features)
}

/// Loads a dataset using an explicit feature map.
pub fn load_dataset_with_features(
    path: impl AsRef<Path>,
    features: &FeatureMap,
) -> Result<PreferenceDataset> {
    let text = std::fs::read_to_string(path)?;
    PreferenceDataset::from_text(&text, features)
}

/// Policy generating the offline trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BehavioralPolicySpec {
    #[default]
    UniformRandom,
    /// Plays the optimal policy with probability `1 - epsilon`, a uniform
    /// action otherwise.
    EpsilonOptimal { epsilon: f64 },
    /// Deterministic `[H][S]` action table.
    FixedPolicy { table: Vec<usize> },
}

enum Behavior {
    Uniform,
    Epsilon(f64, Policy),
    Fixed(Policy),
}

fn resolve_behavior(mdp: &TabularMdp, spec: &BehavioralPolicySpec) -> Result<Behavior> {
    Ok(match spec {
        BehavioralPolicySpec::UniformRandom => Behavior::Uniform,
        BehavioralPolicySpec::EpsilonOptimal { epsilon } => {
            if !(0.0..=1.0).contains(epsilon) {
                return Err(invalid("epsilon must lie in [0, 1]"));
            }
            Behavior::Epsilon(*epsilon, RegretEvaluator::new(mdp).optimal_policy().clone())
        }
        BehavioralPolicySpec::FixedPolicy { table } => Behavior::Fixed(Policy::new(
            mdp.horizon(),
            mdp.num_states(),
            mdp.num_actions(),
            table.clone(),
        )?),
    })
}

/// Rolls `n` pairs of independent behavioral trajectories and labels each
/// pair with the rater.
pub fn generate_offline(
    mdp: &TabularMdp,
    rater: &RaterInstance,
    behavior: &BehavioralPolicySpec,
    n: usize,
    seed: u64,
) -> Result<PreferenceDataset> {
    let behavior = resolve_behavior(mdp, behavior)?;
    let na = mdp.num_actions();
    let mut rng = rng_from_seed(seed);
    let mut dataset = PreferenceDataset::for_mdp(mdp, DatasetOrigin::Offline);
    dataset.records.reserve(n);
    let mut choose = |h: usize, s: usize, rng: &mut crate::seed::SimRng| match &behavior {
        Behavior::Uniform => rng.gen_range(0..na),
        Behavior::Epsilon(eps, pi) => {
            if rng.gen::<f64>() < *eps {
                rng.gen_range(0..na)
            } else {
                pi.action(h, s)
            }
        }
        Behavior::Fixed(pi) => pi.action(h, s),
    };
    for _ in 0..n {
        let tau0 = rollout_with(mdp, &mut rng, &mut choose);
        let tau1 = rollout_with(mdp, &mut rng, &mut choose);
        let label = rater.sample_preference_with(&tau0, &tau1, &mut rng)?;
        dataset.records.push(PreferenceRecord { tau0, tau1, label });
    }
    Ok(dataset)
}
