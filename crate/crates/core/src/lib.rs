//! Preference-based reinforcement learning on tabular MDPs: top-two posterior
//! sampling from trajectory comparisons, a simulated rater, offline
//! estimators, closed-form bounds and baselines.

pub mod bandit;
pub mod baselines;
pub mod environments;
pub mod error;
pub mod mdp;
pub mod offline_data;
pub mod offline_estimator;
pub mod posterior;
pub mod pspl;
pub mod rater;
pub mod seed;

pub use error::{Error, Result};
