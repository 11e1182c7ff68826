//! Batch inverse reinforcement learning on tabular MDPs.
//!
//! The crate recovers an expert's reward from logged `(s, a, s')` transitions
//! with an adversarial discriminator whose reward term is an additive model
//! (GAM) over next-state features, and scores the recovered reward against a
//! known ground truth on a discrete sepsis simulator.
//!
//! Layout:
//! - [`mdp`]: tabular MDPs, policies, exact planners, trajectory sampling.
//! - [`sepsis`]: the factored sepsis environment and its ground-truth rewards.
//! - [`reward_models`]: GAM / linear / MLP reward families and Adam.
//! - [`estimation`]: behavior policy, IPTW weights, transition model fitting.
//! - [`adversarial`]: discriminator and the alternating training loop.
//! - [`generator`]: exact soft-VI generator and a tabular soft-Q learner.
//! - [`baselines`]: max-margin apprenticeship learning and behavior cloning.
//! - [`evaluation`]: shape graphs, reward scaling, distances, accuracy.
//! - [`experiment`]: configuration and the end-to-end pipeline used by the CLI.

pub mod adversarial;
pub mod baselines;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod experiment;
pub mod generator;
pub mod mdp;
pub mod reward_models;
pub mod rng;
pub mod sepsis;

pub use error::{Error, Result};
pub use mdp::{
    evaluate_policy, sample_trajectories, soft_value_iteration, value_iteration, NextStateReward,
    RewardFunction, StateReward, TabularMdp, TabularPolicy, Trajectory, Transition,
};
