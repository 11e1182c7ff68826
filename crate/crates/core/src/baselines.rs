//! Max-margin apprenticeship learning by the projection method, its
//! expected-next-state variant, and behavior cloning.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::fit_behavior_policy;
use crate::mdp::{state_distributions, value_iteration, NextStateReward, StateReward, TabularMdp, TabularPolicy, Trajectory};
use crate::reward_models::FeatureMap;
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MmaMode {
    /// Features of the current state.
    #[default]
    CurrentState,
    /// Expected features of the next state under the transition model.
    ExpectedNextState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmaConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub mode: MmaMode,
}

impl Default for MmaConfig {
    fn default() -> Self {
        Self { epsilon: 0.05, max_iters: 50, mode: MmaMode::CurrentState }
    }
}

/// Per-state feature vectors with any noise coordinate fixed at the middle of
/// its range (its mean under uniform draws).
pub fn state_feature_table(features: &dyn FeatureMap) -> Vec<Vec<f64>> {
    let noise = features
        .noise_index()
        .map(|j| {
            let v = features.reward_specs()[j].bin_values();
            0.5 * (v[0] + v[v.len() - 1])
        })
        .unwrap_or(0.0);
    let d = features.reward_specs().len();
    (0..features.num_states())
        .map(|s| {
            let mut out = vec![0.0; d];
            features.reward_features(s, noise, &mut out);
            out
        })
        .collect()
}

/// `E[φ(s') | s, a]` for every pair.
fn expected_next_features(mdp: &TabularMdp, phi: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = phi[0].len();
    let na = mdp.num_actions();
    (0..mdp.num_states() * na)
        .map(|idx| {
            let mut out = vec![0.0; d];
            for &(n, p) in mdp.row(idx / na, idx % na) {
                for (o, x) in out.iter_mut().zip(&phi[n]) {
                    *o += p * x;
                }
            }
            out
        })
        .collect()
}

/// Discounted expected feature sums over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExpectations(pub Vec<f64>);

impl FeatureExpectations {
    pub fn distance(&self, other: &FeatureExpectations) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

/// Exact `Σ_{t<H} γ^t E[φ]` by forward propagation of state distributions.
pub fn feature_expectations(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    phi: &[Vec<f64>],
    mode: MmaMode,
) -> FeatureExpectations {
    let d = phi.first().map_or(0, |x| x.len());
    let na = mdp.num_actions();
    let next = match mode {
        MmaMode::ExpectedNextState => Some(expected_next_features(mdp, phi)),
        MmaMode::CurrentState => None,
    };
    let mut mu = vec![0.0; d];
    let mut discount = 1.0;
    for dist in state_distributions(mdp, policy).iter().take(mdp.horizon()) {
        for (s, &mass) in dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            match &next {
                None => {
                    for (m, x) in mu.iter_mut().zip(&phi[s]) {
                        *m += discount * mass * x;
                    }
                }
                Some(next) => {
                    for (a, &pa) in policy.row(s).iter().enumerate() {
                        for (m, x) in mu.iter_mut().zip(&next[s * na + a]) {
                            *m += discount * mass * pa * x;
                        }
                    }
                }
            }
        }
        discount *= mdp.discount();
    }
    FeatureExpectations(mu)
}

/// Empirical expert feature expectations. Trajectories that end early are
/// padded with their final (terminal) state up to the horizon, matching the
/// self-loop accounting of [`feature_expectations`].
pub fn expert_feature_expectations(
    mdp: &TabularMdp,
    trajectories: &[Trajectory],
    phi: &[Vec<f64>],
    mode: MmaMode,
) -> Result<FeatureExpectations> {
    let d = phi.first().map_or(0, |x| x.len());
    let na = mdp.num_actions();
    let next = match mode {
        MmaMode::ExpectedNextState => Some(expected_next_features(mdp, phi)),
        MmaMode::CurrentState => None,
    };
    let mut mu = vec![0.0; d];
    let mut n = 0usize;
    for traj in trajectories.iter().filter(|t| !t.is_empty()) {
        n += 1;
        let mut discount = 1.0;
        for t in 0..mdp.horizon() {
            let x: &[f64] = match (traj.steps.get(t), &next) {
                (Some(step), None) => &phi[step.state],
                (Some(step), Some(next)) => &next[step.state * na + step.action],
                (None, None) => &phi[traj.steps[traj.len() - 1].next_state],
                (None, Some(next)) => {
                    let last = traj.steps[traj.len() - 1].next_state;
                    // A terminal state self-loops under every action.
                    &next[last * na]
                }
            };
            for (m, v) in mu.iter_mut().zip(x) {
                *m += discount * v;
            }
            discount *= mdp.discount();
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput("expert batch has no transitions"));
    }
    Ok(FeatureExpectations(mu.into_iter().map(|m| m / n as f64).collect()))
}

#[derive(Debug, Clone)]
pub struct MmaResult {
    /// Reward weights of the last iteration, `μ_E − μ̄`.
    pub weights: Vec<f64>,
    /// Candidate whose feature expectations are closest to the expert's.
    pub policy: TabularPolicy,
    /// `‖μ_E − μ̄_i‖` per iteration, starting with the initial candidate.
    pub margins: Vec<f64>,
    /// False when `max_iters` ran out before the margin reached `epsilon`.
    pub converged: bool,
}

impl MmaResult {
    pub fn write_margins<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iter,margin")?;
        for (i, m) in self.margins.iter().enumerate() {
            writeln!(out, "{i},{m}")?;
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn linear_policy(mdp: &TabularMdp, phi: &[Vec<f64>], w: &[f64], mode: MmaMode) -> Result<TabularPolicy> {
    let table: Vec<f64> = phi.iter().map(|x| dot(x, w)).collect();
    let plan = match mode {
        MmaMode::CurrentState => value_iteration(mdp, &StateReward(table), 1e-8)?,
        MmaMode::ExpectedNextState => value_iteration(mdp, &NextStateReward(table), 1e-8)?,
    };
    Ok(plan.policy)
}

/// Projection-method apprenticeship learning against an expert target
/// `μ_E`. The initial candidate is a uniformly random deterministic policy
/// drawn from `seed`, unless `initial` is given.
pub fn mma_solve_target(
    mdp: &TabularMdp,
    expert_mu: &FeatureExpectations,
    phi: &[Vec<f64>],
    config: &MmaConfig,
    initial: Option<TabularPolicy>,
    seed: u64,
) -> Result<MmaResult> {
    if config.epsilon.is_nan() || config.epsilon <= 0.0 {
        return Err(Error::validation(format!("mma.epsilon must be positive, got {}", config.epsilon)));
    }
    let initial = match initial {
        Some(p) => p,
        None => {
            let mut rng = rng_for(seed, stream::MMA_INIT);
            let actions: Vec<usize> = (0..mdp.num_states()).map(|_| rng.random_range(0..mdp.num_actions())).collect();
            TabularPolicy::deterministic(mdp.num_actions(), &actions)?
        }
    };
    let mu_e = &expert_mu.0;
    let mu0 = feature_expectations(mdp, &initial, phi, config.mode);
    let mut best = (mu0.distance(expert_mu), initial);
    let mut bar = mu0.0;
    let mut margins = Vec::new();
    let mut w: Vec<f64> = mu_e.iter().zip(&bar).map(|(e, b)| e - b).collect();
    for _ in 0..=config.max_iters {
        w = mu_e.iter().zip(&bar).map(|(e, b)| e - b).collect();
        let margin = dot(&w, &w).sqrt();
        margins.push(margin);
        if margin <= config.epsilon {
            return Ok(MmaResult { weights: w, policy: best.1, margins, converged: true });
        }
        if margins.len() > config.max_iters {
            break;
        }
        let policy = linear_policy(mdp, phi, &w, config.mode)?;
        let mu = feature_expectations(mdp, &policy, phi, config.mode);
        let dist = mu.distance(expert_mu);
        if dist < best.0 {
            best = (dist, policy);
        }
        let step: Vec<f64> = mu.0.iter().zip(&bar).map(|(m, b)| m - b).collect();
        let denom = dot(&step, &step);
        if denom > 0.0 {
            let lambda = (dot(&step, &w) / denom).clamp(0.0, 1.0);
            for (b, s) in bar.iter_mut().zip(&step) {
                *b += lambda * s;
            }
        }
    }
    Ok(MmaResult { weights: w, policy: best.1, margins, converged: false })
}

/// Projection-method apprenticeship learning from expert trajectories.
pub fn mma_solve(
    mdp: &TabularMdp,
    expert: &[Trajectory],
    features: &dyn FeatureMap,
    config: &MmaConfig,
    seed: u64,
) -> Result<MmaResult> {
    let phi = state_feature_table(features);
    let mu_e = expert_feature_expectations(mdp, expert, &phi, config.mode)?;
    mma_solve_target(mdp, &mu_e, &phi, config, None, seed)
}

/// Supervised action model from logged data; the same estimator as the
/// behavior policy used for propensity weights.
pub fn behavior_clone(
    trajectories: &[Trajectory],
    num_states: usize,
    num_actions: usize,
    smoothing: f64,
) -> Result<TabularPolicy> {
    Ok(fit_behavior_policy(trajectories, num_states, num_actions, smoothing)?.policy)
}
