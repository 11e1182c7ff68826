//! Finite MDPs, stochastic policies and logged experience.
//!
//! Rewards are not part of [`TabularMdp`]; they are supplied separately as a
//! [`RewardFunction`] so the same dynamics can be planned against the
//! ground-truth reward, a learned reward, or a candidate linear reward.

mod io;
pub(crate) mod planning;
pub(crate) mod sampling;

pub use io::{read_trajectories, trajectories_from_jsonl, trajectories_to_jsonl, write_trajectories};
pub use planning::{
    evaluate_policy, expected_rewards, soft_value_iteration, soft_value_iteration_with,
    state_distributions, value_iteration, value_iteration_with, PlanResult, ViOptions,
};
pub use sampling::{sample_trajectories, sample_trajectory};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-9;

/// A reward over `(s, a, s')`.
pub trait RewardFunction: Sync {
    fn reward(&self, state: usize, action: usize, next_state: usize) -> f64;
}

impl<F> RewardFunction for F
where
    F: Fn(usize, usize, usize) -> f64 + Sync,
{
    fn reward(&self, state: usize, action: usize, next_state: usize) -> f64 {
        self(state, action, next_state)
    }
}

/// Reward that depends on the next state only: `r(s, a, s') = table[s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct NextStateReward(pub Vec<f64>);

impl RewardFunction for NextStateReward {
    fn reward(&self, _state: usize, _action: usize, next_state: usize) -> f64 {
        self.0[next_state]
    }
}

/// Reward that depends on the current state only: `r(s, a, s') = table[s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateReward(pub Vec<f64>);

impl RewardFunction for StateReward {
    fn reward(&self, state: usize, _action: usize, _next_state: usize) -> f64 {
        self.0[state]
    }
}

#[derive(Debug, Clone)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    /// Sparse rows indexed by `state * num_actions + action`.
    transitions: Vec<Vec<(usize, f64)>>,
    initial_dist: Vec<f64>,
    discount: f64,
    horizon: usize,
    terminal: Vec<bool>,
}

impl TabularMdp {
    /// Builds and validates an MDP. Duplicate next-state entries in a row are
    /// merged and zero-probability entries dropped.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<Vec<(usize, f64)>>,
        initial_dist: Vec<f64>,
        discount: f64,
        horizon: usize,
        terminal_states: &[usize],
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::validation("MDP needs at least one state and one action"));
        }
        if transitions.len() != num_states * num_actions {
            return Err(Error::validation(format!(
                "expected {} transition rows, got {}",
                num_states * num_actions,
                transitions.len()
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::validation(format!("discount {discount} outside [0, 1)")));
        }
        if horizon == 0 {
            return Err(Error::validation("horizon must be positive"));
        }
        check_distribution(&initial_dist, num_states, "initial distribution")?;

        let mut rows = Vec::with_capacity(transitions.len());
        for (idx, row) in transitions.into_iter().enumerate() {
            let mut row = row;
            row.sort_by_key(|&(n, _)| n);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (next, p) in row {
                if next >= num_states {
                    return Err(Error::validation(format!("row {idx}: next state {next} out of range")));
                }
                if !(0.0..=1.0 + STOCHASTIC_TOL).contains(&p) || !p.is_finite() {
                    return Err(Error::validation(format!("row {idx}: probability {p} outside [0, 1]")));
                }
                if p == 0.0 {
                    continue;
                }
                match merged.last_mut() {
                    Some(entry) if entry.0 == next => entry.1 += p,
                    _ => merged.push((next, p)),
                }
            }
            let total: f64 = merged.iter().map(|&(_, p)| p).sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::validation(format!(
                    "row (state {}, action {}) sums to {total}",
                    idx / num_actions,
                    idx % num_actions
                )));
            }
            rows.push(merged);
        }

        let mut terminal = vec![false; num_states];
        for &s in terminal_states {
            if s >= num_states {
                return Err(Error::validation(format!("terminal state {s} out of range")));
            }
            terminal[s] = true;
            for a in 0..num_actions {
                let row = &rows[s * num_actions + a];
                if row.len() != 1 || row[0].0 != s {
                    return Err(Error::validation(format!("terminal state {s} must self-loop under action {a}")));
                }
            }
        }

        Ok(Self { num_states, num_actions, transitions: rows, initial_dist, discount, horizon, terminal })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    pub fn terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.terminal.iter().enumerate().filter(|(_, &t)| t).map(|(s, _)| s)
    }

    /// Sparse next-state distribution of `(state, action)`, sorted by next state.
    #[inline]
    pub fn row(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.transitions[state * self.num_actions + action]
    }

    /// Dense probability lookup, O(row length).
    pub fn prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.row(state, action).iter().find(|(n, _)| *n == next).map_or(0.0, |&(_, p)| p)
    }

    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::validation(format!("discount {discount} outside [0, 1)")));
        }
        Ok(Self { discount, ..self.clone() })
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::validation("horizon must be positive"));
        }
        Ok(Self { horizon, ..self.clone() })
    }
}

fn check_distribution(dist: &[f64], len: usize, what: &str) -> Result<()> {
    if dist.len() != len {
        return Err(Error::validation(format!("{what}: expected {len} entries, got {}", dist.len())));
    }
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::validation(format!("{what}: entries must be finite and non-negative")));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::validation(format!("{what}: sums to {total}")));
    }
    Ok(())
}

/// Stochastic stationary policy `π(a|s)` stored densely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != num_states * num_actions {
            return Err(Error::validation(format!(
                "policy table has {} entries, expected {}",
                probs.len(),
                num_states * num_actions
            )));
        }
        for s in 0..num_states {
            check_distribution(
                &probs[s * num_actions..(s + 1) * num_actions],
                num_actions,
                &format!("policy row {s}"),
            )?;
        }
        Ok(Self { num_states, num_actions, probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self { num_states, num_actions, probs: vec![p; num_states * num_actions] }
    }

    /// One-hot policy selecting `actions[s]` in every state.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::validation(format!("action {a} out of range in state {s}")));
            }
            probs[s * num_actions + a] = 1.0;
        }
        Ok(Self { num_states: actions.len(), num_actions, probs })
    }

    /// Row-wise softmax of `q / alpha`.
    pub fn softmax(num_states: usize, num_actions: usize, q: &[f64], alpha: f64) -> Self {
        let mut probs = vec![0.0; num_states * num_actions];
        for s in 0..num_states {
            let row = &q[s * num_actions..(s + 1) * num_actions];
            let out = &mut probs[s * num_actions..(s + 1) * num_actions];
            softmax_into(row, alpha, out);
        }
        Self { num_states, num_actions, probs }
    }

    /// Mixes every row with the uniform distribution: `(1 - eps) π + eps / |A|`.
    pub fn epsilon_soft(&self, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::validation(format!("epsilon {epsilon} outside [0, 1]")));
        }
        let floor = epsilon / self.num_actions as f64;
        let probs = self.probs.iter().map(|p| (1.0 - epsilon) * p + floor).collect();
        Ok(Self { probs, ..self.clone() })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state * self.num_actions + action]
    }

    #[inline]
    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state * self.num_actions..(state + 1) * self.num_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Highest-probability action; ties go to the lowest action id.
    pub fn greedy_action(&self, state: usize) -> usize {
        argmax_lowest(self.row(state))
    }

    pub fn sample<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let row = self.row(state);
        for (a, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        // Rounding left `u` above the cumulative sum; fall back to the last
        // action with positive mass.
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn logsumexp_scaled(values: &[f64], alpha: f64) -> f64 {
    let max = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let sum: f64 = values.iter().map(|&v| ((v - max) / alpha).exp()).sum();
    max + alpha * sum.ln()
}

pub(crate) fn softmax_into(values: &[f64], alpha: f64, out: &mut [f64]) {
    let max = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(values) {
        *o = ((v - max) / alpha).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// One logged step `(s, a, s')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub timestep: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub seed: u64,
    pub steps: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks chaining and timestep ordering against a horizon.
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.steps.len() > horizon {
            return Err(Error::validation(format!(
                "trajectory has {} steps, horizon is {horizon}",
                self.steps.len()
            )));
        }
        for (t, step) in self.steps.iter().enumerate() {
            if step.timestep != t {
                return Err(Error::validation(format!("step {t} carries timestep {}", step.timestep)));
            }
            if let Some(next) = self.steps.get(t + 1) {
                if next.state != step.next_state {
                    return Err(Error::validation(format!("steps {t} and {} do not chain", t + 1)));
                }
            }
        }
        Ok(())
    }
}

/// Flattens trajectories into their transitions, in order.
pub fn flatten(trajectories: &[Trajectory]) -> Vec<Transition> {
    trajectories.iter().flat_map(|t| t.steps.iter().copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> TabularMdp {
        TabularMdp::new(2, 1, vec![vec![(1, 1.0)], vec![(1, 1.0)]], vec![1.0, 0.0], 0.5, 10, &[1]).unwrap()
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let err = TabularMdp::new(1, 1, vec![vec![(0, 0.7)]], vec![1.0], 0.9, 5, &[]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn rejects_terminal_without_self_loop() {
        let err = TabularMdp::new(2, 1, vec![vec![(1, 1.0)], vec![(0, 1.0)]], vec![1.0, 0.0], 0.9, 5, &[1])
            .unwrap_err();
        assert!(err.to_string().contains("self-loop"));
    }

    #[test]
    fn merges_duplicate_entries() {
        let mdp = TabularMdp::new(2, 1, vec![vec![(1, 0.5), (1, 0.5)], vec![(1, 1.0)]], vec![1.0, 0.0], 0.5, 3, &[])
            .unwrap();
        assert_eq!(mdp.row(0, 0), &[(1, 1.0)]);
        assert!(two_state().is_terminal(1));
    }

    #[test]
    fn greedy_ties_go_to_lowest_action() {
        let pi = TabularPolicy::uniform(1, 4);
        assert_eq!(pi.greedy_action(0), 0);
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn epsilon_soft_rows_stay_stochastic() {
        let pi = TabularPolicy::deterministic(4, &[2, 0]).unwrap().epsilon_soft(0.1).unwrap();
        assert!((pi.prob(0, 2) - 0.925).abs() < 1e-12);
        assert!((pi.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chaining_is_validated() {
        let traj = Trajectory {
            seed: 0,
            steps: vec![
                Transition { state: 0, action: 0, next_state: 1, timestep: 0, done: false },
                Transition { state: 0, action: 0, next_state: 1, timestep: 1, done: true },
            ],
        };
        assert!(traj.validate(5).is_err());
    }
}
