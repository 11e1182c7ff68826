//! Behavior policy, marginal action distribution, stabilized IPTW weights and
//! a weighted maximum-likelihood transition model, all fitted from a batch.
//!
//! The simulator is Markov, so the behavior policy conditions on the current
//! state only.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, TabularPolicy, Trajectory};

pub const DEFAULT_POLICY_SMOOTHING: f64 = 0.1;
pub const DEFAULT_TRANSITION_SMOOTHING: f64 = 0.01;
pub const DEFAULT_CLIP_MAX: f64 = 10.0;

fn check_smoothing(smoothing: f64) -> Result<()> {
    if smoothing >= 0.0 && smoothing.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!("smoothing must be finite and non-negative, got {smoothing}")))
    }
}

fn check_ids(trajectories: &[Trajectory], num_states: usize, num_actions: usize) -> Result<usize> {
    let mut n = 0;
    for t in trajectories.iter().flat_map(|t| &t.steps) {
        if t.state >= num_states || t.next_state >= num_states || t.action >= num_actions {
            return Err(Error::validation(format!(
                "transition ({}, {}, {}) outside {num_states} states / {num_actions} actions",
                t.state, t.action, t.next_state
            )));
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput("trajectory batch has no transitions"));
    }
    Ok(n)
}

/// Laplace-smoothed empirical action distribution per state.
#[derive(Debug, Clone)]
pub struct BehaviorPolicyEstimate {
    pub policy: TabularPolicy,
    /// Raw visit counts indexed `s * |A| + a`.
    pub pair_counts: Vec<f64>,
    pub smoothing: f64,
}

/// `π̂(a|s) = (n(s,a) + σ) / (n(s) + σ|A|)`. With `σ = 0`, unvisited states
/// get the uniform row.
pub fn fit_behavior_policy(
    trajectories: &[Trajectory],
    num_states: usize,
    num_actions: usize,
    smoothing: f64,
) -> Result<BehaviorPolicyEstimate> {
    check_smoothing(smoothing)?;
    check_ids(trajectories, num_states, num_actions)?;
    let mut counts = vec![0.0; num_states * num_actions];
    for t in trajectories.iter().flat_map(|t| &t.steps) {
        counts[t.state * num_actions + t.action] += 1.0;
    }
    let mut probs = vec![0.0; num_states * num_actions];
    for s in 0..num_states {
        let row = &counts[s * num_actions..(s + 1) * num_actions];
        let denom = row.iter().sum::<f64>() + smoothing * num_actions as f64;
        for a in 0..num_actions {
            probs[s * num_actions + a] = if denom > 0.0 { (row[a] + smoothing) / denom } else { 1.0 / num_actions as f64 };
        }
    }
    Ok(BehaviorPolicyEstimate { policy: TabularPolicy::new(num_states, num_actions, probs)?, pair_counts: counts, smoothing })
}

/// Empirical `P(a)` over all logged transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalActionDist {
    pub probs: Vec<f64>,
}

pub fn fit_marginal_actions(trajectories: &[Trajectory], num_actions: usize) -> Result<MarginalActionDist> {
    let mut counts = vec![0.0; num_actions];
    let mut n = 0.0;
    for t in trajectories.iter().flat_map(|t| &t.steps) {
        if t.action >= num_actions {
            return Err(Error::validation(format!("action {} out of range", t.action)));
        }
        counts[t.action] += 1.0;
        n += 1.0;
    }
    if n == 0.0 {
        return Err(Error::EmptyInput("trajectory batch has no transitions"));
    }
    Ok(MarginalActionDist { probs: counts.into_iter().map(|c| c / n).collect() })
}

/// One weight per logged transition, in batch order.
#[derive(Debug, Clone, PartialEq)]
pub struct IptwWeights {
    pub weights: Vec<f64>,
    pub clip_max: f64,
}

impl IptwWeights {
    pub fn mean(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.weights.len() as f64
    }
}

/// Stabilized weights `w = min(P(a) / π̂(a|s), clip_max)`.
pub fn compute_iptw_weights(
    trajectories: &[Trajectory],
    behavior: &BehaviorPolicyEstimate,
    marginal: &MarginalActionDist,
    clip_max: f64,
) -> Result<IptwWeights> {
    if clip_max.is_nan() || clip_max <= 0.0 {
        return Err(Error::validation(format!("clip_max must be positive, got {clip_max}")));
    }
    let mut weights = Vec::new();
    for t in trajectories.iter().flat_map(|t| &t.steps) {
        let p = behavior.policy.prob(t.state, t.action);
        if p <= 0.0 {
            return Err(Error::OverlapViolation { state: t.state, action: t.action });
        }
        weights.push((marginal.probs[t.action] / p).min(clip_max));
    }
    Ok(IptwWeights { weights, clip_max })
}

/// Weighted, smoothed next-state model. Rows of unvisited `(s, a)` pairs fall
/// back to a self-loop.
#[derive(Debug, Clone)]
pub struct EstimatedTransition {
    num_states: usize,
    num_actions: usize,
    smoothing: f64,
    /// Weighted next-state counts per pair, sorted by next state.
    counts: Vec<Vec<(usize, f64)>>,
    totals: Vec<f64>,
    visits: Vec<usize>,
}

/// `P̂(s'|s,a) ∝ Σ w over matching transitions + σ` for every `s'`.
pub fn fit_transition_model(
    trajectories: &[Trajectory],
    weights: Option<&IptwWeights>,
    num_states: usize,
    num_actions: usize,
    smoothing: f64,
) -> Result<EstimatedTransition> {
    check_smoothing(smoothing)?;
    let n = check_ids(trajectories, num_states, num_actions)?;
    if let Some(w) = weights {
        if w.weights.len() != n {
            return Err(Error::Shape { expected: n, got: w.weights.len() });
        }
    }
    let pairs = num_states * num_actions;
    let mut counts: Vec<Vec<(usize, f64)>> = vec![Vec::new(); pairs];
    let mut totals = vec![0.0; pairs];
    let mut visits = vec![0usize; pairs];
    for (i, t) in trajectories.iter().flat_map(|t| &t.steps).enumerate() {
        let w = weights.map_or(1.0, |w| w.weights[i]);
        let idx = t.state * num_actions + t.action;
        match counts[idx].iter_mut().find(|(s, _)| *s == t.next_state) {
            Some(e) => e.1 += w,
            None => counts[idx].push((t.next_state, w)),
        }
        totals[idx] += w;
        visits[idx] += 1;
    }
    for row in &mut counts {
        row.sort_by_key(|&(s, _)| s);
    }
    Ok(EstimatedTransition { num_states, num_actions, smoothing, counts, totals, visits })
}

impl EstimatedTransition {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn visits(&self, state: usize, action: usize) -> usize {
        self.visits[state * self.num_actions + action]
    }

    pub fn prob(&self, state: usize, action: usize, next: usize) -> f64 {
        let idx = state * self.num_actions + action;
        if self.visits[idx] == 0 {
            return if next == state { 1.0 } else { 0.0 };
        }
        let c = self.counts[idx].binary_search_by_key(&next, |&(s, _)| s).map_or(0.0, |i| self.counts[idx][i].1);
        (c + self.smoothing) / (self.totals[idx] + self.smoothing * self.num_states as f64)
    }

    /// Sparse row with every positive entry.
    pub fn row(&self, state: usize, action: usize) -> Vec<(usize, f64)> {
        let idx = state * self.num_actions + action;
        if self.visits[idx] == 0 {
            return vec![(state, 1.0)];
        }
        if self.smoothing == 0.0 {
            let total = self.totals[idx];
            return self.counts[idx].iter().map(|&(s, c)| (s, c / total)).collect();
        }
        (0..self.num_states).map(|n| (n, self.prob(state, action, n))).collect()
    }

    /// Total-variation distance of one row to the matching row of `truth`.
    pub fn tv_distance(&self, truth: &TabularMdp, state: usize, action: usize) -> f64 {
        let est = self.row(state, action);
        let tru = truth.row(state, action);
        let (mut i, mut j, mut total) = (0, 0, 0.0);
        while i < est.len() || j < tru.len() {
            match (est.get(i), tru.get(j)) {
                (Some(&(se, pe)), Some(&(st, pt))) if se == st => {
                    total += (pe - pt).abs();
                    i += 1;
                    j += 1;
                }
                (Some(&(se, pe)), Some(&(st, _))) if se < st => {
                    total += pe;
                    i += 1;
                }
                (Some(&(_, pe)), None) => {
                    total += pe;
                    i += 1;
                }
                (_, Some(&(_, pt))) => {
                    total += pt;
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        0.5 * total
    }

    /// Copies the template's initial distribution, discount, horizon and
    /// terminal set; terminal states keep their self-loops.
    pub fn to_mdp(&self, template: &TabularMdp) -> Result<TabularMdp> {
        if template.num_states() != self.num_states || template.num_actions() != self.num_actions {
            return Err(Error::Shape { expected: self.num_states, got: template.num_states() });
        }
        let mut rows = Vec::with_capacity(self.num_states * self.num_actions);
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                rows.push(if template.is_terminal(s) { vec![(s, 1.0)] } else { self.row(s, a) });
            }
        }
        let terminals: Vec<usize> = template.terminal_states().collect();
        TabularMdp::new(
            self.num_states,
            self.num_actions,
            rows,
            template.initial_dist().to_vec(),
            template.discount(),
            template.horizon(),
            &terminals,
        )
    }

    /// Writes `s,a,s_next,prob` for every visited pair's positive entries.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "s,a,s_next,prob")?;
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                if self.visits(s, a) == 0 {
                    continue;
                }
                for (n, p) in self.row(s, a) {
                    writeln!(out, "{s},{a},{n},{p}")?;
                }
            }
        }
        Ok(())
    }
}
