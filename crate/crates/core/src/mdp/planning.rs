//! Exact planners: hard and entropy-regularized value iteration over an
//! infinite horizon, and exact finite-horizon policy evaluation.

use super::{argmax_lowest, logsumexp_scaled, RewardFunction, TabularMdp, TabularPolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ViOptions {
    /// Stop once the max-norm change between sweeps drops below this.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Warm start; zeros when absent.
    pub initial_values: Option<Vec<f64>>,
}

impl Default for ViOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_sweeps: 10_000, initial_values: None }
    }
}

impl ViOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub values: Vec<f64>,
    /// Indexed `state * num_actions + action`.
    pub q_values: Vec<f64>,
    pub policy: TabularPolicy,
    pub sweeps: usize,
    pub residual: f64,
}

/// `E_{s'~T(s,a)} r(s, a, s')` for every pair, indexed `s * |A| + a`.
pub fn expected_rewards(mdp: &TabularMdp, reward: &dyn RewardFunction) -> Vec<f64> {
    let na = mdp.num_actions();
    let mut out = vec![0.0; mdp.num_states() * na];
    for s in 0..mdp.num_states() {
        for a in 0..na {
            out[s * na + a] = mdp.row(s, a).iter().map(|&(n, p)| p * reward.reward(s, a, n)).sum();
        }
    }
    out
}

fn backup_q(mdp: &TabularMdp, rbar: &[f64], values: &[f64], q: &mut [f64]) {
    let na = mdp.num_actions();
    let gamma = mdp.discount();
    for s in 0..mdp.num_states() {
        for a in 0..na {
            let future: f64 = mdp.row(s, a).iter().map(|&(n, p)| p * values[n]).sum();
            q[s * na + a] = rbar[s * na + a] + gamma * future;
        }
    }
}

fn initial_values(mdp: &TabularMdp, opts: &ViOptions) -> Result<Vec<f64>> {
    match &opts.initial_values {
        Some(v) if v.len() == mdp.num_states() => Ok(v.clone()),
        Some(v) => Err(Error::Shape { expected: mdp.num_states(), got: v.len() }),
        None => Ok(vec![0.0; mdp.num_states()]),
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("tolerance must be positive, got {tol}")))
    }
}

/// Hard value iteration; the returned policy is greedy with ties to the lowest
/// action id.
pub fn value_iteration(mdp: &TabularMdp, reward: &dyn RewardFunction, tol: f64) -> Result<PlanResult> {
    value_iteration_with(mdp, reward, &ViOptions::with_tol(tol))
}

pub fn value_iteration_with(mdp: &TabularMdp, reward: &dyn RewardFunction, opts: &ViOptions) -> Result<PlanResult> {
    check_tol(opts.tol)?;
    let rbar = expected_rewards(mdp, reward);
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut values = initial_values(mdp, opts)?;
    let mut q = vec![0.0; ns * na];
    let mut residual = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        backup_q(mdp, &rbar, &values, &mut q);
        residual = 0.0;
        for s in 0..ns {
            let v = q[s * na..(s + 1) * na].iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            residual = f64::max(residual, (v - values[s]).abs());
            values[s] = v;
        }
        if residual < opts.tol {
            backup_q(mdp, &rbar, &values, &mut q);
            for s in 0..ns {
                values[s] = q[s * na..(s + 1) * na].iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            }
            let actions: Vec<usize> = (0..ns).map(|s| argmax_lowest(&q[s * na..(s + 1) * na])).collect();
            let policy = TabularPolicy::deterministic(na, &actions)?;
            return Ok(PlanResult { values, q_values: q, policy, sweeps: sweep, residual });
        }
    }
    Err(Error::IterationLimit { sweeps: opts.max_sweeps, residual })
}

/// Soft value iteration: `V(s) = α logsumexp_a Q(s,a)/α`, policy `softmax(Q/α)`.
pub fn soft_value_iteration(
    mdp: &TabularMdp,
    reward: &dyn RewardFunction,
    alpha: f64,
    tol: f64,
) -> Result<PlanResult> {
    soft_value_iteration_with(mdp, reward, alpha, &ViOptions::with_tol(tol))
}

pub fn soft_value_iteration_with(
    mdp: &TabularMdp,
    reward: &dyn RewardFunction,
    alpha: f64,
    opts: &ViOptions,
) -> Result<PlanResult> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("entropy coefficient must be positive, got {alpha}")));
    }
    check_tol(opts.tol)?;
    let rbar = expected_rewards(mdp, reward);
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut values = initial_values(mdp, opts)?;
    let mut q = vec![0.0; ns * na];
    let mut residual = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        backup_q(mdp, &rbar, &values, &mut q);
        residual = 0.0;
        for s in 0..ns {
            let v = logsumexp_scaled(&q[s * na..(s + 1) * na], alpha);
            residual = f64::max(residual, (v - values[s]).abs());
            values[s] = v;
        }
        if !residual.is_finite() {
            return Err(Error::Divergence(format!("soft value iteration produced residual {residual}")));
        }
        if residual < opts.tol {
            backup_q(mdp, &rbar, &values, &mut q);
            for s in 0..ns {
                values[s] = logsumexp_scaled(&q[s * na..(s + 1) * na], alpha);
            }
            let policy = TabularPolicy::softmax(ns, na, &q, alpha);
            return Ok(PlanResult { values, q_values: q, policy, sweeps: sweep, residual });
        }
    }
    Err(Error::IterationLimit { sweeps: opts.max_sweeps, residual })
}

/// State distributions `d_0 .. d_H` (H + 1 entries) under `policy`.
pub fn state_distributions(mdp: &TabularMdp, policy: &TabularPolicy) -> Vec<Vec<f64>> {
    let ns = mdp.num_states();
    let mut dists = Vec::with_capacity(mdp.horizon() + 1);
    let mut d = mdp.initial_dist().to_vec();
    for _ in 0..mdp.horizon() {
        let mut next = vec![0.0; ns];
        for (s, &mass) in d.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (a, &pa) in policy.row(s).iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                for &(n, p) in mdp.row(s, a) {
                    next[n] += mass * pa * p;
                }
            }
        }
        dists.push(std::mem::replace(&mut d, next));
    }
    dists.push(d);
    dists
}

/// Exact discounted return over the MDP's horizon, `Σ_{t<H} γ^t E[r(s_t, a_t, s_{t+1})]`,
/// by forward propagation of the state distribution. Terminal states keep
/// accruing reward through their self-loop.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &TabularPolicy, reward: &dyn RewardFunction) -> f64 {
    let rbar = expected_rewards(mdp, reward);
    let na = mdp.num_actions();
    let gamma = mdp.discount();
    let dists = state_distributions(mdp, policy);
    let mut total = 0.0;
    let mut discount = 1.0;
    for d in dists.iter().take(mdp.horizon()) {
        let step: f64 = d
            .iter()
            .enumerate()
            .filter(|(_, &m)| m != 0.0)
            .map(|(s, &m)| m * policy.row(s).iter().zip(&rbar[s * na..(s + 1) * na]).map(|(p, r)| p * r).sum::<f64>())
            .sum();
        total += discount * step;
        discount *= gamma;
    }
    total
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::mdp::NextStateReward;

    fn single_state(actions: usize, gamma: f64, horizon: usize) -> TabularMdp {
        TabularMdp::new(1, actions, vec![vec![(0, 1.0)]; actions], vec![1.0], gamma, horizon, &[]).unwrap()
    }

    #[test]
    fn geometric_series_value() {
        let mdp = single_state(1, 0.9, 20);
        let tol = 1e-8;
        let res = value_iteration(&mdp, &|_, _, _| 1.0, tol).unwrap();
        assert!((res.values[0] - 10.0).abs() < tol * 10.0);
    }

    /// Independent fixed-point oracle: 100 hand-rolled Bellman sweeps on the
    /// 2-state chain s0 -> s1 -> s1 with reward 1 on entering/staying in s1.
    fn chain_oracle() -> (f64, f64) {
        let gamma = 0.5;
        let (mut v0, mut v1) = (0.0f64, 0.0f64);
        for _ in 0..100 {
            let n0 = 1.0 + gamma * v1;
            let n1 = 1.0 + gamma * v1;
            v0 = n0;
            v1 = n1;
        }
        (v0, v1)
    }

    #[test]
    fn two_state_chain_matches_fixed_point_oracle() {
        // State reward r(s1) = 1, credited on arrival: r(s, a, s') = [s' == 1].
        let mdp = TabularMdp::new(2, 1, vec![vec![(1, 1.0)], vec![(1, 1.0)]], vec![1.0, 0.0], 0.5, 20, &[]).unwrap();
        let res = value_iteration(&mdp, &NextStateReward(vec![0.0, 1.0]), 1e-12).unwrap();
        let (v0, v1) = chain_oracle();
        assert!((res.values[0] - v0).abs() < 1e-8);
        assert!((res.values[1] - v1).abs() < 1e-8);
    }

    #[test]
    fn iteration_limit_reports_residual() {
        let mdp = single_state(1, 0.99, 20);
        let opts = ViOptions { tol: 1e-12, max_sweeps: 5, initial_values: None };
        match value_iteration_with(&mdp, &|_, _, _| 1.0, &opts) {
            Err(Error::IterationLimit { sweeps: 5, residual }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn soft_closed_form_two_equal_actions() {
        let (r, gamma, alpha) = (0.3, 0.8, 0.7);
        let mdp = single_state(2, gamma, 20);
        let res = soft_value_iteration(&mdp, &|_, _, _| r, alpha, 1e-10).unwrap();
        let expected = (r + alpha * 2f64.ln()) / (1.0 - gamma);
        assert!((res.values[0] - expected).abs() < 1e-8);
        assert!((res.policy.prob(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn soft_rejects_non_positive_alpha() {
        let mdp = single_state(2, 0.5, 5);
        assert!(matches!(soft_value_iteration(&mdp, &|_, _, _| 0.0, 0.0, 1e-8), Err(Error::Domain(_))));
    }

    /// 3-state toy used by several oracle checks.
    pub(crate) fn three_state_toy() -> (TabularMdp, NextStateReward) {
        let rows = vec![
            vec![(0, 0.2), (1, 0.8)],
            vec![(2, 1.0)],
            vec![(1, 0.5), (2, 0.5)],
            vec![(0, 1.0)],
            vec![(0, 0.3), (2, 0.7)],
            vec![(1, 0.6), (0, 0.4)],
        ];
        let mdp = TabularMdp::new(3, 2, rows, vec![0.5, 0.25, 0.25], 0.9, 20, &[]).unwrap();
        (mdp, NextStateReward(vec![0.0, 0.4, 1.0]))
    }

    fn long_soft_oracle(mdp: &TabularMdp, reward: &NextStateReward, alpha: f64) -> Vec<f64> {
        let mut v = vec![0.0; 3];
        for _ in 0..10_000 {
            let mut next = vec![0.0; 3];
            for (s, slot) in next.iter_mut().enumerate() {
                let qs: Vec<f64> = (0..2)
                    .map(|a| mdp.row(s, a).iter().map(|&(n, p)| p * (reward.0[n] + 0.9 * v[n])).sum())
                    .collect();
                *slot = alpha * qs.iter().map(|q| (q / alpha).exp()).sum::<f64>().ln();
            }
            v = next;
        }
        v
    }

    #[test]
    fn soft_matches_long_fixed_point_oracle() {
        let (mdp, reward) = three_state_toy();
        let res = soft_value_iteration(&mdp, &reward, 0.5, 1e-10).unwrap();
        let oracle = long_soft_oracle(&mdp, &reward, 0.5);
        for s in 0..3 {
            assert!((res.values[s] - oracle[s]).abs() < 1e-7, "state {s}");
        }
    }

    #[test]
    fn soft_limit_recovers_greedy() {
        let (mdp, reward) = three_state_toy();
        let hard = value_iteration(&mdp, &reward, 1e-10).unwrap();
        let soft = soft_value_iteration(&mdp, &reward, 1e-6, 1e-10).unwrap();
        for s in 0..3 {
            let q = &hard.q_values[s * 2..s * 2 + 2];
            if (q[0] - q[1]).abs() > 1e-4 {
                assert!(soft.policy.prob(s, hard.policy.greedy_action(s)) >= 0.999);
            }
        }
    }

    #[test]
    fn bellman_optimality_residuals() {
        let (mdp, reward) = three_state_toy();
        let tol = 1e-9;
        let hard = value_iteration(&mdp, &reward, tol).unwrap();
        let soft = soft_value_iteration(&mdp, &reward, 0.3, tol).unwrap();
        for s in 0..3 {
            let qh = &hard.q_values[s * 2..s * 2 + 2];
            assert!((hard.values[s] - qh[0].max(qh[1])).abs() < tol);
            let qs = &soft.q_values[s * 2..s * 2 + 2];
            assert!((soft.values[s] - logsumexp_scaled(qs, 0.3)).abs() < tol);
        }
    }

    #[test]
    fn evaluation_of_trivial_rewards() {
        let mdp = single_state(1, 0.9, 20);
        let pi = TabularPolicy::uniform(1, 1);
        assert_eq!(evaluate_policy(&mdp, &pi, &|_, _, _| 0.0), 0.0);
        let g = evaluate_policy(&mdp, &pi, &|_, _, _| 1.0);
        assert!((g - (1.0 - 0.9f64.powi(20)) / 0.1).abs() < 1e-12);
    }

    #[test]
    fn decreasing_alpha_improves_return() {
        let (mdp, reward) = three_state_toy();
        let returns: Vec<f64> = [1.0, 0.1, 0.01]
            .iter()
            .map(|&alpha| {
                let res = soft_value_iteration(&mdp, &reward, alpha, 1e-10).unwrap();
                evaluate_policy(&mdp, &res.policy, &reward)
            })
            .collect();
        assert!(returns[0] <= returns[1] + 1e-12 && returns[1] <= returns[2] + 1e-12, "{returns:?}");
        let greedy = value_iteration(&mdp, &reward, 1e-10).unwrap();
        assert!(evaluate_policy(&mdp, &greedy.policy, &reward) >= returns[2] - 1e-12);
    }
}
