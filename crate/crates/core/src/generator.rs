//! Policy improvement under a learned reward: exact planning and a tabular
//! soft-Q learner trained offline from a batch.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::sampling::sample_from_row;
use crate::mdp::{
    logsumexp_scaled, soft_value_iteration_with, softmax_into, value_iteration_with, PlanResult, RewardFunction,
    TabularMdp, TabularPolicy, Trajectory, ViOptions,
};
use crate::reward_models::{adam_step, AdamState};
use crate::rng::{rng_for, stream};

/// How the generator policy is obtained from the learned reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSolver {
    /// Soft value iteration; the policy is `softmax(Q/α)`.
    Soft { alpha: f64 },
    /// Hard value iteration, greedy policy mixed with `epsilon` uniform mass
    /// so `log π` stays finite.
    HardEpsilon { epsilon: f64 },
}

impl Default for GeneratorSolver {
    fn default() -> Self {
        GeneratorSolver::HardEpsilon { epsilon: 0.1 }
    }
}

/// Solves the generator exactly on a known (or estimated) model.
pub fn solve_generator_exact(
    mdp: &TabularMdp,
    reward: &dyn RewardFunction,
    solver: GeneratorSolver,
    opts: &ViOptions,
) -> Result<PlanResult> {
    match solver {
        GeneratorSolver::Soft { alpha } => soft_value_iteration_with(mdp, reward, alpha, opts),
        GeneratorSolver::HardEpsilon { epsilon } => {
            if !(epsilon > 0.0 && epsilon <= 1.0) {
                return Err(Error::Domain(format!("epsilon must be in (0, 1], got {epsilon}")));
            }
            let mut plan = value_iteration_with(mdp, reward, opts)?;
            plan.policy = plan.policy.epsilon_soft(epsilon)?;
            Ok(plan)
        }
    }
}

/// Source of the one-step simulated transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimulationMode {
    /// `a ~ π`, `s' ~ T(s, a)` drawn once per epoch.
    #[default]
    Sampled,
    /// Regress every `(s, a)` at batch states onto its expected target,
    /// weighted by `π(a|s)`.
    Expected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftQConfig {
    pub alpha: f64,
    /// Weight on the simulated-data loss.
    pub delta_sim: f64,
    pub bc_lambda0: f64,
    /// Fraction of the epochs over which `λ_bc` decays linearly to zero.
    pub bc_decay_fraction: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Full-batch gradient steps per epoch.
    pub steps_per_epoch: usize,
    /// Target table refresh period, in steps.
    pub sync_rate: usize,
    pub huber_kappa: f64,
    pub sim_mode: SimulationMode,
}

impl Default for SoftQConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            delta_sim: 0.5,
            bc_lambda0: 10.0,
            bc_decay_fraction: 0.5,
            learning_rate: 0.01,
            epochs: 100,
            steps_per_epoch: 20,
            sync_rate: 200,
            huber_kappa: 1.0,
            sim_mode: SimulationMode::Sampled,
        }
    }
}

impl SoftQConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(format!("soft_q.{name} must be positive, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("learning_rate", self.learning_rate)?;
        positive("huber_kappa", self.huber_kappa)?;
        if !(self.delta_sim >= 0.0 && self.bc_lambda0 >= 0.0) {
            return Err(Error::validation("soft_q.delta_sim and soft_q.bc_lambda0 must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.bc_decay_fraction) {
            return Err(Error::validation("soft_q.bc_decay_fraction must be in [0, 1]"));
        }
        if self.steps_per_epoch == 0 || self.sync_rate == 0 {
            return Err(Error::validation("soft_q.steps_per_epoch and soft_q.sync_rate must be positive"));
        }
        Ok(())
    }

    /// `λ_bc` for an epoch: linear decay to zero at `bc_decay_fraction · epochs`.
    pub fn bc_lambda(&self, epoch: usize) -> f64 {
        let end = self.bc_decay_fraction * self.epochs as f64;
        if end <= 0.0 {
            return 0.0;
        }
        self.bc_lambda0 * (1.0 - epoch as f64 / end).max(0.0)
    }
}

pub fn huber(x: f64, kappa: f64) -> f64 {
    if x.abs() <= kappa {
        0.5 * x * x
    } else {
        kappa * (x.abs() - 0.5 * kappa)
    }
}

pub fn huber_grad(x: f64, kappa: f64) -> f64 {
    x.clamp(-kappa, kappa)
}

/// Tabular action values indexed `s * |A| + a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.num_actions + action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.num_actions..(state + 1) * self.num_actions]
    }

    /// `α · logsumexp(Q(s, ·)/α)` per state.
    pub fn soft_values(&self, alpha: f64) -> Vec<f64> {
        (0..self.num_states).map(|s| logsumexp_scaled(self.row(s), alpha)).collect()
    }

    pub fn policy(&self, alpha: f64) -> TabularPolicy {
        TabularPolicy::softmax(self.num_states, self.num_actions, &self.values, alpha)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "s,a,q")?;
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                writeln!(out, "{s},{a},{}", self.get(s, a))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SoftQResult {
    pub q: QTable,
    pub policy: TabularPolicy,
    /// Mean loss of the final step of every epoch.
    pub losses: Vec<f64>,
}

/// One regression sample.
struct Sample {
    idx: usize,
    state: usize,
    reward: f64,
    next: usize,
}

/// Learns a soft Q-table offline.
///
/// Each full-batch step minimizes the mean Huber TD error on logged
/// transitions, plus `δ` times the mean error on simulated one-step
/// transitions, plus `λ_bc · mean_s KL(π_Q(·|s) ‖ π_bc(·|s))` over batch
/// states. TD targets `r + γ α logsumexp(Q̄(s')/α)` use a frozen table `Q̄`
/// refreshed every `sync_rate` steps. Rows of terminal states are pinned to
/// their closed-form self-loop values.
pub fn soft_q_learn(
    expert_batch: &[Trajectory],
    model: &TabularMdp,
    reward: &dyn RewardFunction,
    bc_policy: &TabularPolicy,
    config: &SoftQConfig,
    seed: u64,
) -> Result<SoftQResult> {
    config.validate()?;
    let (ns, na) = (model.num_states(), model.num_actions());
    if bc_policy.num_states() != ns || bc_policy.num_actions() != na {
        return Err(Error::Shape { expected: ns, got: bc_policy.num_states() });
    }
    if bc_policy.as_slice().iter().any(|&p| p <= 0.0) {
        return Err(Error::Domain("behavior-cloning policy must be strictly positive".into()));
    }
    let logged: Vec<Sample> = expert_batch
        .iter()
        .flat_map(|t| &t.steps)
        .map(|t| Sample {
            idx: t.state * na + t.action,
            state: t.state,
            reward: reward.reward(t.state, t.action, t.next_state),
            next: t.next_state,
        })
        .collect();
    if logged.is_empty() {
        return Err(Error::EmptyInput("soft-Q learning needs at least one transition"));
    }
    let alpha = config.alpha;
    let gamma = model.discount();
    let log_bc: Vec<f64> = bc_policy.as_slice().iter().map(|p| p.ln()).collect();

    let mut q = vec![0.0; ns * na];
    let mut pinned = vec![false; ns * na];
    for s in model.terminal_states() {
        let r: Vec<f64> = (0..na).map(|a| reward.reward(s, a, s)).collect();
        let v = logsumexp_scaled(&r, alpha) / (1.0 - gamma);
        for a in 0..na {
            q[s * na + a] = r[a] + gamma * v;
            pinned[s * na + a] = true;
        }
    }
    let expected_reward = match config.sim_mode {
        SimulationMode::Expected => crate::mdp::expected_rewards(model, reward),
        SimulationMode::Sampled => Vec::new(),
    };

    let mut adam = AdamState::new(ns * na, config.learning_rate);
    let mut target_v = vec![0.0; ns];
    let mut expected_target = vec![0.0; ns * na];
    let mut simulated: Vec<Sample> = Vec::new();
    let mut grad = vec![0.0; ns * na];
    let mut pi = vec![0.0; na];
    let mut losses = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    let n_logged = logged.len() as f64;

    for epoch in 0..config.epochs {
        let lambda = config.bc_lambda(epoch);
        if config.sim_mode == SimulationMode::Sampled && config.delta_sim > 0.0 {
            let mut rng = rng_for(seed, stream::SOFT_Q + epoch as u64);
            simulated.clear();
            for l in &logged {
                softmax_into(&q[l.state * na..(l.state + 1) * na], alpha, &mut pi);
                let a = sample_index(&pi, &mut rng);
                let next = sample_from_row(model.row(l.state, a), &mut rng);
                simulated.push(Sample { idx: l.state * na + a, state: l.state, reward: reward.reward(l.state, a, next), next });
            }
        }
        let mut loss = 0.0;
        for _ in 0..config.steps_per_epoch {
            if step.is_multiple_of(config.sync_rate) {
                for s in 0..ns {
                    target_v[s] = logsumexp_scaled(&q[s * na..(s + 1) * na], alpha);
                }
                if config.sim_mode == SimulationMode::Expected {
                    for s in 0..ns {
                        for a in 0..na {
                            let future: f64 = model.row(s, a).iter().map(|&(n, p)| p * target_v[n]).sum();
                            expected_target[s * na + a] = expected_reward[s * na + a] + gamma * future;
                        }
                    }
                }
            }
            step += 1;
            grad.iter_mut().for_each(|g| *g = 0.0);
            loss = 0.0;
            for l in &logged {
                let d = q[l.idx] - (l.reward + gamma * target_v[l.next]);
                loss += huber(d, config.huber_kappa) / n_logged;
                grad[l.idx] += huber_grad(d, config.huber_kappa) / n_logged;
            }
            if config.delta_sim > 0.0 {
                match config.sim_mode {
                    SimulationMode::Sampled => {
                        let w = config.delta_sim / simulated.len() as f64;
                        for m in &simulated {
                            let d = q[m.idx] - (m.reward + gamma * target_v[m.next]);
                            loss += w * huber(d, config.huber_kappa);
                            grad[m.idx] += w * huber_grad(d, config.huber_kappa);
                        }
                    }
                    SimulationMode::Expected => {
                        let w = config.delta_sim / n_logged;
                        for l in &logged {
                            let s = l.state;
                            softmax_into(&q[s * na..(s + 1) * na], alpha, &mut pi);
                            for a in 0..na {
                                let d = q[s * na + a] - expected_target[s * na + a];
                                loss += w * pi[a] * huber(d, config.huber_kappa);
                                grad[s * na + a] += w * pi[a] * huber_grad(d, config.huber_kappa);
                            }
                        }
                    }
                }
            }
            if lambda > 0.0 {
                let w = lambda / n_logged;
                for l in &logged {
                    let s = l.state;
                    softmax_into(&q[s * na..(s + 1) * na], alpha, &mut pi);
                    let lb = &log_bc[s * na..(s + 1) * na];
                    let kl: f64 = pi.iter().zip(lb).map(|(&p, &b)| if p > 0.0 { p * (p.ln() - b) } else { 0.0 }).sum();
                    loss += w * kl;
                    for a in 0..na {
                        let lp = if pi[a] > 0.0 { pi[a].ln() } else { 0.0 };
                        grad[s * na + a] += w * pi[a] * (lp - lb[a] - kl) / alpha;
                    }
                }
            }
            for (g, &p) in grad.iter_mut().zip(&pinned) {
                if p {
                    *g = 0.0;
                }
            }
            adam_step(&mut q, &grad, &mut adam)?;
            if !loss.is_finite() || q.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence(format!("soft-Q learning produced a non-finite value at epoch {epoch}")));
            }
        }
        losses.push(loss);
    }
    let table = QTable { num_states: ns, num_actions: na, values: q };
    let policy = table.policy(alpha);
    Ok(SoftQResult { q: table, policy, losses })
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
