//! Adversarial reward recovery: the discriminator
//! `D = σ(g(φ) + γ h(s') − h(s) − log π(a|s))`, generated-batch construction
//! and the alternating training loop.
//!
//! With `φ = features(s')` the reward term judges the outcome of an action
//! (counterfactual mode); with `φ = features(s)` it reduces to the classic
//! current-state form.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{scale_to_ground_truth, shape_distance, ShapeGraph};
use crate::generator::{solve_generator_exact, GeneratorSolver};
use crate::mdp::sampling::sample_from_row;
use crate::mdp::{evaluate_policy, RewardFunction, StateReward, TabularMdp, TabularPolicy, Trajectory, ViOptions};
use crate::reward_models::{
    adam_step, export_shape_graph, AdamState, FeatureCounts, FeatureKind, FeatureMap, GamReward, ModelKind, RewardModel,
};
use crate::rng::{derive_seed, rng_for, stream};
use crate::sepsis::{draw_noise, NoiseMode};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMapMode {
    /// Reward term reads the current state.
    CurrentState,
    /// Reward term reads the next state.
    #[default]
    NextState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub feature_map_mode: FeatureMapMode,
    /// Discount on the shaping potential of the next state.
    pub gamma: f64,
    /// When false the logit uses `h(s')` without the discount.
    pub discount_shaping: bool,
    /// Expert targets are `1 − label_smoothing`.
    pub label_smoothing: f64,
    pub input_noise_sigma: f64,
    /// Fraction of training over which the input noise decays to zero; zero
    /// keeps it constant.
    pub noise_decay_fraction: f64,
    pub disc_steps_per_gen_update: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub reward_model: ModelKind,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            feature_map_mode: FeatureMapMode::NextState,
            gamma: 0.9,
            discount_shaping: true,
            label_smoothing: 0.0,
            input_noise_sigma: 0.0,
            noise_decay_fraction: 0.0,
            disc_steps_per_gen_update: 20,
            batch_size: 512,
            learning_rate: 2e-4,
            epochs: 100,
            reward_model: ModelKind::Gam,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::validation(format!("discriminator.gamma {} outside [0, 1)", self.gamma)));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::validation(format!(
                "discriminator.label_smoothing {} outside [0, 0.5)",
                self.label_smoothing
            )));
        }
        if !(self.input_noise_sigma >= 0.0 && self.input_noise_sigma.is_finite()) {
            return Err(Error::validation("discriminator.input_noise_sigma must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.noise_decay_fraction) {
            return Err(Error::validation("discriminator.noise_decay_fraction must be in [0, 1]"));
        }
        if self.disc_steps_per_gen_update == 0 || self.batch_size == 0 {
            return Err(Error::validation("discriminator.disc_steps_per_gen_update and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("discriminator.learning_rate must be positive"));
        }
        Ok(())
    }

    fn shaping_gamma(&self) -> f64 {
        if self.discount_shaping {
            self.gamma
        } else {
            1.0
        }
    }

    /// Input-noise scale at step `t` of `total`.
    pub fn noise_sigma(&self, t: usize, total: usize) -> f64 {
        if self.noise_decay_fraction == 0.0 {
            return self.input_noise_sigma;
        }
        let end = self.noise_decay_fraction * total as f64;
        self.input_noise_sigma * (1.0 - t as f64 / end).max(0.0)
    }
}

/// Reward term `g` over reward features and shaping potential `h` over
/// state features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub g: RewardModel,
    pub h: RewardModel,
}

impl Discriminator {
    /// Fresh discriminator; `h` is always an additive table model.
    pub fn new(features: &dyn FeatureMap, g_kind: ModelKind, seed: u64) -> Self {
        Self {
            g: RewardModel::init(g_kind, features.reward_specs().to_vec(), derive_seed(seed, stream::MODEL_INIT)),
            h: RewardModel::Gam(GamReward::zeros(features.shaping_specs().to_vec())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub v: u32,
    pub feature_map_mode: FeatureMapMode,
    pub discriminator: Discriminator,
}

impl Checkpoint {
    pub fn new(feature_map_mode: FeatureMapMode, discriminator: Discriminator) -> Self {
        Self { v: CHECKPOINT_VERSION, feature_map_mode, discriminator }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        if ck.v != CHECKPOINT_VERSION {
            return Err(Error::validation(format!("unsupported checkpoint version {}", ck.v)));
        }
        Ok(ck)
    }
}

/// A transition with its noise-feature draw and the generator log-probability
/// snapshot used in the logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledTransition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub noise: f64,
    pub log_pi: f64,
}

/// Expert transitions with noise drawn per transition, or once per
/// trajectory, from the trajectory seed. `log_pi` is left at zero.
pub fn expert_samples(trajectories: &[Trajectory], noise_mode: NoiseMode) -> Vec<LabeledTransition> {
    let mut out = Vec::new();
    for traj in trajectories {
        let base = derive_seed(traj.seed, stream::FEATURE_NOISE);
        for (t, step) in traj.steps.iter().enumerate() {
            let noise_seed = match noise_mode {
                NoiseMode::PerTransition => derive_seed(base, t as u64),
                NoiseMode::PerTrajectory => base,
            };
            out.push(LabeledTransition {
                state: step.state,
                action: step.action,
                next_state: step.next_state,
                noise: draw_noise(noise_seed),
                log_pi: 0.0,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// The sampled action matched the logged one; the logged outcome is reused.
    LoggedNext,
    /// The next state was drawn from the transition model.
    SimulatedNext,
}

#[derive(Debug, Clone, Default)]
pub struct GeneratedBatch {
    pub items: Vec<(LabeledTransition, Provenance)>,
}

impl GeneratedBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn logged_fraction(&self) -> f64 {
        let n = self.items.iter().filter(|(_, p)| *p == Provenance::LoggedNext).count();
        n as f64 / self.items.len() as f64
    }

    pub fn transitions(&self) -> impl Iterator<Item = &LabeledTransition> {
        self.items.iter().map(|(t, _)| t)
    }
}

/// One generated transition per expert transition: `a ~ π(·|s)`; the logged
/// next state (and its noise draw) when `a` matches the expert action,
/// otherwise `s' ~ T(s, a)` with a fresh noise draw. Item `i` uses seed
/// `derive_seed(seed, i)`.
pub fn build_generated_batch(
    expert: &[LabeledTransition],
    policy: &TabularPolicy,
    model: &TabularMdp,
    seed: u64,
) -> GeneratedBatch {
    let items = expert
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let action = policy.sample(e.state, &mut rng);
            let log_pi = policy.prob(e.state, action).ln();
            if action == e.action {
                (LabeledTransition { action, log_pi, ..*e }, Provenance::LoggedNext)
            } else {
                let next_state = sample_from_row(model.row(e.state, action), &mut rng);
                let noise = rng.random::<f64>();
                (LabeledTransition { state: e.state, action, next_state, noise, log_pi }, Provenance::SimulatedNext)
            }
        })
        .collect();
    GeneratedBatch { items }
}

/// `g + γ h(s') − h(s) − log π`.
pub fn logit_from_parts(g: f64, h_state: f64, h_next: f64, gamma: f64, log_pi: f64) -> f64 {
    g + gamma * h_next - h_state - log_pi
}

/// Scratch buffers for feature vectors.
struct Buffers {
    phi: Vec<f64>,
    hs: Vec<f64>,
    hn: Vec<f64>,
}

impl Buffers {
    fn new(features: &dyn FeatureMap) -> Self {
        Self {
            phi: vec![0.0; features.reward_specs().len()],
            hs: vec![0.0; features.shaping_specs().len()],
            hn: vec![0.0; features.shaping_specs().len()],
        }
    }

    fn fill(&mut self, features: &dyn FeatureMap, mode: FeatureMapMode, t: &LabeledTransition) {
        let phi_state = match mode {
            FeatureMapMode::NextState => t.next_state,
            FeatureMapMode::CurrentState => t.state,
        };
        features.reward_features(phi_state, t.noise, &mut self.phi);
        features.shaping_features(t.state, &mut self.hs);
        features.shaping_features(t.next_state, &mut self.hn);
    }
}

/// Full discriminator logit for one transition under `policy`.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_logit(
    disc: &Discriminator,
    features: &dyn FeatureMap,
    config: &DiscriminatorConfig,
    state: usize,
    action: usize,
    next_state: usize,
    noise: f64,
    policy: &TabularPolicy,
) -> Result<f64> {
    let p = policy.prob(state, action);
    if p <= 0.0 {
        return Err(Error::Domain(format!("generator assigns zero probability to action {action} in state {state}")));
    }
    let t = LabeledTransition { state, action, next_state, noise, log_pi: p.ln() };
    let mut buf = Buffers::new(features);
    buf.fill(features, config.feature_map_mode, &t);
    Ok(logit_from_parts(disc.g.eval(&buf.phi), disc.h.eval(&buf.hs), disc.h.eval(&buf.hn), config.shaping_gamma(), t.log_pi))
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `σ(z)` against target `y`.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    softplus(z) - y * z
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscLoss {
    pub expert: f64,
    pub generated: f64,
}

impl DiscLoss {
    pub fn total(&self) -> f64 {
        self.expert + self.generated
    }
}

/// Mean BCE on each side and its gradient w.r.t. the parameters of `g` and
/// `h`. `sigma` jitters continuous reward-feature coordinates.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_loss_and_grad(
    disc: &Discriminator,
    features: &dyn FeatureMap,
    config: &DiscriminatorConfig,
    expert: &[LabeledTransition],
    generated: &[LabeledTransition],
    sigma: f64,
    rng: &mut ChaCha8Rng,
    grad_g: &mut [f64],
    grad_h: &mut [f64],
) -> Result<DiscLoss> {
    if expert.is_empty() || generated.is_empty() {
        return Err(Error::EmptyInput("discriminator step needs expert and generated samples"));
    }
    grad_g.iter_mut().for_each(|x| *x = 0.0);
    grad_h.iter_mut().for_each(|x| *x = 0.0);
    let gamma = config.shaping_gamma();
    let continuous: Vec<usize> = features
        .reward_specs()
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s.kind, FeatureKind::Continuous { .. }))
        .map(|(j, _)| j)
        .collect();
    let normal = if sigma > 0.0 { Some(Normal::new(0.0, sigma).map_err(|e| Error::Domain(e.to_string()))?) } else { None };
    let mut buf = Buffers::new(features);
    let mut side = |batch: &[LabeledTransition], target: f64, buf: &mut Buffers| -> f64 {
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for t in batch {
            buf.fill(features, config.feature_map_mode, t);
            if let Some(normal) = &normal {
                for &j in &continuous {
                    buf.phi[j] += normal.sample(rng);
                }
            }
            let z = logit_from_parts(disc.g.eval(&buf.phi), disc.h.eval(&buf.hs), disc.h.eval(&buf.hn), gamma, t.log_pi);
            loss += bce_with_logit(z, target) / n;
            let dz = (sigmoid(z) - target) / n;
            disc.g.accumulate_grad(&buf.phi, dz, grad_g);
            disc.h.accumulate_grad(&buf.hn, gamma * dz, grad_h);
            disc.h.accumulate_grad(&buf.hs, -dz, grad_h);
        }
        loss
    };
    let expert_loss = side(expert, 1.0 - config.label_smoothing, &mut buf);
    let generated_loss = side(generated, 0.0, &mut buf);
    let loss = DiscLoss { expert: expert_loss, generated: generated_loss };
    if !loss.total().is_finite() {
        return Err(Error::Divergence(format!(
            "discriminator loss is not finite (expert {expert_loss}, generated {generated_loss})"
        )));
    }
    Ok(loss)
}

/// Optimizer state for both discriminator parts.
#[derive(Debug, Clone)]
pub struct DiscOptimizer {
    pub g: AdamState,
    pub h: AdamState,
    grad_g: Vec<f64>,
    grad_h: Vec<f64>,
}

impl DiscOptimizer {
    pub fn new(disc: &Discriminator, learning_rate: f64) -> Self {
        Self {
            g: AdamState::new(disc.g.num_params(), learning_rate),
            h: AdamState::new(disc.h.num_params(), learning_rate),
            grad_g: vec![0.0; disc.g.num_params()],
            grad_h: vec![0.0; disc.h.num_params()],
        }
    }
}

/// One Adam step on `g` and `h`; returns the loss before the step.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_train_step(
    disc: &mut Discriminator,
    features: &dyn FeatureMap,
    config: &DiscriminatorConfig,
    expert: &[LabeledTransition],
    generated: &[LabeledTransition],
    sigma: f64,
    rng: &mut ChaCha8Rng,
    opt: &mut DiscOptimizer,
) -> Result<DiscLoss> {
    let loss =
        discriminator_loss_and_grad(disc, features, config, expert, generated, sigma, rng, &mut opt.grad_g, &mut opt.grad_h)?;
    adam_step(disc.g.params_mut(), &opt.grad_g, &mut opt.g)?;
    adam_step(disc.h.params_mut(), &opt.grad_h, &mut opt.h)?;
    Ok(loss)
}

/// Per-state reward the generator plans against: `g` averaged over the
/// representative values of the noise coordinate (if any).
pub fn state_reward_table(g: &RewardModel, features: &dyn FeatureMap) -> Vec<f64> {
    let noise_values = match features.noise_index() {
        Some(j) => features.reward_specs()[j].bin_values(),
        None => vec![0.0],
    };
    let mut phi = vec![0.0; features.reward_specs().len()];
    (0..features.num_states())
        .map(|s| {
            noise_values
                .iter()
                .map(|&u| {
                    features.reward_features(s, u, &mut phi);
                    g.eval(&phi)
                })
                .sum::<f64>()
                / noise_values.len() as f64
        })
        .collect()
}

/// Learned reward as a planner input: `ḡ(s')` or `ḡ(s)` by mode.
pub enum LearnedReward {
    NextState(Vec<f64>),
    CurrentState(StateReward),
}

impl LearnedReward {
    pub fn new(g: &RewardModel, features: &dyn FeatureMap, mode: FeatureMapMode) -> Self {
        let table = state_reward_table(g, features);
        match mode {
            FeatureMapMode::NextState => LearnedReward::NextState(table),
            FeatureMapMode::CurrentState => LearnedReward::CurrentState(StateReward(table)),
        }
    }
}

impl RewardFunction for LearnedReward {
    fn reward(&self, state: usize, action: usize, next_state: usize) -> f64 {
        match self {
            LearnedReward::NextState(t) => t[next_state],
            LearnedReward::CurrentState(r) => r.reward(state, action, next_state),
        }
    }
}

/// Ground-truth probes for the training history.
pub struct Monitor<'a> {
    pub true_mdp: &'a TabularMdp,
    pub true_reward: &'a dyn RewardFunction,
    /// With counts, the shape distance of `g` is logged each epoch.
    pub shape: Option<(&'a ShapeGraph, &'a FeatureCounts)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub epoch: usize,
    pub disc_loss: f64,
    pub gen_return: Option<f64>,
    pub shape_dist: Option<f64>,
}

pub fn write_history<W: Write>(history: &[HistoryEntry], mut out: W) -> Result<()> {
    writeln!(out, "epoch,disc_loss,gen_return,shape_dist")?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for h in history {
        writeln!(out, "{},{},{},{}", h.epoch, h.disc_loss, opt(h.gen_return), opt(h.shape_dist))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub discriminator: Discriminator,
    /// Generator policy after the last update.
    pub generator: TabularPolicy,
    pub history: Vec<HistoryEntry>,
}

/// Alternating adversarial training.
///
/// One epoch is `ceil(n / batch_size)` discriminator steps over minibatches
/// of the `n` expert transitions; after every `disc_steps_per_gen_update`
/// steps the generator is re-solved exactly under the current `g`. Each step
/// builds its generated minibatch from an independent minibatch of expert
/// states, with `log π` taken from the current generator snapshot.
#[allow(clippy::too_many_arguments)]
pub fn train_cairl(
    expert: &[Trajectory],
    model: &TabularMdp,
    features: &dyn FeatureMap,
    noise_mode: NoiseMode,
    config: &DiscriminatorConfig,
    solver: GeneratorSolver,
    monitor: Option<&Monitor<'_>>,
    seed: u64,
) -> Result<TrainOutput> {
    config.validate()?;
    if features.num_states() != model.num_states() {
        return Err(Error::Shape { expected: model.num_states(), got: features.num_states() });
    }
    let mut samples = expert_samples(expert, noise_mode);
    if samples.is_empty() {
        return Err(Error::EmptyInput("expert batch has no transitions"));
    }
    let mut disc = Discriminator::new(features, config.reward_model, seed);
    let mut opt = DiscOptimizer::new(&disc, config.learning_rate);
    let vi = |values: Option<Vec<f64>>| ViOptions { initial_values: values, ..ViOptions::default() };

    let mut plan = solve_generator_exact(
        model,
        &LearnedReward::new(&disc.g, features, config.feature_map_mode),
        solver,
        &vi(None),
    )?;
    let n = samples.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let batch = config.batch_size.min(n);
    let mut mb_rng = rng_for(seed, stream::MINIBATCH);
    let mut noise_rng = rng_for(seed, stream::INPUT_NOISE);
    let mut expert_mb = Vec::with_capacity(batch);
    let mut source_mb = Vec::with_capacity(batch);
    let mut generated_mb: Vec<LabeledTransition> = Vec::with_capacity(batch);
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0usize;

    let refresh_log_pi = |samples: &mut [LabeledTransition], policy: &TabularPolicy| {
        for s in samples.iter_mut() {
            s.log_pi = policy.prob(s.state, s.action).ln();
        }
    };
    refresh_log_pi(&mut samples, &plan.policy);

    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps_per_epoch {
            expert_mb.clear();
            source_mb.clear();
            for _ in 0..batch {
                expert_mb.push(samples[mb_rng.random_range(0..n)]);
                source_mb.push(samples[mb_rng.random_range(0..n)]);
            }
            let generated = build_generated_batch(
                &source_mb,
                &plan.policy,
                model,
                derive_seed(derive_seed(seed, stream::GENERATED_BATCH), step as u64),
            );
            generated_mb.clear();
            generated_mb.extend(generated.transitions().copied());
            let sigma = config.noise_sigma(step, total_steps);
            let loss = discriminator_train_step(
                &mut disc,
                features,
                config,
                &expert_mb,
                &generated_mb,
                sigma,
                &mut noise_rng,
                &mut opt,
            )?;
            epoch_loss += loss.total() / steps_per_epoch as f64;
            step += 1;
            if step.is_multiple_of(config.disc_steps_per_gen_update) {
                let reward = LearnedReward::new(&disc.g, features, config.feature_map_mode);
                plan = solve_generator_exact(model, &reward, solver, &vi(Some(plan.values.clone())))?;
                refresh_log_pi(&mut samples, &plan.policy);
            }
        }
        let (gen_return, shape_dist) = match monitor {
            Some(m) => {
                let g = evaluate_policy(m.true_mdp, &plan.policy, m.true_reward);
                if g.is_nan() {
                    return Err(Error::Divergence(format!("generator return is NaN at epoch {epoch}")));
                }
                let d = match m.shape {
                    Some((gt, counts)) => export_shape_graph(&disc.g, counts)
                        .ok()
                        .map(|graph| shape_distance(&graph, gt, &scale_to_ground_truth(&graph, gt))),
                    None => None,
                };
                (Some(g), d)
            }
            None => (None, None),
        };
        history.push(HistoryEntry { epoch, disc_loss: epoch_loss, gen_return, shape_dist });
    }
    Ok(TrainOutput { discriminator: disc, generator: plan.policy, history })
}
