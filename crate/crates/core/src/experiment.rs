//! Experiment configuration and the end-to-end sepsis pipeline: expert
//! generation, training for every method, and evaluation against the ground
//! truth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversarial::{
    train_cairl, Discriminator, DiscriminatorConfig, FeatureMapMode, HistoryEntry, LearnedReward, Monitor,
};
use crate::baselines::{behavior_clone, mma_solve, MmaConfig, MmaMode, MmaResult};
use crate::error::{Error, Result};
use crate::estimation::{
    compute_iptw_weights, fit_behavior_policy, fit_marginal_actions, fit_transition_model, EstimatedTransition,
    DEFAULT_CLIP_MAX, DEFAULT_POLICY_SMOOTHING, DEFAULT_TRANSITION_SMOOTHING,
};
use crate::evaluation::{
    action_match_accuracy, ground_truth_graph, scale_to_ground_truth_with, shape_distance_with, DistWeighting,
    ResultRow, ScaleConstraint, ShapeGraph,
};
use crate::generator::{soft_q_learn, GeneratorSolver, SoftQConfig};
use crate::mdp::{
    evaluate_policy, sample_trajectories, value_iteration, NextStateReward, RewardFunction, StateReward, TabularMdp,
    TabularPolicy, Trajectory,
};
use crate::reward_models::{export_shape_graph, FeatureCounts, FeatureMap, LinearReward, ModelKind, RewardModel};
use crate::rng::{derive_seed, stream};
use crate::sepsis::{build_sepsis_mdp, DynamicsConfig, GroundTruthKind, GroundTruthReward, NoiseMode, SepsisFeatures};

/// Schema version of serialized run models.
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Max-margin apprenticeship learning on current-state features.
    Mma,
    /// Apprenticeship learning on expected next-state features.
    Cirl,
    /// Adversarial IRL with a current-state reward term.
    Airl,
    /// Adversarial IRL with a next-state reward term.
    Cairl,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mma => "mma",
            Method::Cirl => "cirl",
            Method::Airl => "airl",
            Method::Cairl => "cairl",
        }
    }

    pub fn is_adversarial(&self) -> bool {
        matches!(self, Method::Airl | Method::Cairl)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Transition model the learner plans with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionSource {
    #[default]
    True,
    /// IPTW-weighted MLE fitted on the expert batch.
    Estimated,
}

/// How the evaluated policy is derived from a learned reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyExtraction {
    /// Hard value iteration on the planning model.
    #[default]
    Greedy,
    /// Offline soft-Q learning on the expert batch with a BC anchor.
    SoftQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialSettings {
    pub discount_shaping: bool,
    pub label_smoothing: f64,
    pub input_noise_sigma: f64,
    pub noise_decay_fraction: f64,
    pub disc_steps_per_gen_update: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Log generator return and shape distance every epoch (costs one
    /// policy evaluation per epoch).
    pub monitor: bool,
}

impl Default for AdversarialSettings {
    fn default() -> Self {
        let d = DiscriminatorConfig::default();
        Self {
            discount_shaping: d.discount_shaping,
            label_smoothing: d.label_smoothing,
            input_noise_sigma: d.input_noise_sigma,
            noise_decay_fraction: d.noise_decay_fraction,
            disc_steps_per_gen_update: d.disc_steps_per_gen_update,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            monitor: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSettings {
    pub policy_smoothing: f64,
    pub transition_smoothing: f64,
    pub clip_max: f64,
    /// Weight transitions by IPTW when fitting the model.
    pub iptw: bool,
}

impl Default for EstimationSettings {
    fn default() -> Self {
        Self {
            policy_smoothing: DEFAULT_POLICY_SMOOTHING,
            transition_smoothing: DEFAULT_TRANSITION_SMOOTHING,
            clip_max: DEFAULT_CLIP_MAX,
            iptw: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub scale_constraint: ScaleConstraint,
    pub dist_weighting: DistWeighting,
}

/// One `(method, reward model)` pair of the sweep matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub method: Method,
    pub reward_model: ModelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub mdp_kinds: Vec<GroundTruthKind>,
    pub gammas: Vec<f64>,
    pub variants: Vec<Variant>,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        let v = |method, reward_model| Variant { method, reward_model };
        Self {
            mdp_kinds: vec![GroundTruthKind::GamMdp, GroundTruthKind::LinearMdp],
            gammas: vec![0.9, 0.5],
            variants: vec![
                v(Method::Mma, ModelKind::Linear),
                v(Method::Cirl, ModelKind::Linear),
                v(Method::Airl, ModelKind::Gam),
                v(Method::Cairl, ModelKind::Linear),
                v(Method::Cairl, ModelKind::Mlp),
                v(Method::Cairl, ModelKind::Gam),
            ],
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp_kind: GroundTruthKind,
    pub gamma: f64,
    pub method: Method,
    pub reward_model: ModelKind,
    pub transition: TransitionSource,
    pub policy: PolicyExtraction,
    /// Trajectories in each of the train and test batches.
    pub n_trajectories: usize,
    pub seeds: Vec<u64>,
    pub noise_mode: NoiseMode,
    pub dynamics: DynamicsConfig,
    pub adversarial: AdversarialSettings,
    pub generator: GeneratorSolver,
    pub soft_q: SoftQConfig,
    pub mma: MmaConfig,
    pub estimation: EstimationSettings,
    pub evaluation: EvaluationSettings,
    pub sweep: SweepSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mdp_kind: GroundTruthKind::GamMdp,
            gamma: 0.9,
            method: Method::Cairl,
            reward_model: ModelKind::Gam,
            transition: TransitionSource::True,
            policy: PolicyExtraction::Greedy,
            n_trajectories: 5000,
            seeds: vec![0, 1, 2, 3, 4],
            noise_mode: NoiseMode::PerTransition,
            dynamics: DynamicsConfig::default(),
            adversarial: AdversarialSettings::default(),
            generator: GeneratorSolver::default(),
            soft_q: SoftQConfig::default(),
            mma: MmaConfig::default(),
            estimation: EstimationSettings::default(),
            evaluation: EvaluationSettings::default(),
            sweep: SweepSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::validation(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::validation(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.n_trajectories == 0 {
            return Err(Error::validation("n_trajectories must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds must not be empty"));
        }
        if !self.method.is_adversarial() && self.reward_model != ModelKind::Linear {
            return Err(Error::validation(format!(
                "method {} learns a linear reward; reward_model must be \"linear\", got \"{}\"",
                self.method, self.reward_model
            )));
        }
        let e = &self.estimation;
        if !(e.policy_smoothing >= 0.0 && e.transition_smoothing >= 0.0) {
            return Err(Error::validation("estimation smoothing must be non-negative"));
        }
        if e.clip_max.is_nan() || e.clip_max <= 0.0 {
            return Err(Error::validation("estimation.clip_max must be positive"));
        }
        if self.policy == PolicyExtraction::SoftQ && e.policy_smoothing <= 0.0 {
            return Err(Error::validation("soft-Q extraction needs estimation.policy_smoothing > 0"));
        }
        if let GeneratorSolver::Soft { alpha } = self.generator {
            if alpha.is_nan() || alpha <= 0.0 {
                return Err(Error::validation(format!("generator.alpha must be positive, got {alpha}")));
            }
        }
        if self.sweep.gammas.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return Err(Error::validation("sweep.gammas must lie in (0, 1)"));
        }
        for v in &self.sweep.variants {
            if !v.method.is_adversarial() && v.reward_model != ModelKind::Linear {
                return Err(Error::validation(format!("sweep variant {} must use a linear reward", v.method)));
            }
        }
        self.dynamics.validate()?;
        self.discriminator_config().validate()?;
        self.soft_q.validate()?;
        if self.mma.epsilon.is_nan() || self.mma.epsilon <= 0.0 {
            return Err(Error::validation("mma.epsilon must be positive"));
        }
        Ok(())
    }

    /// Discriminator settings for the configured method.
    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        let a = &self.adversarial;
        DiscriminatorConfig {
            feature_map_mode: match self.method {
                Method::Airl => FeatureMapMode::CurrentState,
                _ => FeatureMapMode::NextState,
            },
            gamma: self.gamma,
            discount_shaping: a.discount_shaping,
            label_smoothing: a.label_smoothing,
            input_noise_sigma: a.input_noise_sigma,
            noise_decay_fraction: a.noise_decay_fraction,
            disc_steps_per_gen_update: a.disc_steps_per_gen_update,
            batch_size: a.batch_size,
            learning_rate: a.learning_rate,
            epochs: a.epochs,
            reward_model: self.reward_model,
        }
    }

    pub fn mma_config(&self) -> MmaConfig {
        MmaConfig {
            mode: if self.method == Method::Cirl { MmaMode::ExpectedNextState } else { MmaMode::CurrentState },
            ..self.mma.clone()
        }
    }

    /// Row label of the results table, e.g. `gam-cairl` or `mma`.
    pub fn label(&self) -> String {
        if self.method.is_adversarial() {
            format!("{}-{}", self.reward_model, self.method)
        } else {
            self.method.to_string()
        }
    }

    /// Directory name of one run.
    pub fn run_name(&self, seed: u64) -> String {
        format!("{}_{}_g{}_s{}", self.label(), self.mdp_kind, self.gamma, seed)
    }

    /// One config per sweep cell, seeds unchanged.
    pub fn sweep_cells(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for &mdp_kind in &self.sweep.mdp_kinds {
            for &gamma in &self.sweep.gammas {
                for v in &self.sweep.variants {
                    out.push(ExperimentConfig {
                        mdp_kind,
                        gamma,
                        method: v.method,
                        reward_model: v.reward_model,
                        ..self.clone()
                    });
                }
            }
        }
        out
    }
}

/// The true environment of one config: dynamics, features, ground truth,
/// expert and uniform policies.
pub struct Environment {
    pub mdp: TabularMdp,
    pub features: SepsisFeatures,
    pub truth: GroundTruthReward,
    pub truth_reward: NextStateReward,
    pub expert_policy: TabularPolicy,
    pub expert_return: f64,
    pub uniform_return: f64,
}

impl Environment {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let mdp = build_sepsis_mdp(&cfg.dynamics, cfg.gamma)?;
        let truth = GroundTruthReward::new(cfg.mdp_kind);
        let truth_reward = truth.next_state_reward();
        let expert_policy = value_iteration(&mdp, &truth_reward, 1e-8)?.policy;
        let expert_return = evaluate_policy(&mdp, &expert_policy, &truth_reward);
        let uniform = TabularPolicy::uniform(mdp.num_states(), mdp.num_actions());
        let uniform_return = evaluate_policy(&mdp, &uniform, &truth_reward);
        Ok(Self { mdp, features: SepsisFeatures::new(), truth, truth_reward, expert_policy, expert_return, uniform_return })
    }

    pub fn normalized_regret(&self, learned_return: f64) -> f64 {
        crate::evaluation::normalized_regret(self.expert_return, learned_return, self.uniform_return)
    }

    /// Train and test batches from the expert policy.
    pub fn expert_batches(&self, n: usize, seed: u64) -> (Vec<Trajectory>, Vec<Trajectory>) {
        let train = sample_trajectories(&self.mdp, &self.expert_policy, n, derive_seed(seed, stream::EXPERT_TRAIN));
        let test = sample_trajectories(&self.mdp, &self.expert_policy, n, derive_seed(seed, stream::EXPERT_TEST));
        (train, test)
    }

    /// Counts of the reward features of every logged next state, with the
    /// same noise draws the discriminator sees.
    pub fn feature_counts(&self, trajectories: &[Trajectory], noise_mode: NoiseMode) -> FeatureCounts {
        let specs = self.features.reward_specs();
        let mut counts = FeatureCounts::zeros(specs);
        let mut phi = vec![0.0; specs.len()];
        for s in crate::adversarial::expert_samples(trajectories, noise_mode) {
            self.features.reward_features(s.next_state, s.noise, &mut phi);
            counts.add(specs, &phi);
        }
        counts
    }
}

/// A learned reward as stored in a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum LearnedModel {
    Adversarial { feature_map_mode: FeatureMapMode, discriminator: Discriminator },
    Linear { mode: MmaMode, weights: Vec<f64> },
}

impl LearnedModel {
    /// The reward term `g` as a feature-space model.
    pub fn reward_model(&self, features: &dyn FeatureMap) -> RewardModel {
        match self {
            LearnedModel::Adversarial { discriminator, .. } => discriminator.g.clone(),
            LearnedModel::Linear { weights, .. } => {
                RewardModel::Linear(LinearReward::new(features.reward_specs().to_vec(), weights, 0.0))
            }
        }
    }

    /// Tabular reward the learned policy is planned against.
    pub fn planning_reward(&self, features: &dyn FeatureMap) -> Box<dyn RewardFunction> {
        match self {
            LearnedModel::Adversarial { feature_map_mode, discriminator } => {
                Box::new(LearnedReward::new(&discriminator.g, features, *feature_map_mode))
            }
            LearnedModel::Linear { mode, weights } => {
                let phi = crate::baselines::state_feature_table(features);
                let table: Vec<f64> = phi.iter().map(|x| x.iter().zip(weights).map(|(a, b)| a * b).sum()).collect();
                match mode {
                    MmaMode::CurrentState => Box::new(StateReward(table)),
                    MmaMode::ExpectedNextState => Box::new(NextStateReward(table)),
                }
            }
        }
    }

    /// Centered shape graph, when the model is additive.
    pub fn shape_graph(&self, features: &dyn FeatureMap, counts: &FeatureCounts) -> Option<ShapeGraph> {
        export_shape_graph(&self.reward_model(features), counts).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub v: u32,
    pub method: Method,
    pub model: LearnedModel,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.v != MODEL_VERSION {
            return Err(Error::validation(format!("model schema version {} is not supported (expected {MODEL_VERSION})", file.v)));
        }
        Ok(file)
    }
}

/// Everything produced by one training run.
pub struct TrainedRun {
    pub model: LearnedModel,
    pub policy: TabularPolicy,
    pub history: Vec<HistoryEntry>,
    pub mma: Option<MmaResult>,
    pub shape: Option<ShapeGraph>,
    pub estimated: Option<EstimatedTransition>,
}

/// Fits the IPTW-weighted transition model and returns it with the planning
/// MDP built from it.
pub fn estimate_transitions(
    cfg: &ExperimentConfig,
    env: &Environment,
    train: &[Trajectory],
) -> Result<(EstimatedTransition, TabularMdp)> {
    let (ns, na) = (env.mdp.num_states(), env.mdp.num_actions());
    let e = &cfg.estimation;
    let weights = if e.iptw {
        let behavior = fit_behavior_policy(train, ns, na, e.policy_smoothing)?;
        let marginal = fit_marginal_actions(train, na)?;
        Some(compute_iptw_weights(train, &behavior, &marginal, e.clip_max)?)
    } else {
        None
    };
    let est = fit_transition_model(train, weights.as_ref(), ns, na, e.transition_smoothing)?;
    let mdp = est.to_mdp(&env.mdp)?;
    Ok((est, mdp))
}

/// Trains the configured method on `train` and extracts its policy.
pub fn train_method(cfg: &ExperimentConfig, env: &Environment, train: &[Trajectory], seed: u64) -> Result<TrainedRun> {
    let (estimated, planning) = match cfg.transition {
        TransitionSource::True => (None, env.mdp.clone()),
        TransitionSource::Estimated => {
            let (est, mdp) = estimate_transitions(cfg, env, train)?;
            (Some(est), mdp)
        }
    };
    let counts = env.feature_counts(train, cfg.noise_mode);
    let (model, history, mma) = if cfg.method.is_adversarial() {
        let dcfg = cfg.discriminator_config();
        let gt = ground_truth_graph(cfg.mdp_kind, &counts)?;
        let monitor = Monitor { true_mdp: &env.mdp, true_reward: &env.truth_reward, shape: Some((&gt, &counts)) };
        let out = train_cairl(
            train,
            &planning,
            &env.features,
            cfg.noise_mode,
            &dcfg,
            cfg.generator,
            cfg.adversarial.monitor.then_some(&monitor),
            seed,
        )?;
        let model = LearnedModel::Adversarial { feature_map_mode: dcfg.feature_map_mode, discriminator: out.discriminator };
        (model, out.history, None)
    } else {
        let mcfg = cfg.mma_config();
        let out = mma_solve(&planning, train, &env.features, &mcfg, seed)?;
        (LearnedModel::Linear { mode: mcfg.mode, weights: out.weights.clone() }, Vec::new(), Some(out))
    };
    let policy = match &mma {
        // The projection method returns the candidate closest to the expert,
        // not the greedy policy of the last weight vector.
        Some(out) => out.policy.clone(),
        None => extract_policy(cfg, &planning, &model, &env.features, train, seed)?,
    };
    let shape = model.shape_graph(&env.features, &counts);
    Ok(TrainedRun { model, policy, history, mma, shape, estimated })
}

/// The evaluated policy of a learned reward on the planning model.
pub fn extract_policy(
    cfg: &ExperimentConfig,
    planning: &TabularMdp,
    model: &LearnedModel,
    features: &dyn FeatureMap,
    train: &[Trajectory],
    seed: u64,
) -> Result<TabularPolicy> {
    let reward = model.planning_reward(features);
    match cfg.policy {
        PolicyExtraction::Greedy => Ok(value_iteration(planning, reward.as_ref(), 1e-8)?.policy),
        PolicyExtraction::SoftQ => {
            let bc = behavior_clone(train, planning.num_states(), planning.num_actions(), cfg.estimation.policy_smoothing)?;
            Ok(soft_q_learn(train, planning, reward.as_ref(), &bc, &cfg.soft_q, seed)?.policy)
        }
    }
}

/// Scores a policy and, when given, a shape graph against the ground truth.
pub fn evaluate_run(
    cfg: &ExperimentConfig,
    env: &Environment,
    policy: &TabularPolicy,
    shape: Option<&ShapeGraph>,
    test: &[Trajectory],
    seed: u64,
) -> Result<ResultRow> {
    let policy_return = evaluate_policy(&env.mdp, policy, &env.truth_reward);
    let dist = match shape {
        Some(graph) => Some(shape_dist(cfg, graph)?),
        None => None,
    };
    Ok(ResultRow {
        method: cfg.label(),
        mdp: cfg.mdp_kind.to_string(),
        gamma: cfg.gamma,
        policy_return,
        dist,
        accuracy: action_match_accuracy(policy, test),
        seed,
    })
}

/// Shape distance of a model graph to the ground truth under the counts
/// recorded in the graph itself.
pub fn shape_dist(cfg: &ExperimentConfig, graph: &ShapeGraph) -> Result<f64> {
    let counts = FeatureCounts { counts: graph.features.iter().map(|f| f.points.iter().map(|p| p.count).collect()).collect() };
    let gt = ground_truth_graph(cfg.mdp_kind, &counts)?;
    let ev = cfg.evaluation;
    let scaling = scale_to_ground_truth_with(graph, &gt, ev.scale_constraint, ev.dist_weighting);
    Ok(shape_distance_with(graph, &gt, &scaling, ev.dist_weighting))
}

/// Result of [`run_cell`] for one seed.
pub struct CellOutput {
    pub row: ResultRow,
    pub run: TrainedRun,
    pub normalized_regret: f64,
}

/// Full in-memory pipeline for one config and seed.
pub fn run_cell(cfg: &ExperimentConfig, seed: u64) -> Result<CellOutput> {
    cfg.validate()?;
    let env = Environment::new(cfg)?;
    run_cell_in(cfg, &env, seed)
}

/// [`run_cell`] with a prebuilt environment.
pub fn run_cell_in(cfg: &ExperimentConfig, env: &Environment, seed: u64) -> Result<CellOutput> {
    let (train, test) = env.expert_batches(cfg.n_trajectories, seed);
    let run = train_method(cfg, env, &train, seed)?;
    let row = evaluate_run(cfg, env, &run.policy, run.shape.as_ref(), &test, seed)?;
    let normalized_regret = env.normalized_regret(row.policy_return);
    Ok(CellOutput { row, run, normalized_regret })
}

/// Runs every sweep cell and seed on a pool of scoped threads. Rows come back
/// in cell-then-seed order regardless of scheduling.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let jobs: Vec<(ExperimentConfig, u64)> =
        cfg.sweep_cells().into_iter().flat_map(|c| c.seeds.clone().into_iter().map(move |s| (c.clone(), s))).collect();
    let threads = match cfg.sweep.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    };
    run_parallel(&jobs, threads, |(c, s)| run_cell(c, *s).map(|o| o.row))
}

/// Maps `f` over `jobs` with `threads` workers, preserving order and
/// returning the first error by job index.
pub fn run_parallel<J: Sync, T: Send>(
    jobs: &[J],
    threads: usize,
    f: impl Fn(&J) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<T>>> = (0..jobs.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                results.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every job ran")).collect()
}
