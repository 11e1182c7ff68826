//! Parametric reward families with analytic gradients.
//!
//! All three families expose a flat parameter vector so one [`AdamState`] can
//! drive any of them. Only the additive families (GAM, linear) can be exported
//! as exact per-feature shape graphs.

mod adam;
mod features;
mod gam;
mod linear;
mod mlp;

pub use adam::{adam_step, AdamState};
pub use features::{FeatureKind, FeatureMap, FeatureSpec, TableFeatures};
pub use gam::{GamReward, ShapeFunction};
pub use linear::LinearReward;
pub use mlp::MlpReward;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{FeatureShape, ShapeGraph, ShapePoint};

/// Default hidden layout of the MLP family.
pub const MLP_HIDDEN: [usize; 2] = [32, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gam,
    Linear,
    Mlp,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Gam => "gam",
            ModelKind::Linear => "linear",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum RewardModel {
    Gam(GamReward),
    Linear(LinearReward),
    Mlp(MlpReward),
}

impl RewardModel {
    /// Fresh model of the given family; GAM and linear start at zero.
    pub fn init(kind: ModelKind, specs: Vec<FeatureSpec>, seed: u64) -> Self {
        match kind {
            ModelKind::Gam => RewardModel::Gam(GamReward::zeros(specs)),
            ModelKind::Linear => RewardModel::Linear(LinearReward::zeros(specs)),
            ModelKind::Mlp => RewardModel::Mlp(MlpReward::new(specs, &MLP_HIDDEN, seed)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            RewardModel::Gam(_) => ModelKind::Gam,
            RewardModel::Linear(_) => ModelKind::Linear,
            RewardModel::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        match self {
            RewardModel::Gam(m) => m.specs(),
            RewardModel::Linear(m) => m.specs(),
            RewardModel::Mlp(m) => m.specs(),
        }
    }

    pub fn arity(&self) -> usize {
        self.specs().len()
    }

    pub fn params(&self) -> &[f64] {
        match self {
            RewardModel::Gam(m) => m.params(),
            RewardModel::Linear(m) => m.params(),
            RewardModel::Mlp(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            RewardModel::Gam(m) => m.params_mut(),
            RewardModel::Linear(m) => m.params_mut(),
            RewardModel::Mlp(m) => m.params_mut(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().len()
    }

    fn check_arity(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.arity() {
            Ok(())
        } else {
            Err(Error::Shape { expected: self.arity(), got: x.len() })
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_arity(x)?;
        Ok(self.eval(x))
    }

    /// Forward pass without the arity check; callers guarantee `x.len()`.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            RewardModel::Gam(m) => m.eval(x),
            RewardModel::Linear(m) => m.eval(x),
            RewardModel::Mlp(m) => m.eval(x),
        }
    }

    /// Adds `upstream · ∂forward/∂θ` into `grad`.
    pub fn backward(&self, x: &[f64], upstream: f64, grad: &mut [f64]) -> Result<()> {
        self.check_arity(x)?;
        if grad.len() != self.num_params() {
            return Err(Error::Shape { expected: self.num_params(), got: grad.len() });
        }
        self.accumulate_grad(x, upstream, grad);
        Ok(())
    }

    #[inline]
    pub(crate) fn accumulate_grad(&self, x: &[f64], upstream: f64, grad: &mut [f64]) {
        match self {
            RewardModel::Gam(m) => m.accumulate_grad(x, upstream, grad),
            RewardModel::Linear(m) => m.accumulate_grad(x, upstream, grad),
            RewardModel::Mlp(m) => m.accumulate_grad(x, upstream, grad),
        }
    }

    /// Fresh gradient vector of `upstream · ∂forward/∂θ`.
    pub fn gradient(&self, x: &[f64], upstream: f64) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.num_params()];
        self.backward(x, upstream, &mut grad)?;
        Ok(grad)
    }

    /// Per-feature `(value, contribution)` pairs, uncentered. Fails for the
    /// MLP, whose output is not a sum of per-feature terms.
    pub fn feature_contributions(&self) -> Result<Vec<Vec<(f64, f64)>>> {
        match self {
            RewardModel::Gam(g) => Ok((0..g.specs().len())
                .map(|j| g.specs()[j].bin_values().into_iter().zip(g.shape_weights(j).iter().copied()).collect())
                .collect()),
            RewardModel::Linear(l) => Ok(l
                .specs()
                .iter()
                .zip(l.weights())
                .map(|(spec, &w)| spec.bin_values().into_iter().map(|v| (v, w * v)).collect())
                .collect()),
            RewardModel::Mlp(_) => Err(Error::UnsupportedModel("MLP rewards have no additive shape functions")),
        }
    }
}

/// Per-feature, per-bin occurrence counts of reward features in a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCounts {
    pub counts: Vec<Vec<f64>>,
}

impl FeatureCounts {
    pub fn zeros(specs: &[FeatureSpec]) -> Self {
        Self { counts: specs.iter().map(|s| vec![0.0; s.num_bins()]).collect() }
    }

    pub fn add(&mut self, specs: &[FeatureSpec], x: &[f64]) {
        for (j, spec) in specs.iter().enumerate() {
            self.counts[j][spec.bin_index(x[j])] += 1.0;
        }
    }

    pub fn from_rows<'a>(specs: &[FeatureSpec], rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut out = Self::zeros(specs);
        for x in rows {
            out.add(specs, x);
        }
        out
    }
}

/// Exports an additive model as a count-annotated shape graph, centered so
/// every feature's count-weighted mean contribution is zero.
pub fn export_shape_graph(model: &RewardModel, counts: &FeatureCounts) -> Result<ShapeGraph> {
    let contributions = model.feature_contributions()?;
    if counts.counts.len() != contributions.len() {
        return Err(Error::Shape { expected: contributions.len(), got: counts.counts.len() });
    }
    let features = model
        .specs()
        .iter()
        .zip(contributions)
        .zip(&counts.counts)
        .map(|((spec, pairs), c)| FeatureShape {
            name: spec.name.clone(),
            points: pairs
                .into_iter()
                .zip(c)
                .map(|((value, contribution), &count)| ShapePoint { value, contribution, count })
                .collect(),
        })
        .collect();
    let mut graph = ShapeGraph { features };
    graph.center();
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sepsis::{vital_combinations, GroundTruthKind, GroundTruthReward, SepsisFeatures};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn specs() -> Vec<FeatureSpec> {
        SepsisFeatures::new().reward_specs().to_vec()
    }

    fn random_input(rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![
            rng.random_range(0..3) as f64,
            rng.random_range(0..3) as f64,
            rng.random_range(0..2) as f64,
            rng.random_range(0..5) as f64,
            rng.random::<f64>(),
        ]
    }

    fn ground_truth_gam(kind: GroundTruthKind) -> GamReward {
        let gt = GroundTruthReward::new(kind);
        let t = gt.tables();
        GamReward::from_tables(specs(), 0.0, &[t[0], t[1], t[2], t[3], &[0.0; 16]])
    }

    #[test]
    fn zero_gam_outputs_bias() {
        let mut g = GamReward::zeros(specs());
        g.params_mut()[0] = 0.37;
        let m = RewardModel::Gam(g);
        assert_eq!(m.forward(&[2.0, 0.0, 1.0, 3.0, 0.4]).unwrap(), 0.37);
    }

    #[test]
    fn arity_mismatch_is_a_shape_error() {
        let m = RewardModel::init(ModelKind::Linear, specs(), 0);
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(Error::Shape { expected: 5, got: 2 })));
    }

    #[test]
    fn ground_truth_gam_reproduces_reward_on_all_vitals() {
        for kind in [GroundTruthKind::GamMdp, GroundTruthKind::LinearMdp] {
            let gt = GroundTruthReward::new(kind);
            let m = RewardModel::Gam(ground_truth_gam(kind));
            for v in vital_combinations() {
                let x = [v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64, 0.61];
                assert_eq!(m.forward(&x).unwrap(), gt.of_vitals(v));
            }
        }
    }

    #[test]
    fn linear_forward() {
        let m = RewardModel::Linear(LinearReward::new(specs(), &[1.0, 0.0, 0.0, 0.0, 0.0], 0.0));
        assert_eq!(m.forward(&[2.0, 1.0, 0.0, 4.0, 0.3]).unwrap(), 2.0);
    }

    #[test]
    fn gam_gradient_is_indicator_of_active_bins() {
        let m = RewardModel::init(ModelKind::Gam, specs(), 0);
        let x = [2.0, 0.0, 1.0, 3.0, 0.51];
        let g = m.gradient(&x, 1.0).unwrap();
        let RewardModel::Gam(gam) = &m else { unreachable!() };
        let mut expected = vec![0.0; m.num_params()];
        expected[0] = 1.0;
        let mut offset = 1;
        for (j, spec) in gam.specs().iter().enumerate() {
            expected[offset + spec.bin_index(x[j])] = 1.0;
            offset += spec.num_bins();
        }
        assert_eq!(g, expected);
    }

    #[test]
    fn linear_gradient_is_input() {
        let m = RewardModel::init(ModelKind::Linear, specs(), 0);
        let x = [2.0, 0.0, 1.0, 3.0, 0.51];
        let g = m.gradient(&x, 1.0).unwrap();
        assert_eq!(g[0], 1.0);
        assert_eq!(&g[1..], &x);
    }

    /// Central finite differences of the forward pass w.r.t. every parameter.
    pub(crate) fn finite_difference_grad(model: &RewardModel, x: &[f64], step: f64) -> Vec<f64> {
        let mut m = model.clone();
        (0..m.num_params())
            .map(|i| {
                let orig = m.params()[i];
                m.params_mut()[i] = orig + step;
                let plus = m.eval(x);
                m.params_mut()[i] = orig - step;
                let minus = m.eval(x);
                m.params_mut()[i] = orig;
                (plus - minus) / (2.0 * step)
            })
            .collect()
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn all_families_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for draw in 0..30 {
            for kind in [ModelKind::Gam, ModelKind::Linear, ModelKind::Mlp] {
                let mut m = RewardModel::init(kind, specs(), draw);
                for p in m.params_mut() {
                    *p = rng.random_range(-1.0..1.0);
                }
                let x = random_input(&mut rng);
                let analytic = m.gradient(&x, 1.0).unwrap();
                let numeric = finite_difference_grad(&m, &x, 1e-5);
                for (a, n) in analytic.iter().zip(&numeric) {
                    assert!(relative_error(*a, *n) < 1e-4, "{kind}: {a} vs {n}");
                }
            }
        }
    }

    #[test]
    fn gam_is_exactly_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = GamReward::zeros(specs());
        for p in g.params_mut() {
            *p = rng.random_range(-2.0..2.0);
        }
        let m = RewardModel::Gam(g.clone());
        for v in vital_combinations() {
            let x = [v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64, 0.2];
            let base = m.eval(&x);
            for (j, spec) in g.specs().iter().enumerate() {
                for (b, value) in spec.bin_values().into_iter().enumerate() {
                    let mut y = x;
                    y[j] = value;
                    let expected = g.shape_weights(j)[b] - g.shape_weights(j)[spec.bin_index(x[j])];
                    assert!((m.eval(&y) - base - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gam_from_linear_agrees_on_bin_values() {
        let lin = LinearReward::new(specs(), &[-0.3, -0.4, 0.6, 0.2, 0.9], 0.5);
        let gam = GamReward::from_linear(&lin);
        let (l, g) = (RewardModel::Linear(lin), RewardModel::Gam(gam));
        for v in vital_combinations() {
            for noise in specs()[4].bin_values() {
                let x = [v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64, noise];
                assert!((l.eval(&x) - g.eval(&x)).abs() < 1e-12);
            }
        }
    }

    fn uniform_counts(per_bin: f64) -> FeatureCounts {
        FeatureCounts { counts: specs().iter().map(|s| vec![per_bin; s.num_bins()]).collect() }
    }

    #[test]
    fn ground_truth_exports_its_tables_up_to_constants() {
        let gt = GroundTruthReward::new(GroundTruthKind::GamMdp);
        let graph = export_shape_graph(&RewardModel::Gam(ground_truth_gam(GroundTruthKind::GamMdp)), &uniform_counts(3.0))
            .unwrap();
        for (feature, table) in graph.features.iter().zip(gt.tables()) {
            let shift = feature.points[0].contribution - table[0];
            for (p, t) in feature.points.iter().zip(table) {
                assert!((p.contribution - t - shift).abs() < 1e-12);
            }
        }
        assert!(graph.features[4].points.iter().all(|p| p.contribution.abs() < 1e-12));
    }

    #[test]
    fn linear_export_is_collinear() {
        let m = RewardModel::Linear(LinearReward::new(specs(), &[-0.3, -0.4, 0.6, 0.2, 0.9], 0.1));
        let graph = export_shape_graph(&m, &uniform_counts(1.0)).unwrap();
        for f in &graph.features {
            let p = &f.points;
            let slope = (p[1].contribution - p[0].contribution) / (p[1].value - p[0].value);
            for q in p {
                let predicted = p[0].contribution + slope * (q.value - p[0].value);
                assert!((q.contribution - predicted).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn export_counts_sum_to_transitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..250).map(|_| random_input(&mut rng)).collect();
        let counts = FeatureCounts::from_rows(&specs(), rows.iter().map(|r| r.as_slice()));
        let graph = export_shape_graph(&RewardModel::init(ModelKind::Gam, specs(), 0), &counts).unwrap();
        for f in &graph.features {
            assert_eq!(f.points.iter().map(|p| p.count).sum::<f64>(), 250.0);
        }
    }

    #[test]
    fn mlp_export_is_unsupported() {
        let m = RewardModel::init(ModelKind::Mlp, specs(), 0);
        assert!(matches!(export_shape_graph(&m, &uniform_counts(1.0)), Err(Error::UnsupportedModel(_))));
    }
}
