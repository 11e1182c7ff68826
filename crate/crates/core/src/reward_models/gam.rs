use serde::{Deserialize, Serialize};

use super::{FeatureSpec, LinearReward};

/// Exactly additive reward: `bias + Σ_j f_j(x_j)` where each `f_j` is a
/// piecewise-constant lookup with one weight per bin (one per level for
/// discrete features).
///
/// Parameters are stored flat as `[bias, f_0 bins.., f_1 bins.., ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamReward {
    specs: Vec<FeatureSpec>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

/// Borrowed view of one shape function.
#[derive(Debug, Clone, Copy)]
pub struct ShapeFunction<'a> {
    pub feature_index: usize,
    pub spec: &'a FeatureSpec,
    pub weights: &'a [f64],
}

impl ShapeFunction<'_> {
    pub fn eval(&self, x: f64) -> f64 {
        self.weights[self.spec.bin_index(x)]
    }
}

impl GamReward {
    pub fn zeros(specs: Vec<FeatureSpec>) -> Self {
        let mut offsets = Vec::with_capacity(specs.len());
        let mut next = 1;
        for spec in &specs {
            offsets.push(next);
            next += spec.num_bins();
        }
        Self { specs, offsets, params: vec![0.0; next] }
    }

    /// GAM with explicit per-feature tables; `tables[j].len()` must equal the
    /// bin count of feature `j`.
    pub fn from_tables(specs: Vec<FeatureSpec>, bias: f64, tables: &[&[f64]]) -> Self {
        let mut gam = Self::zeros(specs);
        assert_eq!(tables.len(), gam.specs.len(), "one table per feature");
        gam.params[0] = bias;
        for (j, table) in tables.iter().enumerate() {
            gam.shape_weights_mut(j).copy_from_slice(table);
        }
        gam
    }

    /// GAM that agrees with a linear model on every bin value.
    pub fn from_linear(linear: &LinearReward) -> Self {
        let mut gam = Self::zeros(linear.specs().to_vec());
        gam.params[0] = linear.bias();
        for j in 0..gam.specs.len() {
            let values = gam.specs[j].bin_values();
            let w = linear.weights()[j];
            for (slot, v) in gam.shape_weights_mut(j).iter_mut().zip(values) {
                *slot = w * v;
            }
        }
        gam
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn bias(&self) -> f64 {
        self.params[0]
    }

    pub fn shape(&self, j: usize) -> ShapeFunction<'_> {
        ShapeFunction { feature_index: j, spec: &self.specs[j], weights: self.shape_weights(j) }
    }

    pub fn shape_weights(&self, j: usize) -> &[f64] {
        let start = self.offsets[j];
        &self.params[start..start + self.specs[j].num_bins()]
    }

    pub fn shape_weights_mut(&mut self, j: usize) -> &mut [f64] {
        let start = self.offsets[j];
        let len = self.specs[j].num_bins();
        &mut self.params[start..start + len]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    #[inline]
    pub(crate) fn eval(&self, x: &[f64]) -> f64 {
        let mut out = self.params[0];
        for (j, spec) in self.specs.iter().enumerate() {
            out += self.params[self.offsets[j] + spec.bin_index(x[j])];
        }
        out
    }

    #[inline]
    pub(crate) fn accumulate_grad(&self, x: &[f64], upstream: f64, grad: &mut [f64]) {
        grad[0] += upstream;
        for (j, spec) in self.specs.iter().enumerate() {
            grad[self.offsets[j] + spec.bin_index(x[j])] += upstream;
        }
    }
}
