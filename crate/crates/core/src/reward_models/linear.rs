use serde::{Deserialize, Serialize};

use super::FeatureSpec;

/// `bias + w · x`, stored flat as `[bias, w_0, w_1, ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearReward {
    specs: Vec<FeatureSpec>,
    params: Vec<f64>,
}

impl LinearReward {
    pub fn zeros(specs: Vec<FeatureSpec>) -> Self {
        let n = specs.len();
        Self { specs, params: vec![0.0; n + 1] }
    }

    pub fn new(specs: Vec<FeatureSpec>, weights: &[f64], bias: f64) -> Self {
        assert_eq!(specs.len(), weights.len(), "one weight per feature");
        let mut params = Vec::with_capacity(weights.len() + 1);
        params.push(bias);
        params.extend_from_slice(weights);
        Self { specs, params }
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn bias(&self) -> f64 {
        self.params[0]
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[1..]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    #[inline]
    pub(crate) fn eval(&self, x: &[f64]) -> f64 {
        self.params[0] + self.params[1..].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    #[inline]
    pub(crate) fn accumulate_grad(&self, x: &[f64], upstream: f64, grad: &mut [f64]) {
        grad[0] += upstream;
        for (g, v) in grad[1..].iter_mut().zip(x) {
            *g += upstream * v;
        }
    }
}
