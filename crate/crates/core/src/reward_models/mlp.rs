use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::FeatureSpec;

/// Fully connected network with tanh hidden units and a scalar linear output.
///
/// Parameters are stored flat, layer by layer, as the row-major weight matrix
/// (`out × in`) followed by the bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpReward {
    specs: Vec<FeatureSpec>,
    /// `[inputs, hidden.., 1]`.
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl MlpReward {
    /// Glorot-uniform hidden layers; the output layer starts at zero so a
    /// fresh model outputs 0 everywhere.
    pub fn new(specs: Vec<FeatureSpec>, hidden: &[usize], seed: u64) -> Self {
        let mut sizes = vec![specs.len()];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let last = sizes.len() - 2;
        for (l, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(if l == last { 0.0 } else { rng.random_range(-limit..limit) });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { specs, sizes, params }
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Forward pass returning every layer's activations (input first).
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let mut offset = 0;
        let layers = self.sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let input = &acts[l];
            let out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let z = b[o] + w[o * fan_in..(o + 1) * fan_in].iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                    if l + 1 < layers {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub(crate) fn eval(&self, x: &[f64]) -> f64 {
        self.activations(x).last().expect("output layer")[0]
    }

    pub(crate) fn accumulate_grad(&self, x: &[f64], upstream: f64, grad: &mut [f64]) {
        let acts = self.activations(x);
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        // delta = dL/dz for the current layer's pre-activations.
        let mut delta = vec![upstream];
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let base = offsets[l];
            let input = &acts[l];
            for o in 0..fan_out {
                for i in 0..fan_in {
                    grad[base + o * fan_in + i] += delta[o] * input[i];
                }
                grad[base + fan_in * fan_out + o] += delta[o];
            }
            if l > 0 {
                let w = &self.params[base..base + fan_in * fan_out];
                delta = (0..fan_in)
                    .map(|i| {
                        let back: f64 = (0..fan_out).map(|o| w[o * fan_in + i] * delta[o]).sum();
                        // acts[l] is tanh output of the previous layer.
                        back * (1.0 - input[i] * input[i])
                    })
                    .collect();
            }
        }
    }
}
