use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FeatureKind {
    /// Integer levels `0..levels`.
    Discrete { levels: usize },
    /// Real values in `[lo, hi)`, binned into `bins` equal-width bins by
    /// additive models.
    Continuous { lo: f64, hi: f64, bins: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn discrete(name: &str, levels: usize) -> Self {
        Self { name: name.to_string(), kind: FeatureKind::Discrete { levels } }
    }

    pub fn continuous(name: &str, lo: f64, hi: f64, bins: usize) -> Self {
        Self { name: name.to_string(), kind: FeatureKind::Continuous { lo, hi, bins } }
    }

    pub fn num_bins(&self) -> usize {
        match self.kind {
            FeatureKind::Discrete { levels } => levels,
            FeatureKind::Continuous { bins, .. } => bins,
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, FeatureKind::Continuous { .. })
    }

    /// Bin holding `x`; out-of-range inputs clamp to the end bins.
    #[inline]
    pub fn bin_index(&self, x: f64) -> usize {
        match self.kind {
            FeatureKind::Discrete { levels } => (x.round().max(0.0) as usize).min(levels - 1),
            FeatureKind::Continuous { lo, hi, bins } => {
                let pos = ((x - lo) / (hi - lo) * bins as f64).floor();
                (pos.max(0.0) as usize).min(bins - 1)
            }
        }
    }

    /// Representative value of each bin: the level itself, or the bin center.
    pub fn bin_values(&self) -> Vec<f64> {
        match self.kind {
            FeatureKind::Discrete { levels } => (0..levels).map(|l| l as f64).collect(),
            FeatureKind::Continuous { lo, hi, bins } => {
                let w = (hi - lo) / bins as f64;
                (0..bins).map(|b| lo + (b as f64 + 0.5) * w).collect()
            }
        }
    }
}

/// Encodes environment states into model inputs.
///
/// Reward features feed the reward term `g`; shaping features feed the
/// potential `h`. The reward vector may carry one continuous noise coordinate
/// that is supplied per occurrence rather than derived from the state.
pub trait FeatureMap: Sync {
    fn num_states(&self) -> usize;
    fn reward_specs(&self) -> &[FeatureSpec];
    fn shaping_specs(&self) -> &[FeatureSpec];
    fn reward_features(&self, state: usize, noise: f64, out: &mut [f64]);
    fn shaping_features(&self, state: usize, out: &mut [f64]);
    fn noise_index(&self) -> Option<usize>;
}

/// Generic feature map built from explicit per-state tables; used for small
/// synthetic MDPs.
#[derive(Debug, Clone)]
pub struct TableFeatures {
    pub reward_specs: Vec<FeatureSpec>,
    pub shaping_specs: Vec<FeatureSpec>,
    /// Per-state reward features excluding the noise coordinate.
    pub reward_table: Vec<Vec<f64>>,
    pub shaping_table: Vec<Vec<f64>>,
    /// When set, the noise value is appended as the last reward coordinate.
    pub with_noise: bool,
}

impl FeatureMap for TableFeatures {
    fn num_states(&self) -> usize {
        self.reward_table.len()
    }

    fn reward_specs(&self) -> &[FeatureSpec] {
        &self.reward_specs
    }

    fn shaping_specs(&self) -> &[FeatureSpec] {
        &self.shaping_specs
    }

    fn reward_features(&self, state: usize, noise: f64, out: &mut [f64]) {
        let row = &self.reward_table[state];
        out[..row.len()].copy_from_slice(row);
        if self.with_noise {
            out[row.len()] = noise;
        }
    }

    fn shaping_features(&self, state: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.shaping_table[state]);
    }

    fn noise_index(&self) -> Option<usize> {
        self.with_noise.then(|| self.reward_specs.len() - 1)
    }
}
