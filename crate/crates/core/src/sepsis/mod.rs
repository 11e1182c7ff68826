//! Factored discrete sepsis simulator.
//!
//! A state holds four time-varying vitals (heart rate, systolic BP, oxygen
//! saturation, glucose), a static diabetes flag and the three treatment flags
//! applied on the previous step: `3·3·2·5·2·2·2·2 = 1440` states. An action is
//! any subset of {antibiotics, ventilation, vasopressors}: 8 actions.

mod dynamics;
mod reward;

pub use dynamics::{build_sepsis_mdp, DriftDirection, DynamicsConfig, VitalDrift};
pub use reward::{GroundTruthKind, GroundTruthReward};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::reward_models::{FeatureKind, FeatureMap, FeatureSpec};

pub const NUM_STATES: usize = 1440;
pub const NUM_ACTIONS: usize = 8;

pub const HR_LEVELS: u8 = 3;
pub const SBP_LEVELS: u8 = 3;
pub const OXY_LEVELS: u8 = 2;
pub const GLUCOSE_LEVELS: u8 = 5;

pub const HR_NORMAL: u8 = 1;
pub const SBP_NORMAL: u8 = 1;
pub const OXY_NORMAL: u8 = 1;
pub const GLUCOSE_NORMAL: u8 = 2;

/// Number of vital-level combinations (the support of the reward).
pub const NUM_VITAL_COMBINATIONS: usize = 90;

/// Bins used by additive models for the continuous noise feature.
pub const NOISE_BINS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SepsisState {
    pub heart_rate: u8,
    pub systolic_bp: u8,
    pub oxygen: u8,
    pub glucose: u8,
    pub diabetes: bool,
    pub abx_on: bool,
    pub vent_on: bool,
    pub vaso_on: bool,
}

impl SepsisState {
    /// Mixed-radix id, heart rate most significant, vasopressor flag least.
    pub fn encode(&self) -> usize {
        let mut id = self.heart_rate as usize;
        id = id * SBP_LEVELS as usize + self.systolic_bp as usize;
        id = id * OXY_LEVELS as usize + self.oxygen as usize;
        id = id * GLUCOSE_LEVELS as usize + self.glucose as usize;
        id = id * 2 + self.diabetes as usize;
        id = id * 2 + self.abx_on as usize;
        id = id * 2 + self.vent_on as usize;
        id * 2 + self.vaso_on as usize
    }

    pub fn decode(mut id: usize) -> Self {
        assert!(id < NUM_STATES, "state id {id} out of range");
        let vaso_on = id % 2 == 1;
        id /= 2;
        let vent_on = id % 2 == 1;
        id /= 2;
        let abx_on = id % 2 == 1;
        id /= 2;
        let diabetes = id % 2 == 1;
        id /= 2;
        let glucose = (id % GLUCOSE_LEVELS as usize) as u8;
        id /= GLUCOSE_LEVELS as usize;
        let oxygen = (id % OXY_LEVELS as usize) as u8;
        id /= OXY_LEVELS as usize;
        let systolic_bp = (id % SBP_LEVELS as usize) as u8;
        id /= SBP_LEVELS as usize;
        Self { heart_rate: id as u8, systolic_bp, oxygen, glucose, diabetes, abx_on, vent_on, vaso_on }
    }

    pub fn vitals(&self) -> [u8; 4] {
        [self.heart_rate, self.systolic_bp, self.oxygen, self.glucose]
    }

    pub fn all_vitals_normal(&self) -> bool {
        self.vitals() == [HR_NORMAL, SBP_NORMAL, OXY_NORMAL, GLUCOSE_NORMAL]
    }

    pub fn any_treatment(&self) -> bool {
        self.abx_on || self.vent_on || self.vaso_on
    }

    /// Vitals sitting at the end of their range (oxygen: low only).
    pub fn extreme_vital_count(&self) -> usize {
        [
            self.heart_rate == 0 || self.heart_rate == HR_LEVELS - 1,
            self.systolic_bp == 0 || self.systolic_bp == SBP_LEVELS - 1,
            self.oxygen == 0,
            self.glucose == 0 || self.glucose == GLUCOSE_LEVELS - 1,
        ]
        .iter()
        .filter(|&&x| x)
        .count()
    }

    pub fn is_death(&self) -> bool {
        self.extreme_vital_count() >= 3
    }

    pub fn is_discharge(&self) -> bool {
        self.all_vitals_normal() && !self.any_treatment()
    }

    pub fn is_terminal(&self) -> bool {
        self.is_death() || self.is_discharge()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SepsisAction {
    pub antibiotics: bool,
    pub ventilation: bool,
    pub vasopressors: bool,
}

impl SepsisAction {
    pub fn encode(&self) -> usize {
        (self.antibiotics as usize) << 2 | (self.ventilation as usize) << 1 | self.vasopressors as usize
    }

    pub fn decode(id: usize) -> Self {
        assert!(id < NUM_ACTIONS, "action id {id} out of range");
        Self { antibiotics: id & 4 != 0, ventilation: id & 2 != 0, vasopressors: id & 1 != 0 }
    }

    pub const NONE: SepsisAction = SepsisAction { antibiotics: false, ventilation: false, vasopressors: false };
}

/// Iterates the 90 vital combinations as `[hr, sbp, oxy, glucose]`.
pub fn vital_combinations() -> impl Iterator<Item = [u8; 4]> {
    (0..HR_LEVELS).flat_map(|hr| {
        (0..SBP_LEVELS).flat_map(move |sbp| {
            (0..OXY_LEVELS).flat_map(move |oxy| (0..GLUCOSE_LEVELS).map(move |glu| [hr, sbp, oxy, glu]))
        })
    })
}

/// Draws the uniform noise feature for one labelled occurrence.
pub fn draw_noise(seed: u64) -> f64 {
    ChaCha8Rng::seed_from_u64(seed).random::<f64>()
}

/// Reward-feature vector `[hr, sbp, oxy, glucose, noise]` for a state; the
/// noise coordinate is drawn from `noise_seed`. Diabetes and treatment flags
/// are deliberately excluded.
pub fn encode_features(state: &SepsisState, noise_seed: u64) -> [f64; 5] {
    [
        state.heart_rate as f64,
        state.systolic_bp as f64,
        state.oxygen as f64,
        state.glucose as f64,
        draw_noise(noise_seed),
    ]
}

/// Whether the noise feature is redrawn on every transition or held fixed for
/// a whole trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    #[default]
    PerTransition,
    PerTrajectory,
}

/// Feature encoding used by the discriminator and baselines.
#[derive(Debug, Clone)]
pub struct SepsisFeatures {
    reward_specs: Vec<FeatureSpec>,
    shaping_specs: Vec<FeatureSpec>,
    states: Vec<SepsisState>,
}

impl Default for SepsisFeatures {
    fn default() -> Self {
        Self::new()
    }
}

impl SepsisFeatures {
    pub fn new() -> Self {
        let vitals = vec![
            FeatureSpec::discrete("heart_rate", HR_LEVELS as usize),
            FeatureSpec::discrete("systolic_bp", SBP_LEVELS as usize),
            FeatureSpec::discrete("oxygen", OXY_LEVELS as usize),
            FeatureSpec::discrete("glucose", GLUCOSE_LEVELS as usize),
        ];
        let mut reward_specs = vitals.clone();
        reward_specs.push(FeatureSpec { name: "noise".into(), kind: FeatureKind::Continuous { lo: 0.0, hi: 1.0, bins: NOISE_BINS } });
        let mut shaping_specs = vitals;
        for name in ["diabetes", "abx_on", "vent_on", "vaso_on"] {
            shaping_specs.push(FeatureSpec::discrete(name, 2));
        }
        let states = (0..NUM_STATES).map(SepsisState::decode).collect();
        Self { reward_specs, shaping_specs, states }
    }
}

impl FeatureMap for SepsisFeatures {
    fn num_states(&self) -> usize {
        NUM_STATES
    }

    fn reward_specs(&self) -> &[FeatureSpec] {
        &self.reward_specs
    }

    fn shaping_specs(&self) -> &[FeatureSpec] {
        &self.shaping_specs
    }

    fn reward_features(&self, state: usize, noise: f64, out: &mut [f64]) {
        let s = &self.states[state];
        out[0] = s.heart_rate as f64;
        out[1] = s.systolic_bp as f64;
        out[2] = s.oxygen as f64;
        out[3] = s.glucose as f64;
        out[4] = noise;
    }

    fn shaping_features(&self, state: usize, out: &mut [f64]) {
        let s = &self.states[state];
        out[0] = s.heart_rate as f64;
        out[1] = s.systolic_bp as f64;
        out[2] = s.oxygen as f64;
        out[3] = s.glucose as f64;
        out[4] = s.diabetes as u8 as f64;
        out[5] = s.abx_on as u8 as f64;
        out[6] = s.vent_on as u8 as f64;
        out[7] = s.vaso_on as u8 as f64;
    }

    fn noise_index(&self) -> Option<usize> {
        Some(4)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn state_space_size() {
        assert_eq!(3 * 3 * 2 * 5 * 2 * 2 * 2 * 2, NUM_STATES);
        assert_eq!(vital_combinations().count(), NUM_VITAL_COMBINATIONS);
    }

    #[test]
    fn encode_decode_is_bijective() {
        let mut seen = vec![false; NUM_STATES];
        for id in 0..NUM_STATES {
            let s = SepsisState::decode(id);
            assert_eq!(s.encode(), id);
            seen[id] = true;
        }
        assert!(seen.into_iter().all(|x| x));
        for id in 0..NUM_ACTIONS {
            assert_eq!(SepsisAction::decode(id).encode(), id);
        }
        assert_eq!(SepsisAction::NONE.encode(), 0);
    }

    #[test]
    fn terminal_definitions() {
        let mut s = SepsisState::decode(0);
        s.heart_rate = 0;
        s.systolic_bp = 0;
        s.oxygen = 0;
        s.glucose = 2;
        assert!(s.is_death());
        let healthy = SepsisState {
            heart_rate: 1,
            systolic_bp: 1,
            oxygen: 1,
            glucose: 2,
            diabetes: true,
            abx_on: false,
            vent_on: false,
            vaso_on: false,
        };
        assert!(healthy.is_discharge());
        assert!(!SepsisState { vent_on: true, ..healthy }.is_terminal());
    }

    #[test]
    fn noise_is_seed_deterministic_and_vitals_are_exact() {
        let s = SepsisState::decode(777);
        let a = encode_features(&s, 31);
        assert_eq!(a, encode_features(&s, 31));
        assert_ne!(a[4], encode_features(&s, 32)[4]);
        assert_eq!(&a[..4], &s.vitals().map(|v| v as f64));
        assert!((0.0..1.0).contains(&a[4]));
    }

    /// χ² goodness of fit of 100k noise draws against Uniform(0,1) on 20 bins.
    #[test]
    fn noise_histogram_is_uniform() {
        let bins = 20;
        let n = 100_000;
        let mut counts = vec![0.0f64; bins];
        for i in 0..n {
            let u = draw_noise(crate::rng::derive_seed(5, i));
            counts[((u * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
        let expected = n as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // 99th percentile of χ² with 19 degrees of freedom.
        assert!(chi2 < 36.19, "chi2 {chi2}");
    }

    proptest! {
        #[test]
        fn feature_map_matches_encode(id in 0usize..NUM_STATES, seed in any::<u64>()) {
            let f = SepsisFeatures::new();
            let s = SepsisState::decode(id);
            let direct = encode_features(&s, seed);
            let mut out = [0.0; 5];
            f.reward_features(id, direct[4], &mut out);
            prop_assert_eq!(out, direct);
        }
    }
}
