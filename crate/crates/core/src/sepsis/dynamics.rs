//! Transition dynamics of the sepsis simulator.
//!
//! Each vital evolves independently given `(s, a)` through a short pipeline of
//! level kernels:
//!
//! | vital       | treatment on                      | treatment off        | extra                                   |
//! |-------------|-----------------------------------|----------------------|-----------------------------------------|
//! | heart rate  | antibiotics: one step to normal   | drift                |                                         |
//! | systolic BP | vasopressors: one step up         | drift                |                                         |
//! | oxygen      | ventilation: one step to normal   | drift                |                                         |
//! | glucose     | antibiotics: one step to normal   | drift                | vasopressors raise; random fluctuation  |
//!
//! Diabetic patients get a stronger vasopressor glucose side effect and wider
//! glucose fluctuation. Treatment flags of the next state equal the action.
//! Death (three or more vitals at an extreme level) and discharge (all vitals
//! normal with every treatment off) are absorbing.

use serde::{Deserialize, Serialize};

use super::{
    vital_combinations, SepsisAction, SepsisState, GLUCOSE_LEVELS, GLUCOSE_NORMAL, HR_LEVELS, HR_NORMAL, NUM_ACTIONS,
    NUM_STATES, OXY_LEVELS, OXY_NORMAL, SBP_LEVELS,
};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftDirection {
    Up,
    Down,
}

/// One-step drift of an untreated vital.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitalDrift {
    pub prob: f64,
    pub direction: DriftDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub heart_rate_drift: VitalDrift,
    pub systolic_bp_drift: VitalDrift,
    pub oxygen_drift: VitalDrift,
    pub glucose_drift: VitalDrift,
    pub abx_heart_rate_success: f64,
    pub abx_glucose_success: f64,
    pub vent_oxygen_success: f64,
    pub vaso_sbp_raise: f64,
    pub vaso_glucose_raise: f64,
    pub vaso_glucose_raise_diabetic: f64,
    pub glucose_fluctuation: f64,
    pub glucose_fluctuation_diabetic: f64,
    /// Share of diabetic patients in the initial distribution.
    pub diabetes_prob: f64,
    pub horizon: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            heart_rate_drift: VitalDrift { prob: 0.1, direction: DriftDirection::Up },
            systolic_bp_drift: VitalDrift { prob: 0.1, direction: DriftDirection::Down },
            oxygen_drift: VitalDrift { prob: 0.1, direction: DriftDirection::Down },
            glucose_drift: VitalDrift { prob: 0.05, direction: DriftDirection::Up },
            abx_heart_rate_success: 0.5,
            abx_glucose_success: 0.3,
            vent_oxygen_success: 0.7,
            vaso_sbp_raise: 0.6,
            vaso_glucose_raise: 0.2,
            vaso_glucose_raise_diabetic: 0.5,
            glucose_fluctuation: 0.1,
            glucose_fluctuation_diabetic: 0.3,
            diabetes_prob: 0.2,
            horizon: 20,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("heart_rate_drift.prob", self.heart_rate_drift.prob),
            ("systolic_bp_drift.prob", self.systolic_bp_drift.prob),
            ("oxygen_drift.prob", self.oxygen_drift.prob),
            ("glucose_drift.prob", self.glucose_drift.prob),
            ("abx_heart_rate_success", self.abx_heart_rate_success),
            ("abx_glucose_success", self.abx_glucose_success),
            ("vent_oxygen_success", self.vent_oxygen_success),
            ("vaso_sbp_raise", self.vaso_sbp_raise),
            ("vaso_glucose_raise", self.vaso_glucose_raise),
            ("vaso_glucose_raise_diabetic", self.vaso_glucose_raise_diabetic),
            ("glucose_fluctuation", self.glucose_fluctuation),
            ("glucose_fluctuation_diabetic", self.glucose_fluctuation_diabetic),
            ("diabetes_prob", self.diabetes_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!("dynamics.{name} = {p} is outside [0, 1]")));
            }
        }
        if self.horizon == 0 {
            return Err(Error::validation("dynamics.horizon must be positive"));
        }
        Ok(())
    }

    /// Next-level distribution of each vital, `[hr, sbp, oxy, glucose]`.
    pub fn vital_kernels(&self, state: &SepsisState, action: &SepsisAction) -> [Vec<f64>; 4] {
        let mut hr = point(state.heart_rate, HR_LEVELS);
        if action.antibiotics {
            toward(&mut hr, HR_NORMAL, self.abx_heart_rate_success);
        } else {
            drift(&mut hr, self.heart_rate_drift);
        }

        let mut sbp = point(state.systolic_bp, SBP_LEVELS);
        if action.vasopressors {
            drift(&mut sbp, VitalDrift { prob: self.vaso_sbp_raise, direction: DriftDirection::Up });
        } else {
            drift(&mut sbp, self.systolic_bp_drift);
        }

        let mut oxy = point(state.oxygen, OXY_LEVELS);
        if action.ventilation {
            toward(&mut oxy, OXY_NORMAL, self.vent_oxygen_success);
        } else {
            drift(&mut oxy, self.oxygen_drift);
        }

        let mut glu = point(state.glucose, GLUCOSE_LEVELS);
        if action.antibiotics {
            toward(&mut glu, GLUCOSE_NORMAL, self.abx_glucose_success);
        } else {
            drift(&mut glu, self.glucose_drift);
        }
        if action.vasopressors {
            let p = if state.diabetes { self.vaso_glucose_raise_diabetic } else { self.vaso_glucose_raise };
            drift(&mut glu, VitalDrift { prob: p, direction: DriftDirection::Up });
        }
        let fluct = if state.diabetes { self.glucose_fluctuation_diabetic } else { self.glucose_fluctuation };
        fluctuate(&mut glu, fluct);

        [hr, sbp, oxy, glu]
    }
}

fn point(level: u8, levels: u8) -> Vec<f64> {
    let mut d = vec![0.0; levels as usize];
    d[level as usize] = 1.0;
    d
}

fn drift(dist: &mut [f64], rule: VitalDrift) {
    let n = dist.len();
    let mut out = vec![0.0; n];
    for (l, &m) in dist.iter().enumerate() {
        let target = match rule.direction {
            DriftDirection::Up => (l + 1).min(n - 1),
            DriftDirection::Down => l.saturating_sub(1),
        };
        out[target] += m * rule.prob;
        out[l] += m * (1.0 - rule.prob);
    }
    dist.copy_from_slice(&out);
}

fn toward(dist: &mut [f64], normal: u8, p: f64) {
    let normal = normal as usize;
    let mut out = vec![0.0; dist.len()];
    for (l, &m) in dist.iter().enumerate() {
        let target = match l.cmp(&normal) {
            std::cmp::Ordering::Less => l + 1,
            std::cmp::Ordering::Greater => l - 1,
            std::cmp::Ordering::Equal => l,
        };
        out[target] += m * p;
        out[l] += m * (1.0 - p);
    }
    dist.copy_from_slice(&out);
}

/// Moves ±1 with probability `p / 2` each; mass pushed past either end stays.
fn fluctuate(dist: &mut [f64], p: f64) {
    let n = dist.len();
    let mut out = vec![0.0; n];
    for (l, &m) in dist.iter().enumerate() {
        out[l.saturating_sub(1)] += m * p / 2.0;
        out[(l + 1).min(n - 1)] += m * p / 2.0;
        out[l] += m * (1.0 - p);
    }
    dist.copy_from_slice(&out);
}

/// Builds the 1440-state, 8-action sepsis MDP.
pub fn build_sepsis_mdp(config: &DynamicsConfig, discount: f64) -> Result<TabularMdp> {
    config.validate()?;
    let mut rows = Vec::with_capacity(NUM_STATES * NUM_ACTIONS);
    let mut terminal = Vec::new();
    for id in 0..NUM_STATES {
        let state = SepsisState::decode(id);
        if state.is_terminal() {
            terminal.push(id);
            rows.extend(std::iter::repeat_n(vec![(id, 1.0)], NUM_ACTIONS));
            continue;
        }
        for a in 0..NUM_ACTIONS {
            let action = SepsisAction::decode(a);
            let [hr, sbp, oxy, glu] = config.vital_kernels(&state, &action);
            let mut row = Vec::new();
            for [h, b, o, g] in vital_combinations() {
                let p = hr[h as usize] * sbp[b as usize] * oxy[o as usize] * glu[g as usize];
                if p > 0.0 {
                    let next = SepsisState {
                        heart_rate: h,
                        systolic_bp: b,
                        oxygen: o,
                        glucose: g,
                        diabetes: state.diabetes,
                        abx_on: action.antibiotics,
                        vent_on: action.ventilation,
                        vaso_on: action.vasopressors,
                    };
                    row.push((next.encode(), p));
                }
            }
            rows.push(row);
        }
    }

    // Patients arrive untreated in any non-terminal vital configuration.
    let mut initial = vec![0.0; NUM_STATES];
    for [h, b, o, g] in vital_combinations() {
        for diabetes in [false, true] {
            let s = SepsisState {
                heart_rate: h,
                systolic_bp: b,
                oxygen: o,
                glucose: g,
                diabetes,
                abx_on: false,
                vent_on: false,
                vaso_on: false,
            };
            if !s.is_terminal() {
                initial[s.encode()] = if diabetes { config.diabetes_prob } else { 1.0 - config.diabetes_prob };
            }
        }
    }
    let total: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|p| *p /= total);

    TabularMdp::new(NUM_STATES, NUM_ACTIONS, rows, initial, discount, config.horizon, &terminal)
}
