use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{SepsisState, NUM_STATES};
use crate::mdp::NextStateReward;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundTruthKind {
    /// Non-monotone per-vital tables.
    GamMdp,
    /// Per-vital contributions linear in the level.
    LinearMdp,
}

impl GroundTruthKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GroundTruthKind::GamMdp => "gam-mdp",
            GroundTruthKind::LinearMdp => "linear-mdp",
        }
    }
}

impl std::fmt::Display for GroundTruthKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

const GAM_HR: [f64; 3] = [-0.8, 0.0, -1.0];
const GAM_SBP: [f64; 3] = [-1.2, 0.0, -0.6];
const GAM_OXY: [f64; 2] = [-1.0, 0.0];
const GAM_GLUCOSE: [f64; 5] = [-0.8, -0.4, 0.0, -0.4, -0.8];

const LIN_HR: [f64; 3] = [-0.3, -0.6, -0.9];
const LIN_SBP: [f64; 3] = [-0.4, -0.8, -1.2];
const LIN_OXY: [f64; 2] = [0.0, 0.6];
const LIN_GLUCOSE: [f64; 5] = [0.0, 0.2, 0.4, 0.6, 0.8];

pub const VITAL_NAMES: [&str; 4] = ["heart_rate", "systolic_bp", "oxygen", "glucose"];

/// Ground-truth reward of the next state: a sum of four per-vital lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthReward {
    pub kind: GroundTruthKind,
}

impl GroundTruthReward {
    pub fn new(kind: GroundTruthKind) -> Self {
        Self { kind }
    }

    /// Per-vital value → reward tables in `[hr, sbp, oxy, glucose]` order.
    pub fn tables(&self) -> [&'static [f64]; 4] {
        match self.kind {
            GroundTruthKind::GamMdp => [&GAM_HR, &GAM_SBP, &GAM_OXY, &GAM_GLUCOSE],
            GroundTruthKind::LinearMdp => [&LIN_HR, &LIN_SBP, &LIN_OXY, &LIN_GLUCOSE],
        }
    }

    pub fn of_vitals(&self, vitals: [u8; 4]) -> f64 {
        self.tables().iter().zip(vitals).map(|(t, v)| t[v as usize]).sum()
    }

    pub fn reward(&self, next_state: &SepsisState) -> f64 {
        self.of_vitals(next_state.vitals())
    }

    /// `r(s, a, s') = table[s']` over all 1440 states.
    pub fn next_state_reward(&self) -> NextStateReward {
        NextStateReward((0..NUM_STATES).map(|id| self.reward(&SepsisState::decode(id))).collect())
    }

    /// Writes `feature,value,contribution` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "feature,value,contribution")?;
        for (name, table) in VITAL_NAMES.iter().zip(self.tables()) {
            for (v, c) in table.iter().enumerate() {
                writeln!(out, "{name},{v},{c}")?;
            }
        }
        Ok(())
    }
}
