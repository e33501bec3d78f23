//! Input-variant feature selection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{AgentFeatureRow, MapFeatureRow, NormalizedFeatures};

/// Which ego information the planner receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputVariant {
    /// 21-frame ego motion through the same encoder as the agents.
    HistoryShared,
    /// 21-frame ego motion through a dedicated encoder.
    HistorySeparate,
    /// Pose only (x, y, yaw) - identically zero in the ego frame.
    State3,
    /// + velocity.
    State4,
    /// + acceleration.
    State5,
    /// + steering.
    State6,
}

impl InputVariant {
    pub const ALL: [InputVariant; 6] = [
        InputVariant::HistoryShared,
        InputVariant::HistorySeparate,
        InputVariant::State3,
        InputVariant::State4,
        InputVariant::State5,
        InputVariant::State6,
    ];

    /// Number of ego state variables, None for the history variants.
    pub fn state_count(&self) -> Option<usize> {
        match self {
            InputVariant::HistoryShared | InputVariant::HistorySeparate => None,
            InputVariant::State3 => Some(3),
            InputVariant::State4 => Some(4),
            InputVariant::State5 => Some(5),
            InputVariant::State6 => Some(6),
        }
    }

    pub fn uses_history(&self) -> bool {
        self.state_count().is_none()
    }
}

impl fmt::Display for InputVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InputVariant::HistoryShared => "history_shared",
            InputVariant::HistorySeparate => "history_separate",
            InputVariant::State3 => "state3",
            InputVariant::State4 => "state4",
            InputVariant::State5 => "state5",
            InputVariant::State6 => "state6",
        };
        f.write_str(s)
    }
}

impl FromStr for InputVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "history_shared" => Ok(InputVariant::HistoryShared),
            "history_separate" => Ok(InputVariant::HistorySeparate),
            "state3" => Ok(InputVariant::State3),
            "state4" => Ok(InputVariant::State4),
            "state5" => Ok(InputVariant::State5),
            "state6" => Ok(InputVariant::State6),
            other => Err(Error::InvalidConfig(format!(
                "unknown input variant `{other}`"
            ))),
        }
    }
}

/// Model hyperparameters plus the input variant.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VariantConfig {
    pub input_variant: InputVariant,
    pub use_sde: bool,
    pub sde_dropout: f64,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
}

impl Default for VariantConfig {
    fn default() -> Self {
        VariantConfig {
            input_variant: InputVariant::State6,
            use_sde: false,
            sde_dropout: 0.75,
            d_model: 64,
            layers: 2,
            heads: 4,
        }
    }
}

impl VariantConfig {
    pub fn validate(&self) -> Result<()> {
        if self.use_sde
            && !matches!(
                self.input_variant,
                InputVariant::State5 | InputVariant::State6
            )
        {
            return Err(Error::InvalidConfig(format!(
                "the state dropout encoder needs droppable kinematic tokens; `{}` has none to spare",
                self.input_variant
            )));
        }
        if !(0.0..=1.0).contains(&self.sde_dropout) {
            return Err(Error::InvalidConfig(format!(
                "sde_dropout {} outside [0, 1]",
                self.sde_dropout
            )));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

/// Model-ready features for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerFeatures {
    pub variant: InputVariant,
    /// First k components of (x, y, yaw, vel, acc, steer); empty for the
    /// history variants.
    pub ego_vector: Vec<f64>,
    /// 21-row ego motion, present for the history variants.
    pub ego_history: Option<Vec<AgentFeatureRow>>,
    pub agents: Vec<Vec<AgentFeatureRow>>,
    pub maps: Vec<Vec<MapFeatureRow>>,
}

/// Selects the variant's ego inputs from normalized scene features. State-k
/// vectors are strict prefixes of state-(k+1).
pub fn extract_features(normalized: &NormalizedFeatures, variant: InputVariant) -> PlannerFeatures {
    let (ego_vector, ego_history) = match variant.state_count() {
        Some(k) => (normalized.ego_state_vector[..k].to_vec(), None),
        None => (Vec::new(), Some(normalized.ego_history.clone())),
    };
    PlannerFeatures {
        variant,
        ego_vector,
        ego_history,
        agents: normalized.agent_tensors.clone(),
        maps: normalized.map_tensors.clone(),
    }
}
