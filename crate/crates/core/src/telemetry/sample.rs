use serde::{Deserialize, Serialize};

use crate::bus::MotorState;
use crate::controller::{GraspPhase, GraspResult};

/// One control-loop sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    /// s since the controller started.
    pub time: f64,
    pub phase: GraspPhase,
    pub closer: MotorState,
    pub opener: MotorState,
    /// Sim only, N.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact_force: Option<f64>,
    /// Sim only, N.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pull_force: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FruitClass {
    Medium,
    Small,
    Other,
}

impl FruitClass {
    pub fn name(self) -> &'static str {
        match self {
            FruitClass::Medium => "medium",
            FruitClass::Small => "small",
            FruitClass::Other => "other",
        }
    }
}

/// What is known about the fruit being harvested.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FruitTag {
    pub class: FruitClass,
    /// mm; unknown on hardware unless measured.
    pub diameter_mm: Option<f64>,
}

impl Default for FruitTag {
    fn default() -> Self {
        Self {
            class: FruitClass::Other,
            diameter_mm: None,
        }
    }
}

/// Outcome of one harvest attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestRecord {
    pub fruit_class: FruitClass,
    pub fruit_diameter_mm: Option<f64>,
    pub outcome: GraspResult,
    /// Fruit came off the vine and ended up released from the gripper.
    pub harvested: bool,
    /// Sim only, N.
    pub peak_pull_force: Option<f64>,
    /// Largest |closer current - reference| seen while detaching, mA.
    pub peak_current_deviation_ma: f64,
    pub damaged_on_harvest: bool,
    /// Filled in after inspection.
    pub bruised_day5: Option<bool>,
}
