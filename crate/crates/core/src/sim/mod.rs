//! Physics stand-in for the gripper, with a virtual bus that speaks the same
//! wire protocol as the real servos.

pub mod batch;
pub mod config;
pub mod plant;
pub mod scenario;
pub mod world;

use thiserror::Error;

pub use config::{FruitParams, MotorParams, PlantConfig, SensorNoise};
pub use plant::{FruitContact, MotorSimState, Plant, PlantState, PullOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid plant configuration: {0}")]
    Config(String),
    #[error("numerical blow-up at t={time:.3}s: {detail}")]
    NumericalBlowup { time: f64, detail: String },
    #[error("no fruit configured")]
    NoFruit,
    #[error("aperture {aperture:.4} m is narrower than fruit {diameter:.4} m")]
    ApertureTooSmall { aperture: f64, diameter: f64 },
    #[error("fruit is no longer attached")]
    FruitNotAttached,
}
pub use world::{AntagonismStats, SimClock, SimHandle, SimProbe, SimWorld, VirtualBus};
pub use scenario::{calibrate_plant, run_scenario, run_with_grasp, FruitSpec, PullSpec, Scenario, ScenarioError, ScenarioParseError, ScenarioResult};
pub use batch::{run_batch, BatchReport, BatchSpec};
