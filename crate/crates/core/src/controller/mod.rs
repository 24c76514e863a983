//! The grasp routine: phases, commands and the control loop driving them.

mod config;
mod io;
mod machine;
mod phase;

use thiserror::Error;

pub use config::{GraspConfig, CALIBRATION_MARGIN};
pub use io::{Clock, CommandSource, PlantProbe, ProbeReading, ScheduledCommands, WallClock};
pub use machine::{
    Controller, ControllerEvent, EventKind, GraspOutcome, GraspResult, MonitorEvent, Observer, Recorder, Recording,
    TickReport,
};
pub use phase::{Command, CommandEnvelope, FaultReason, GraspPhase};

use crate::bus::BusError;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("invalid grasp configuration: {0}")]
    Config(String),
    #[error("cannot {op} in phase {phase}")]
    Phase { op: &'static str, phase: GraspPhase },
    #[error("opener never settled")]
    OpenTimeout,
    #[error("calibration close ended {0:?} instead of settling")]
    NotSettled(GraspResult),
    #[error("grasp lost before the stem separated")]
    LostDuringDetach,
    #[error("no detach within the configured timeout")]
    DetachTimeout,
    #[error("interrupted, now in {phase}")]
    Interrupted { phase: GraspPhase },
    #[error("loop stalled in {phase}")]
    Stalled { phase: GraspPhase },
    #[error("clock: {0}")]
    Clock(String),
}
