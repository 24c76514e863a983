//! Long-running gripper service (HTTP commands, server-sent telemetry) and
//! the pieces shared with the `drawstring` command-line tool.

pub mod backend;
pub mod serial;
pub mod server;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use drawstring_core::controller::{ControlError, GraspConfig};
use drawstring_core::sim::{ScenarioError, SimError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{BackendFactory, PacedClock, Registry, Session, SimBackend, SimSession, TransportSpec};
pub use server::{serve, RunningService, StreamMessage};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

impl From<SimError> for ServiceError {
    fn from(e: SimError) -> Self {
        ServiceError::Scenario(e.into())
    }
}

/// Values that replace the backend's grasp configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraspOverrides {
    pub reference_current_ma: Option<f64>,
    pub empty_closure_position_rev: Option<f64>,
}

impl GraspOverrides {
    pub fn apply(&self, mut grasp: GraspConfig) -> GraspConfig {
        if let Some(ma) = self.reference_current_ma {
            grasp.reference_current_ma = ma;
        }
        if let Some(rev) = self.empty_closure_position_rev {
            grasp.empty_closure_position_rev = Some(rev);
        }
        grasp
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub transport: TransportSpec,
    pub overrides: GraspOverrides,
    /// Required as a bearer token on commands when set.
    pub token: Option<String>,
    /// Telemetry, event and record logs are appended here when set.
    pub log_dir: Option<PathBuf>,
}

/// Stored result of an empty-closure calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub schema_version: u32,
    /// Travel threshold for empty-closure detection, rev.
    pub empty_closure_position_rev: f64,
    /// Reference current the calibration close was made at, mA.
    pub reference_current_ma: f64,
    /// `sim` or the serial device path.
    pub source: String,
}

impl Calibration {
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let file_err = |message: String| ServiceError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let c: Calibration = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        if c.schema_version != SCHEMA_VERSION {
            return Err(file_err(format!("unsupported schema_version {}", c.schema_version)));
        }
        Ok(c)
    }

    /// Write to `path`, refusing to replace an existing file unless `force`.
    pub fn save(&self, path: &Path, force: bool) -> Result<(), ServiceError> {
        let file_err = |message: String| ServiceError::File {
            path: path.display().to_string(),
            message,
        };
        if path.exists() && !force {
            return Err(file_err("already exists; pass --force to overwrite".into()));
        }
        let mut text = serde_json::to_string_pretty(self).expect("calibration serialises");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| file_err(e.to_string()))
    }
}
