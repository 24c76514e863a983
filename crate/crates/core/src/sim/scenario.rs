//! Scenario files: a plant, a grasp configuration and a script, run through
//! the full stack over the virtual bus.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::PlantConfig;
use super::plant::FruitContact;
use super::world::{AntagonismStats, SimHandle, SimWorld};
use super::SimError;
use crate::bus::{BusConfig, MotorBus};
use crate::controller::{
    Command, CommandEnvelope, ControlError, Controller, ControllerEvent, GraspConfig, GraspOutcome, GraspPhase,
    GraspResult, Observer, Recorder, ScheduledCommands,
};
use crate::telemetry::{FruitClass, FruitTag, HarvestRecord, TelemetrySample};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FruitSpec {
    #[serde(default = "default_class")]
    pub class: FruitClass,
    /// Whether a fruit is presented at all; the plant's fruit parameters
    /// describe it.
    #[serde(default = "yes")]
    pub present: bool,
}

fn default_class() -> FruitClass {
    FruitClass::Other
}

fn yes() -> bool {
    true
}

impl Default for FruitSpec {
    fn default() -> Self {
        Self {
            class: default_class(),
            present: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PullSpec {
    /// N.
    pub target: f64,
    /// N/s.
    pub ramp: f64,
    /// Hold time between securing and the start of the pull.
    #[serde(default)]
    pub delay_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    /// Run an empty close first when no threshold is configured.
    #[serde(default = "yes")]
    pub auto: bool,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self { auto: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedCommand {
    /// Controller time at which the command arrives.
    pub at_ms: u64,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultSpec {
    /// Lock the mechanism before the first open.
    pub jam: bool,
    /// Silence the bus once controller time passes this.
    pub bus_dead_after_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    /// Grasp result the run is expected to end with.
    #[serde(default)]
    pub expect: Option<GraspResult>,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub grasp: GraspConfig,
    #[serde(default)]
    pub bus: BusConfig,
    #[serde(default)]
    pub fruit: FruitSpec,
    #[serde(default)]
    pub pull: Option<PullSpec>,
    #[serde(default)]
    pub calibration: CalibrationSpec,
    #[serde(default)]
    pub commands: Vec<ScriptedCommand>,
    #[serde(default)]
    pub faults: FaultSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            schema_version: SCENARIO_SCHEMA_VERSION,
            name: String::new(),
            expect: None,
            plant: PlantConfig::default(),
            grasp: GraspConfig::default(),
            bus: BusConfig::default(),
            fruit: FruitSpec::default(),
            pull: None,
            calibration: CalibrationSpec::default(),
            commands: Vec::new(),
            faults: FaultSpec::default(),
        }
    }
}

/// Where a scenario file went wrong.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default(), field.as_ref().map(|f| format!("field `{f}`: ")).unwrap_or_default())]
pub struct ScenarioParseError {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Parse(#[from] ScenarioParseError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("calibration failed: {0}")]
    Calibration(ControlError),
    #[error("controller setup: {0}")]
    Setup(ControlError),
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

fn backticked(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let end = start + message[start..].find('`')?;
    Some(message[start..end].to_string())
}

fn key_on_line(text: &str, line: usize) -> Option<String> {
    let l = text.lines().nth(line.checked_sub(1)?)?;
    let (key, _) = l.split_once('=')?;
    let key = key.trim();
    (!key.is_empty()).then(|| key.to_string())
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioParseError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let (line, column) = e.span().map(|s| line_col(text, s.start)).unzip();
            let field = backticked(&message).or_else(|| line.and_then(|l| key_on_line(text, l)));
            ScenarioParseError {
                line,
                column,
                field,
                message,
            }
        })?;
        scenario.validate(text)?;
        Ok(scenario)
    }

    fn validate(&self, text: &str) -> Result<(), ScenarioParseError> {
        let locate = |field: &str, message: String| {
            let key = field.rsplit('.').next().unwrap_or(field);
            let line = text
                .lines()
                .position(|l| l.split_once('=').is_some_and(|(k, _)| k.trim() == key))
                .map(|i| i + 1);
            ScenarioParseError {
                line,
                column: None,
                field: Some(field.to_string()),
                message,
            }
        };
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(locate(
                "schema_version",
                format!("unsupported version {} (expected {SCENARIO_SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if let Err(SimError::Config(m)) = self.plant.validate() {
            let field = m.split_whitespace().next().unwrap_or("plant").to_string();
            return Err(locate(&format!("plant.{field}"), m));
        }
        if let Err(e) = self.bus.validate() {
            return Err(locate("bus", e.to_string()));
        }
        if let Err(e) = self.grasp.validate(self.bus.current_cap_ma) {
            let m = e.to_string();
            let field = m
                .split_whitespace()
                .find(|w| w.contains('_'))
                .unwrap_or("grasp")
                .trim_end_matches(':')
                .to_string();
            return Err(locate(&format!("grasp.{field}"), m));
        }
        if let Some(p) = &self.pull {
            if !(p.target > 0.0 && p.ramp >= 0.0) {
                return Err(locate("pull.target", "pull needs a positive target and non-negative ramp".into()));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::parse(&text)?)
    }

    pub fn fruit_tag(&self) -> FruitTag {
        FruitTag {
            class: self.fruit.class,
            diameter_mm: self
                .plant
                .fruit
                .as_ref()
                .filter(|_| self.fruit.present)
                .map(|f| f.diameter * 1000.0),
        }
    }
}

/// Peak power seen at the control ticks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerSummary {
    /// Drawn from the supply by both motors, W.
    pub peak_electrical_w: f64,
    /// Delivered at the motor shafts, W.
    pub peak_mechanical_w: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub name: String,
    pub outcome: Option<GraspOutcome>,
    pub record: HarvestRecord,
    pub samples: Vec<TelemetrySample>,
    pub events: Vec<ControllerEvent>,
    pub final_phase: GraspPhase,
    pub antagonism: AntagonismStats,
    pub calibration_rev: Option<f64>,
    pub power: PowerSummary,
    /// Routine that ended the run early, if any.
    pub error: Option<String>,
}

impl ScenarioResult {
    pub fn result(&self) -> GraspResult {
        self.record.outcome
    }
}

struct PowerMeter {
    world: SimHandle,
    summary: std::sync::Arc<std::sync::Mutex<PowerSummary>>,
}

impl Observer for PowerMeter {
    fn sample(&mut self, _sample: &TelemetrySample) {
        let w = self.world.lock();
        let e = w.state().electrical_power();
        let m = w.state().mechanical_power(w.config()).abs();
        drop(w);
        let mut s = self.summary.lock().unwrap_or_else(|p| p.into_inner());
        s.peak_electrical_w = s.peak_electrical_w.max(e);
        s.peak_mechanical_w = s.peak_mechanical_w.max(m);
    }
}

/// Silences the bus once controller time passes a set point.
struct BusKill {
    world: SimHandle,
    at: f64,
}

impl Observer for BusKill {
    fn sample(&mut self, sample: &TelemetrySample) {
        if sample.time >= self.at {
            self.world.lock().set_bus_dead(true);
        }
    }
}

fn build_controller(
    world: &SimHandle,
    grasp: GraspConfig,
    bus: BusConfig,
) -> Result<Controller<super::world::VirtualBus>, ControlError> {
    let bus = MotorBus::new(world.virtual_bus(), bus)?;
    let mut c = Controller::new(bus, Box::new(world.clock()), grasp)?.with_probe(Box::new(world.probe()));
    c.initialize()?;
    Ok(c)
}

/// Empty-closure threshold for `plant` with nothing between the pockets.
pub fn calibrate_plant(plant: &PlantConfig, grasp: &GraspConfig, bus: &BusConfig) -> Result<f64, ScenarioError> {
    let mut empty = plant.clone();
    empty.fruit = None;
    let world = SimHandle::new(SimWorld::new(empty, bus.ids)?);
    let mut grasp = grasp.clone();
    grasp.empty_closure_position_rev = None;
    let mut c = build_controller(&world, grasp, bus.clone()).map_err(ScenarioError::Setup)?;
    c.calibrate().map_err(ScenarioError::Calibration)
}

pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioResult, ScenarioError> {
    let mut grasp = scenario.grasp.clone();
    let mut calibration_rev = None;
    if scenario.calibration.auto && grasp.empty_closure_position_rev.is_none() {
        let t = calibrate_plant(&scenario.plant, &grasp, &scenario.bus)?;
        grasp.empty_closure_position_rev = Some(t);
        calibration_rev = Some(t);
    }
    run_with_grasp(scenario, grasp, calibration_rev)
}

/// Run with an already-resolved grasp configuration (no calibration pass).
pub fn run_with_grasp(
    scenario: &Scenario,
    grasp: GraspConfig,
    calibration_rev: Option<f64>,
) -> Result<ScenarioResult, ScenarioError> {
    let mut plant = scenario.plant.clone();
    if !scenario.fruit.present {
        plant.fruit = None;
    }
    let world = SimHandle::new(SimWorld::new(plant, scenario.bus.ids)?);
    world.lock().set_antagonism_limit(grasp.antagonism_limit_ma);
    let mut c = build_controller(&world, grasp, scenario.bus.clone()).map_err(ScenarioError::Setup)?;
    c.set_fruit(scenario.fruit_tag());

    let recorder = Recorder::new();
    c.add_observer(Box::new(recorder.clone()));
    let power = std::sync::Arc::new(std::sync::Mutex::new(PowerSummary::default()));
    c.add_observer(Box::new(PowerMeter {
        world: world.clone(),
        summary: power.clone(),
    }));
    if let Some(ms) = scenario.faults.bus_dead_after_ms {
        c.add_observer(Box::new(BusKill {
            world: world.clone(),
            at: ms as f64 / 1000.0,
        }));
    }
    let script = scenario
        .commands
        .iter()
        .enumerate()
        .map(|(i, s)| CommandEnvelope {
            command: s.command,
            request_id: i as u64 + 1,
            issued_at: s.at_ms as f64 / 1000.0,
        })
        .collect();
    c.add_source(Box::new(ScheduledCommands::new(script)));
    if scenario.faults.jam {
        world.lock().set_jammed(true);
    }

    let error = drive(scenario, &world, &mut c).err().map(|e| e.to_string());

    let outcome = c.last_outcome();
    let probe = world.lock().probe_reading();
    let record = c.records().last().cloned().unwrap_or_else(|| {
        let result = match (outcome, c.phase()) {
            (Some(o), _) => o.result,
            (None, _) => GraspResult::Aborted,
        };
        HarvestRecord {
            fruit_class: scenario.fruit.class,
            fruit_diameter_mm: scenario.fruit_tag().diameter_mm,
            outcome: result,
            harvested: false,
            peak_pull_force: Some(probe.peak_pull_force),
            peak_current_deviation_ma: 0.0,
            damaged_on_harvest: probe.damaged && result != GraspResult::EmptyClosure,
            bruised_day5: None,
        }
    });
    let recording = recorder.take();
    let antagonism = world.lock().antagonism();
    let power = *power.lock().unwrap_or_else(|p| p.into_inner());
    Ok(ScenarioResult {
        name: scenario.name.clone(),
        outcome,
        record,
        samples: recording.samples,
        events: recording.events,
        final_phase: c.phase(),
        antagonism,
        calibration_rev,
        power,
        error,
    })
}

fn drive(
    scenario: &Scenario,
    world: &SimHandle,
    c: &mut Controller<super::world::VirtualBus>,
) -> Result<(), ControlError> {
    c.open_gripper()?;
    if scenario.fruit.present {
        let contact = world.lock().insert_fruit();
        match contact {
            Ok(FruitContact::Enveloped | FruitContact::Rim) => {}
            Ok(other) => {
                return Err(ControlError::Config(format!("fruit could not be presented: {other:?}")));
            }
            Err(e) => return Err(ControlError::Config(e.to_string())),
        }
    }
    c.confirm_align()?;
    let outcome = c.close_grasp()?;
    if outcome.result != GraspResult::Secured {
        return Ok(());
    }
    let Some(pull) = &scenario.pull else {
        c.submit(Command::Release);
        return c.open_gripper();
    };
    let hold_ticks = (pull.delay_ms as f64 / 1000.0 * c.config().loop_rate_hz).round() as u64;
    for _ in 0..hold_ticks {
        c.tick()?;
        if c.phase() != GraspPhase::Secured {
            return Ok(());
        }
    }
    world
        .lock()
        .apply_pull(pull.target, pull.ramp)
        .map_err(|e| ControlError::Config(e.to_string()))?;
    c.detach_and_release().map(|_| ())
}
