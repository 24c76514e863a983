//! Transport backends. Each backend turns a [`TransportSpec`] into a running
//! [`Session`]: an initialised controller plus whatever drives the plant.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use drawstring_core::bus::{MotorBus, Transport};
use drawstring_core::controller::{
    Clock, CommandSource, ControlError, Controller, GraspConfig, GraspPhase, Observer, WallClock,
};
use drawstring_core::sim::{calibrate_plant, FruitContact, Scenario, SimClock, SimHandle, SimWorld, VirtualBus};
use serde::{Deserialize, Serialize};

use crate::serial::SerialTransport;
use crate::{GraspOverrides, ServiceError};

/// Which transport to drive. Exactly one per service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TransportSpec {
    Sim {
        scenario: Option<PathBuf>,
        /// Simulated seconds per wall second. 1 is real time.
        #[serde(default = "one")]
        speed: f64,
    },
    Serial {
        device: String,
        baud: u32,
    },
}

fn one() -> f64 {
    1.0
}

impl TransportSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            TransportSpec::Sim { .. } => "sim",
            TransportSpec::Serial { .. } => "serial",
        }
    }
}

/// A controller with its transport type erased, ticking on its own clock.
pub trait Session: Send {
    fn tick(&mut self) -> Result<(), ControlError>;
    fn phase(&self) -> GraspPhase;
    /// In Open with the opener at rest.
    fn open_settled(&self) -> bool;
    fn add_source(&mut self, source: Box<dyn CommandSource>);
    fn add_observer(&mut self, observer: Box<dyn Observer>);
    fn config(&self) -> &GraspConfig;
    fn current_cap_ma(&self) -> f64;
    /// Empty close from rest; returns the empty-closure threshold, rev.
    fn calibrate(&mut self) -> Result<f64, ControlError>;
    /// Zero the goals on the way out.
    fn shutdown(&mut self);
}

pub trait BackendFactory: Send + Sync {
    fn name(&self) -> &'static str;
    fn open(&self, spec: &TransportSpec, overrides: &GraspOverrides) -> Result<Box<dyn Session>, ServiceError>;
}

/// Backends by name.
pub struct Registry {
    factories: BTreeMap<&'static str, Box<dyn BackendFactory>>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(SimBackend));
        r.register(Box::new(SerialBackend));
        r
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, factory: Box<dyn BackendFactory>) {
        self.factories.insert(factory.name(), factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn open(&self, spec: &TransportSpec, overrides: &GraspOverrides) -> Result<Box<dyn Session>, ServiceError> {
        let factory = self
            .factories
            .get(spec.kind())
            .ok_or_else(|| ServiceError::Transport(format!("no backend registered for `{}`", spec.kind())))?;
        factory.open(spec, overrides)
    }
}

/// Plain controller over real hardware.
struct HardwareSession<T: Transport> {
    ctl: Controller<T>,
}

impl<T: Transport + 'static> Session for HardwareSession<T> {
    fn tick(&mut self) -> Result<(), ControlError> {
        self.ctl.tick().map(|_| ())
    }

    fn phase(&self) -> GraspPhase {
        self.ctl.phase()
    }

    fn open_settled(&self) -> bool {
        self.ctl.open_settled()
    }

    fn add_source(&mut self, source: Box<dyn CommandSource>) {
        self.ctl.add_source(source);
    }

    fn add_observer(&mut self, observer: Box<dyn Observer>) {
        self.ctl.add_observer(observer);
    }

    fn config(&self) -> &GraspConfig {
        self.ctl.config()
    }

    fn current_cap_ma(&self) -> f64 {
        self.ctl.bus_config().current_cap_ma
    }

    fn calibrate(&mut self) -> Result<f64, ControlError> {
        self.ctl.calibrate()
    }

    fn shutdown(&mut self) {
        self.ctl.abort();
    }
}

pub struct SerialBackend;

impl BackendFactory for SerialBackend {
    fn name(&self) -> &'static str {
        "serial"
    }

    fn open(&self, spec: &TransportSpec, overrides: &GraspOverrides) -> Result<Box<dyn Session>, ServiceError> {
        let TransportSpec::Serial { device, baud } = spec else {
            return Err(ServiceError::Transport("serial backend needs a serial spec".into()));
        };
        let transport = SerialTransport::open(device, *baud)?;
        let bus_config = drawstring_core::bus::BusConfig {
            baud: *baud,
            ..Default::default()
        };
        let bus = MotorBus::new(transport, bus_config).map_err(|e| ServiceError::Transport(e.to_string()))?;
        let grasp = overrides.apply(GraspConfig::default());
        let mut ctl = Controller::new(bus, Box::new(WallClock::new()), grasp)?;
        ctl.initialize()?;
        Ok(Box::new(HardwareSession { ctl }))
    }
}

/// Sim clock that also sleeps so simulated time tracks wall time / speed.
pub struct PacedClock {
    sim: SimClock,
    speed: f64,
    next: Option<Instant>,
}

impl PacedClock {
    pub fn new(sim: SimClock, speed: f64) -> Self {
        Self { sim, speed, next: None }
    }
}

impl Clock for PacedClock {
    fn now(&self) -> f64 {
        self.sim.now()
    }

    fn wait(&mut self, period: f64) -> Result<(), String> {
        self.sim.wait(period)?;
        if self.speed.is_finite() && self.speed > 0.0 {
            let step = Duration::from_secs_f64(period / self.speed);
            let next = self.next.map_or_else(|| Instant::now() + step, |n| n + step);
            let now = Instant::now();
            if next > now {
                std::thread::sleep(next - now);
                self.next = Some(next);
            } else {
                // Fell behind; do not try to catch up in a burst.
                self.next = Some(now);
            }
        }
        Ok(())
    }
}

/// Controller over the simulated plant, plus a stand-in for the operator's
/// hands: presents the scenario's fruit once the pockets are open and pulls
/// it after the configured hold.
pub struct SimSession {
    ctl: Controller<VirtualBus>,
    world: SimHandle,
    scenario: Scenario,
    presented: bool,
    secured_ticks: Option<u64>,
    pulled: bool,
}

impl SimSession {
    pub fn world(&self) -> &SimHandle {
        &self.world
    }

    fn drive_plant(&mut self) {
        match self.ctl.phase() {
            GraspPhase::Open | GraspPhase::AlignPending if !self.presented && self.scenario.fruit.present => {
                // Keeps trying until the aperture is wide enough.
                if let Ok(FruitContact::Enveloped | FruitContact::Rim) = self.world.lock().insert_fruit() {
                    self.presented = true;
                }
            }
            GraspPhase::Secured => {
                let Some(pull) = &self.scenario.pull else { return };
                if self.pulled {
                    return;
                }
                let n = self.secured_ticks.get_or_insert(0);
                *n += 1;
                let hold = (pull.delay_ms as f64 / 1000.0 * self.ctl.config().loop_rate_hz).round() as u64;
                if *n > hold && self.world.lock().apply_pull(pull.target, pull.ramp).is_ok() {
                    self.pulled = true;
                }
            }
            GraspPhase::Idle | GraspPhase::Open if self.pulled => {
                // Harvest done: the next cycle gets a fresh fruit on the stem.
                self.world.lock().next_fruit();
                self.presented = false;
                self.pulled = false;
                self.secured_ticks = None;
            }
            _ => {}
        }
    }
}

impl Session for SimSession {
    fn tick(&mut self) -> Result<(), ControlError> {
        self.drive_plant();
        self.ctl.tick().map(|_| ())
    }

    fn phase(&self) -> GraspPhase {
        self.ctl.phase()
    }

    fn open_settled(&self) -> bool {
        self.ctl.open_settled()
    }

    fn add_source(&mut self, source: Box<dyn CommandSource>) {
        self.ctl.add_source(source);
    }

    fn add_observer(&mut self, observer: Box<dyn Observer>) {
        self.ctl.add_observer(observer);
    }

    fn config(&self) -> &GraspConfig {
        self.ctl.config()
    }

    fn current_cap_ma(&self) -> f64 {
        self.ctl.bus_config().current_cap_ma
    }

    /// With the scenario's fruit present, it is placed in the pockets first.
    fn calibrate(&mut self) -> Result<f64, ControlError> {
        if self.scenario.fruit.present {
            self.ctl.open_gripper()?;
            if let Err(e) = self.world.lock().insert_fruit() {
                tracing::warn!("object not placed: {e}");
            }
        }
        self.ctl.calibrate()
    }

    fn shutdown(&mut self) {
        self.ctl.abort();
    }
}

pub struct SimBackend;

impl SimBackend {
    /// Build the session directly, keeping the concrete type.
    pub fn session(scenario: Scenario, grasp: GraspConfig, speed: f64) -> Result<SimSession, ServiceError> {
        let mut grasp = grasp;
        if scenario.calibration.auto && grasp.empty_closure_position_rev.is_none() {
            let t = calibrate_plant(&scenario.plant, &grasp, &scenario.bus)?;
            grasp.empty_closure_position_rev = Some(t);
        }
        let mut plant = scenario.plant.clone();
        if !scenario.fruit.present {
            plant.fruit = None;
        }
        let world = SimHandle::new(SimWorld::new(plant, scenario.bus.ids)?);
        world.lock().set_antagonism_limit(grasp.antagonism_limit_ma);
        let bus = MotorBus::new(world.virtual_bus(), scenario.bus.clone())
            .map_err(|e| ServiceError::Transport(e.to_string()))?;
        let clock = PacedClock::new(world.clock(), speed);
        let mut ctl = Controller::new(bus, Box::new(clock), grasp)?.with_probe(Box::new(world.probe()));
        ctl.set_fruit(scenario.fruit_tag());
        ctl.initialize()?;
        Ok(SimSession {
            ctl,
            world,
            scenario,
            presented: false,
            secured_ticks: None,
            pulled: false,
        })
    }
}

impl BackendFactory for SimBackend {
    fn name(&self) -> &'static str {
        "sim"
    }

    fn open(&self, spec: &TransportSpec, overrides: &GraspOverrides) -> Result<Box<dyn Session>, ServiceError> {
        let TransportSpec::Sim { scenario, speed } = spec else {
            return Err(ServiceError::Transport("sim backend needs a sim spec".into()));
        };
        let scenario = match scenario {
            Some(path) => Scenario::load(path)?,
            None => Scenario::default(),
        };
        let grasp = overrides.apply(scenario.grasp.clone());
        Ok(Box::new(Self::session(scenario, grasp, *speed)?))
    }
}
