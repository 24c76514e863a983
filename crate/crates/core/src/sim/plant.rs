//! Fixed-step model of the two servos, the drawstring closure and the fruit.
//!
//! The two cables run in series through the pockets, so the mechanism has a
//! single degree of freedom: `closure`, the metres of cable the closer has
//! wound in. The opener turns the opposite way by the same amount. Aperture
//! is `aperture_initial - gain * closure`.
//!
//! Each motor's current loop is a PI on winding current with the voltage
//! saturated at the supply; the winding itself is quasi-static,
//! `i = (V - ke·ω) / R`. Velocity-proportional terms (viscous friction,
//! back-EMF, contact damping) and the contact springs are integrated
//! implicitly so the stiff electrical damping stays stable at 1 ms steps.

use serde::{Deserialize, Serialize};

use super::config::PlantConfig;
use super::SimError;

const MAX_OMEGA: f64 = 1.0e4;
const MAX_CLOSURE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MotorSimState {
    /// Output shaft angle, rad.
    pub angle: f64,
    /// rad/s.
    pub omega: f64,
    /// Winding current, A.
    pub current: f64,
    /// A.
    pub goal_current: f64,
    pub torque_enabled: bool,
    /// Applied terminal voltage, V.
    pub voltage: f64,
    /// Current-loop integrator, V.
    pub integrator: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FruitContact {
    /// No fruit near the gripper (none configured, or not yet presented).
    Absent,
    /// Fruit sits between the pockets.
    Enveloped,
    /// Fruit is too large to enter and bears on the pocket rims.
    Rim,
    /// Fruit was pulled out of the pockets.
    Escaped,
    /// Fruit was dropped after release.
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PullOutcome {
    Detached,
    Slipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PullCommand {
    /// Force the pull ramps up to, N.
    pub target: f64,
    /// N/s.
    pub ramp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub closer: MotorSimState,
    pub opener: MotorSimState,
    /// Closer cable pull-in, m.
    pub closure: f64,
    /// Closer shaft rate, rad/s. The opener turns at `-omega`.
    pub omega: f64,
    /// m.
    pub aperture: f64,
    /// Normal force on the fruit, N.
    pub contact_force: f64,
    /// Closer cable tension, N.
    pub cable_tension: f64,
    pub pull_force_applied: f64,
    pub peak_pull_force: f64,
    pub peak_contact_force: f64,
    pub pull: Option<PullCommand>,
    pub pull_outcome: Option<PullOutcome>,
    pub fruit: FruitContact,
    /// Still on the vine.
    pub fruit_attached: bool,
    pub fruit_damaged: bool,
    /// Mechanism locked (scripted jam).
    pub jammed: bool,
    pub steps: u64,
    /// s.
    pub time: f64,
}

impl PlantState {
    pub fn initial(config: &PlantConfig) -> Self {
        Self {
            closer: MotorSimState::default(),
            opener: MotorSimState::default(),
            closure: 0.0,
            omega: 0.0,
            aperture: config.aperture_initial,
            contact_force: 0.0,
            cable_tension: 0.0,
            pull_force_applied: 0.0,
            peak_pull_force: 0.0,
            peak_contact_force: 0.0,
            pull: None,
            pull_outcome: None,
            fruit: FruitContact::Absent,
            fruit_attached: config.fruit.is_some(),
            fruit_damaged: false,
            jammed: false,
            steps: 0,
            time: 0.0,
        }
    }

    pub fn kinetic_energy(&self, config: &PlantConfig) -> f64 {
        config.motor.rotor_inertia * self.omega * self.omega
    }

    /// Electrical power drawn from the supply by both motors, W.
    pub fn electrical_power(&self) -> f64 {
        self.closer.voltage * self.closer.current + self.opener.voltage * self.opener.current
    }

    /// Shaft power delivered by both motors' electromagnetic torque, W.
    pub fn mechanical_power(&self, config: &PlantConfig) -> f64 {
        let kt = config.motor.torque_constant;
        kt * (self.closer.current * self.closer.omega + self.opener.current * self.opener.omega)
    }

    /// Grip capacity against a vertical pull, N.
    pub fn grip_capacity(&self, config: &PlantConfig) -> f64 {
        config.capacity_gain * self.cable_tension
    }
}

/// Aperture loads at one instant, linearised in the closing rate.
#[derive(Debug, Clone, Copy, Default)]
struct Loads {
    /// Spring part, N; positive pushes the pockets apart.
    force: f64,
    /// Stiffness of active springs w.r.t. aperture overlap, N/m.
    stiffness: f64,
    /// Damping of active contacts w.r.t. closing speed, N·s/m.
    damping: f64,
}

struct Contacts {
    loads: Loads,
    fruit_force: f64,
}

fn contacts(state: &PlantState, config: &PlantConfig, aperture: f64, closing_speed: f64) -> Contacts {
    let mut loads = Loads::default();
    let mut fruit_force = 0.0;

    let closed = config.aperture_min - aperture;
    if closed > 0.0 {
        loads.force += config.stop_stiffness * closed;
        loads.stiffness += config.stop_stiffness;
        loads.damping += config.stop_damping;
    }
    let over = aperture - config.aperture_max;
    if over > 0.0 {
        loads.force -= config.stop_stiffness * over;
        loads.stiffness += config.stop_stiffness;
        loads.damping += config.stop_damping;
    }

    if let Some(fruit) = &config.fruit {
        let overlap = fruit.diameter - aperture;
        match state.fruit {
            FruitContact::Enveloped if overlap > 0.0 => {
                let spring = fruit.contact_stiffness * overlap;
                fruit_force = (spring + fruit.contact_damping * closing_speed).max(0.0);
                if fruit_force > 0.0 {
                    loads.force += spring;
                    loads.stiffness += fruit.contact_stiffness;
                    loads.damping += fruit.contact_damping;
                }
            }
            FruitContact::Rim if overlap > 0.0 => {
                let elastic = fruit.contact_stiffness * overlap;
                let (spring, k) = if elastic < config.rim_yield_force {
                    (elastic, fruit.contact_stiffness)
                } else {
                    (config.rim_yield_force, 0.0)
                };
                fruit_force = (spring + config.rim_creep_damping * closing_speed).max(0.0);
                if fruit_force > 0.0 {
                    loads.force += spring;
                    loads.stiffness += k;
                    loads.damping += config.rim_creep_damping;
                }
            }
            _ => {}
        }
    }
    Contacts { loads, fruit_force }
}

/// Unsaturated loop response over one step, with the integrator taken
/// implicitly: `i' = (kp·g + I + ki·dt·g - ke·ω') / (R + kp + ki·dt)`.
/// Returns (offset, slope) so that `i' = offset - slope·ω'`.
fn tracking_law(m: &MotorSimState, config: &PlantConfig) -> (f64, f64) {
    let p = &config.motor;
    let kidt = p.current_ki * config.dt;
    let den = p.winding_resistance + p.current_kp + kidt;
    ((p.current_kp * m.goal_current + m.integrator + kidt * m.goal_current) / den, p.back_emf_constant / den)
}

/// Terminal voltage the loop would command if it were not saturated.
fn loop_voltage(m: &MotorSimState, current: f64, config: &PlantConfig) -> f64 {
    let p = &config.motor;
    let integrator = m.integrator + p.current_ki * config.dt * (m.goal_current - current);
    p.current_kp * (m.goal_current - current) + integrator
}

/// Current as an affine function of shaft speed for the coming step,
/// `i(ω) = offset - slope·ω`, choosing the saturated or tracking branch at
/// the present speed.
fn current_law(m: &MotorSimState, omega: f64, config: &PlantConfig) -> (f64, f64) {
    if !m.torque_enabled {
        return (0.0, 0.0);
    }
    let p = &config.motor;
    let (offset, slope) = tracking_law(m, config);
    let v = loop_voltage(m, offset - slope * omega, config);
    if v.abs() <= p.supply_voltage {
        (offset, slope)
    } else {
        (p.supply_voltage.copysign(v) / p.winding_resistance, p.back_emf_constant / p.winding_resistance)
    }
}

/// Resolve the current loop at shaft speed `omega` and advance its integrator.
fn settle_current(m: &mut MotorSimState, omega: f64, config: &PlantConfig) {
    m.omega = omega;
    if !m.torque_enabled {
        m.current = 0.0;
        m.voltage = 0.0;
        m.integrator = 0.0;
        return;
    }
    let p = &config.motor;
    let (r, ke, vs) = (p.winding_resistance, p.back_emf_constant, p.supply_voltage);
    let (offset, slope) = tracking_law(m, config);
    let tracking = offset - slope * omega;
    let v = loop_voltage(m, tracking, config);
    if v.abs() <= vs {
        m.current = tracking;
        m.voltage = v;
        m.integrator = v - p.current_kp * (m.goal_current - tracking);
    } else {
        // Pinned at the rail: hold the integrator (no wind-up) unless the
        // error has turned around.
        m.voltage = vs.copysign(v);
        m.current = (m.voltage - ke * omega) / r;
        let error = m.goal_current - m.current;
        if error.signum() != v.signum() {
            m.integrator = (m.integrator + p.current_ki * config.dt * error).clamp(-vs, vs);
        }
    }
}

/// Advance the plant by one `dt`.
pub fn step(state: &PlantState, config: &PlantConfig) -> Result<PlantState, SimError> {
    let mut next = state.clone();
    let p = &config.motor;
    let dt = config.dt;
    let r = config.spool_radius;
    let g = config.cable_to_aperture_gain;
    let lever = g * r;
    let inertia = 2.0 * p.rotor_inertia;

    let omega = state.omega;
    let aperture = config.aperture_initial - g * state.closure;
    let now = contacts(state, config, aperture, lever * omega);
    let loads = now.loads;

    // Closer turns at +ω, opener at -ω.
    let (ac, dc) = current_law(&state.closer, omega, config);
    let (ao, d_o) = current_law(&state.opener, -omega, config);
    let kt = p.torque_constant;
    let drive = kt * ac - kt * ao - lever * loads.force;
    let damping = kt * dc + kt * d_o + 2.0 * p.viscous_friction + lever * lever * (loads.stiffness * dt + loads.damping);
    let coulomb = 2.0 * p.coulomb_friction;

    let denom = inertia + dt * damping;
    let new_omega = if state.jammed {
        0.0
    } else if omega != 0.0 {
        let w = (inertia * omega + dt * (drive - coulomb * omega.signum())) / denom;
        if w.signum() != omega.signum() {
            0.0
        } else {
            w
        }
    } else if drive.abs() <= coulomb {
        0.0
    } else {
        dt * (drive - coulomb * drive.signum()) / denom
    };

    next.omega = new_omega;
    next.closure = state.closure + r * new_omega * dt;
    if !next.omega.is_finite() || next.omega.abs() > MAX_OMEGA || next.closure.abs() > MAX_CLOSURE {
        return Err(SimError::NumericalBlowup {
            time: state.time,
            detail: format!("omega {} closure {}", next.omega, next.closure),
        });
    }
    next.closer.angle = next.closure / r;
    next.opener.angle = -next.closure / r;
    settle_current(&mut next.closer, new_omega, config);
    settle_current(&mut next.opener, -new_omega, config);

    let raw_aperture = config.aperture_initial - g * next.closure;
    next.aperture = raw_aperture.clamp(0.0, config.aperture_max);
    let after = contacts(&next, config, raw_aperture, lever * new_omega);
    let closed = (config.aperture_min - raw_aperture).max(0.0) * config.stop_stiffness;
    next.cable_tension = g * (after.fruit_force + closed);

    update_fruit(&mut next, config, after.fruit_force);

    next.steps = state.steps + 1;
    next.time = next.steps as f64 * dt;
    Ok(next)
}

fn update_fruit(state: &mut PlantState, config: &PlantConfig, fruit_force: f64) {
    let Some(fruit) = &config.fruit else {
        state.contact_force = 0.0;
        return;
    };

    if let Some(pull) = state.pull {
        if state.fruit_attached && pull.ramp > 0.0 {
            let f = (state.pull_force_applied + pull.ramp * config.dt).min(pull.target);
            state.pull_force_applied = f;
            state.peak_pull_force = state.peak_pull_force.max(f);
            let held = state.fruit == FruitContact::Enveloped;
            let capacity = if held { state.grip_capacity(config) } else { 0.0 };
            if capacity < fruit.stem_force && f > capacity {
                if held {
                    state.fruit = FruitContact::Escaped;
                }
                state.pull_outcome = Some(PullOutcome::Slipped);
                state.pull = None;
                state.pull_force_applied = 0.0;
            } else if f >= fruit.stem_force {
                state.fruit_attached = false;
                state.pull_outcome = Some(PullOutcome::Detached);
                state.pull = None;
                state.pull_force_applied = 0.0;
            }
        }
    }

    let held = state.fruit == FruitContact::Enveloped && state.fruit_attached;
    let contact = match state.fruit {
        FruitContact::Enveloped | FruitContact::Rim => fruit_force,
        _ => 0.0,
    };
    state.contact_force = contact + if held { state.pull_force_applied } else { 0.0 };
    state.peak_contact_force = state.peak_contact_force.max(state.contact_force);
    if state.contact_force > fruit.damage_force {
        state.fruit_damaged = true;
    }

    if state.fruit == FruitContact::Enveloped && !state.fruit_attached && state.aperture >= fruit.diameter {
        state.fruit = FruitContact::Dropped;
    }
}

/// Owns a configuration and its evolving state.
#[derive(Debug, Clone)]
pub struct Plant {
    config: PlantConfig,
    state: PlantState,
}

impl Plant {
    pub fn new(config: PlantConfig) -> Result<Self, SimError> {
        config.validate()?;
        let state = PlantState::initial(&config);
        Ok(Self { config, state })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut PlantState {
        &mut self.state
    }

    pub fn step(&mut self) -> Result<(), SimError> {
        self.state = step(&self.state, &self.config)?;
        Ok(())
    }

    pub fn run(&mut self, steps: u64) -> Result<(), SimError> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    pub fn motor_mut(&mut self, closer: bool) -> &mut MotorSimState {
        if closer {
            &mut self.state.closer
        } else {
            &mut self.state.opener
        }
    }

    /// Present the configured fruit to the gripper. It enters the pockets
    /// only if it fits through the current opening.
    pub fn insert_fruit(&mut self) -> Result<FruitContact, SimError> {
        let Some(fruit) = &self.config.fruit else {
            return Err(SimError::NoFruit);
        };
        if self.state.fruit != FruitContact::Absent {
            return Ok(self.state.fruit);
        }
        self.state.fruit = if fruit.diameter >= self.config.aperture_max {
            FruitContact::Rim
        } else if self.state.aperture >= fruit.diameter {
            FruitContact::Enveloped
        } else {
            return Err(SimError::ApertureTooSmall {
                aperture: self.state.aperture,
                diameter: fruit.diameter,
            });
        };
        self.state.fruit_attached = true;
        Ok(self.state.fruit)
    }

    /// Start a vertical pull ramping at `ramp` N/s up to `target` N.
    /// A zero ramp leaves the plant untouched.
    pub fn apply_pull(&mut self, target: f64, ramp: f64) -> Result<(), SimError> {
        if ramp == 0.0 {
            return Ok(());
        }
        if !(ramp > 0.0 && target > 0.0) {
            return Err(SimError::Config(format!("pull target {target} N, ramp {ramp} N/s")));
        }
        if !self.state.fruit_attached {
            return Err(SimError::FruitNotAttached);
        }
        self.state.pull = Some(PullCommand { target, ramp });
        self.state.pull_outcome = None;
        Ok(())
    }

    /// Forget the last fruit and its force history so another can be
    /// presented, as after a completed harvest.
    pub fn next_fruit(&mut self) {
        let s = &mut self.state;
        s.fruit = FruitContact::Absent;
        s.fruit_attached = self.config.fruit.is_some();
        s.fruit_damaged = false;
        s.pull = None;
        s.pull_outcome = None;
        s.pull_force_applied = 0.0;
        s.peak_pull_force = 0.0;
        s.peak_contact_force = 0.0;
        s.contact_force = 0.0;
    }

    pub fn set_jammed(&mut self, jammed: bool) {
        self.state.jammed = jammed;
        if jammed {
            self.state.omega = 0.0;
        }
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.state.kinetic_energy(&self.config)
    }
}
