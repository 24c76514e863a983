//! The plant behind a virtual bus: two emulated servos whose control tables
//! are backed by the simulated motors.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::PlantConfig;
use super::plant::{FruitContact, Plant, PlantState, PullOutcome};
use super::SimError;
use crate::bus::registers::{baud_code, Register, XL330_CURRENT_LIMIT, XL330_M288_MODEL};
use crate::bus::{sleep_until, units, OperatingMode, RoleMap, Transport, TransportError};
use crate::controller::{Clock, PlantProbe, ProbeReading};
use crate::protocol::{Decoder, Instruction, InstructionPacket, StatusPacket, BROADCAST_ID};

const TABLE_LEN: usize = 147;

/// Status result codes.
const ERR_INSTRUCTION: u8 = 2;
const ERR_DATA_RANGE: u8 = 4;
const ERR_DATA_LENGTH: u8 = 5;
const ERR_DATA_LIMIT: u8 = 6;
const ERR_ACCESS: u8 = 7;

const FIRMWARE_VERSION: i64 = 46;

struct Device {
    table: [u8; TABLE_LEN],
}

impl Device {
    fn new(id: u8) -> Self {
        let mut d = Self { table: [0; TABLE_LEN] };
        d.set(Register::ModelNumber, XL330_M288_MODEL as i64);
        d.set(Register::FirmwareVersion, FIRMWARE_VERSION);
        d.set(Register::Id, id as i64);
        d.set(Register::BaudRate, baud_code(57_600).unwrap_or(1) as i64);
        d.set(Register::ReturnDelayTime, 250);
        d.set(Register::OperatingMode, OperatingMode::PositionControl.raw() as i64);
        d.set(Register::CurrentLimit, XL330_CURRENT_LIMIT);
        d.set(Register::StatusReturnLevel, 2);
        d.set(Register::PresentInputVoltage, 50);
        d.set(Register::PresentTemperature, 30);
        d
    }

    fn id(&self) -> u8 {
        self.table[Register::Id.spec().address as usize]
    }

    fn get(&self, r: Register) -> i64 {
        let s = r.spec();
        s.decode(&self.table[s.address as usize..s.end() as usize])
    }

    fn set(&mut self, r: Register, v: i64) {
        let s = r.spec();
        self.table[s.address as usize..s.end() as usize].copy_from_slice(&s.encode(v));
    }

    fn torque_on(&self) -> bool {
        self.get(Register::TorqueEnable) != 0
    }

    fn current_mode(&self) -> bool {
        self.get(Register::OperatingMode) == OperatingMode::CurrentControl.raw() as i64
    }

    /// Goal current the emulated servo actually regulates to, mA.
    fn effective_goal_ma(&self) -> f64 {
        if self.torque_on() && self.current_mode() {
            units::current_ma(self.get(Register::GoalCurrent) as i16)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AntagonismStats {
    /// Goal writes checked.
    pub checks: u64,
    /// Writes after which both motors were commanded above the limit.
    pub violations: u64,
}

/// Plant, emulated servos and bus state, stepped under one lock.
pub struct SimWorld {
    plant: Plant,
    ids: RoleMap,
    devices: [Device; 2],
    rng: ChaCha8Rng,
    bus_dead: bool,
    antagonism_limit_ma: f64,
    antagonism: AntagonismStats,
}

impl SimWorld {
    pub fn new(config: PlantConfig, ids: RoleMap) -> Result<Self, SimError> {
        ids.validate().map_err(|e| SimError::Config(e.to_string()))?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let plant = Plant::new(config)?;
        Ok(Self {
            plant,
            devices: [Device::new(ids.closer), Device::new(ids.opener)],
            ids,
            rng,
            bus_dead: false,
            antagonism_limit_ma: 10.0,
            antagonism: AntagonismStats::default(),
        })
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn plant_mut(&mut self) -> &mut Plant {
        &mut self.plant
    }

    pub fn state(&self) -> &PlantState {
        self.plant.state()
    }

    pub fn config(&self) -> &PlantConfig {
        self.plant.config()
    }

    pub fn ids(&self) -> RoleMap {
        self.ids
    }

    pub fn step(&mut self, steps: u64) -> Result<(), SimError> {
        self.plant.run(steps)
    }

    /// Silence the bus, as if the cable were pulled.
    pub fn set_bus_dead(&mut self, dead: bool) {
        self.bus_dead = dead;
    }

    pub fn bus_dead(&self) -> bool {
        self.bus_dead
    }

    pub fn set_antagonism_limit(&mut self, ma: f64) {
        self.antagonism_limit_ma = ma;
    }

    pub fn antagonism(&self) -> AntagonismStats {
        self.antagonism
    }

    pub fn insert_fruit(&mut self) -> Result<FruitContact, SimError> {
        self.plant.insert_fruit()
    }

    pub fn apply_pull(&mut self, target: f64, ramp: f64) -> Result<(), SimError> {
        self.plant.apply_pull(target, ramp)
    }

    pub fn next_fruit(&mut self) {
        self.plant.next_fruit()
    }

    pub fn set_jammed(&mut self, jammed: bool) {
        self.plant.set_jammed(jammed)
    }

    /// Goal current each servo is regulating to, mA, as (closer, opener).
    pub fn effective_goals_ma(&self) -> (f64, f64) {
        (self.devices[0].effective_goal_ma(), self.devices[1].effective_goal_ma())
    }

    pub fn probe_reading(&self) -> ProbeReading {
        let s = self.plant.state();
        ProbeReading {
            contact_force: s.contact_force,
            pull_force: s.pull_force_applied,
            pull_active: s.pull.is_some(),
            detached: s.pull_outcome == Some(PullOutcome::Detached),
            peak_pull_force: s.peak_pull_force,
            damaged: s.fruit_damaged,
        }
    }

    fn device_index(&self, id: u8) -> Option<usize> {
        self.devices.iter().position(|d| d.id() == id)
    }

    fn noisy(&mut self, value: f64, std: f64) -> f64 {
        if std > 0.0 {
            // std is validated finite and positive.
            value + Normal::new(0.0, std).map_or(0.0, |n| n.sample(&mut self.rng))
        } else {
            value
        }
    }

    fn refresh_present(&mut self, idx: usize) {
        let s = self.plant.state();
        let m = if idx == 0 { &s.closer } else { &s.opener };
        let noise = self.plant.config().sensor_noise;
        let (current, omega, angle) = (m.current, m.omega, m.angle);
        let current_ma = self.noisy(current * 1000.0, noise.current_ma);
        let rpm = self.noisy(units::rad_per_s_to_rpm(omega), noise.velocity_rpm);
        let velocity = units::velocity_raw(rpm);
        let d = &mut self.devices[idx];
        d.set(Register::PresentCurrent, units::current_raw(current_ma) as i64);
        d.set(Register::PresentVelocity, velocity as i64);
        d.set(Register::PresentPosition, units::position_raw(units::rad_to_rev(angle)) as i64);
        d.set(Register::Moving, (velocity != 0) as i64);
    }

    fn sync_to_plant(&mut self) {
        for (idx, closer) in [(0, true), (1, false)] {
            let d = &self.devices[idx];
            let torque = d.torque_on();
            let goal = d.effective_goal_ma() / 1000.0;
            let m = self.plant.motor_mut(closer);
            m.torque_enabled = torque;
            m.goal_current = goal;
        }
        let (c, o) = self.effective_goals_ma();
        self.antagonism.checks += 1;
        if c.abs() > self.antagonism_limit_ma && o.abs() > self.antagonism_limit_ma {
            self.antagonism.violations += 1;
        }
    }

    fn read(&mut self, idx: usize, params: &[u8]) -> Result<Vec<u8>, u8> {
        let [a0, a1, l0, l1] = params else {
            return Err(ERR_DATA_LENGTH);
        };
        let address = u16::from_le_bytes([*a0, *a1]) as usize;
        let len = u16::from_le_bytes([*l0, *l1]) as usize;
        if len == 0 || address + len > TABLE_LEN {
            return Err(ERR_ACCESS);
        }
        self.refresh_present(idx);
        Ok(self.devices[idx].table[address..address + len].to_vec())
    }

    fn write(&mut self, idx: usize, params: &[u8]) -> Result<(), u8> {
        if params.len() < 3 {
            return Err(ERR_DATA_LENGTH);
        }
        let address = u16::from_le_bytes([params[0], params[1]]) as usize;
        let data = &params[2..];
        if address + data.len() > TABLE_LEN {
            return Err(ERR_ACCESS);
        }
        let d = &self.devices[idx];
        let mut touched = Vec::new();
        for a in address..address + data.len() {
            let Some(r) = Register::at(a as u16) else {
                return Err(ERR_ACCESS);
            };
            let s = r.spec();
            if s.access != crate::bus::Access::ReadWrite {
                return Err(ERR_ACCESS);
            }
            if (a as u16) < Register::EEPROM_END && d.torque_on() {
                return Err(ERR_ACCESS);
            }
            if !touched.contains(&r) {
                touched.push(r);
            }
        }
        let mut scratch = d.table;
        scratch[address..address + data.len()].copy_from_slice(data);
        let staged = Device { table: scratch };
        for r in &touched {
            let v = staged.get(*r);
            let ok = match r {
                Register::GoalCurrent => v.abs() <= staged.get(Register::CurrentLimit),
                Register::CurrentLimit => (0..=XL330_CURRENT_LIMIT).contains(&v),
                Register::TorqueEnable => v <= 1,
                Register::OperatingMode => OperatingMode::from_raw(v as u8).is_some(),
                Register::Id => v <= 252,
                _ => true,
            };
            if !ok {
                return Err(if *r == Register::GoalCurrent { ERR_DATA_LIMIT } else { ERR_DATA_RANGE });
            }
        }
        self.devices[idx] = staged;
        self.sync_to_plant();
        Ok(())
    }

    /// Handle one instruction; returns the reply frames.
    fn handle(&mut self, packet: &InstructionPacket) -> Vec<StatusPacket> {
        let targets: Vec<usize> = if packet.id == BROADCAST_ID {
            (0..self.devices.len()).collect()
        } else {
            self.device_index(packet.id).into_iter().collect()
        };
        let broadcast = packet.id == BROADCAST_ID;
        let mut replies = Vec::new();
        for idx in targets {
            let id = self.devices[idx].id();
            let reply = match packet.instruction {
                Instruction::Ping => {
                    let [lo, hi] = XL330_M288_MODEL.to_le_bytes();
                    Some(StatusPacket::new(id, 0, vec![lo, hi, FIRMWARE_VERSION as u8]))
                }
                Instruction::Read if broadcast => None,
                Instruction::Read => Some(match self.read(idx, &packet.params) {
                    Ok(data) => StatusPacket::new(id, 0, data),
                    Err(code) => StatusPacket::new(id, code, Vec::new()),
                }),
                Instruction::Write => {
                    let result = self.write(idx, &packet.params);
                    (!broadcast).then(|| StatusPacket::new(id, result.err().unwrap_or(0), Vec::new()))
                }
                _ => (!broadcast).then(|| StatusPacket::new(id, ERR_INSTRUCTION, Vec::new())),
            };
            replies.extend(reply);
        }
        replies
    }
}

/// Shared access to one simulated world.
#[derive(Clone)]
pub struct SimHandle(Arc<Mutex<SimWorld>>);

impl SimHandle {
    pub fn new(world: SimWorld) -> Self {
        Self(Arc::new(Mutex::new(world)))
    }

    pub fn lock(&self) -> MutexGuard<'_, SimWorld> {
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn virtual_bus(&self) -> VirtualBus {
        VirtualBus {
            world: self.clone(),
            decoder: Decoder::new(),
            rx: VecDeque::new(),
        }
    }

    pub fn clock(&self) -> SimClock {
        SimClock { world: self.clone() }
    }

    pub fn probe(&self) -> SimProbe {
        SimProbe { world: self.clone() }
    }
}

/// Byte-level stand-in for the serial link to the two servos.
pub struct VirtualBus {
    world: SimHandle,
    decoder: Decoder,
    rx: VecDeque<u8>,
}

impl Transport for VirtualBus {
    fn write_all(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        let mut world = self.world.lock();
        if world.bus_dead {
            return Ok(());
        }
        let frames = self.decoder.push_frames(bytes);
        for frame in frames.packets {
            let Ok(packet) = frame.into_instruction() else {
                continue;
            };
            for reply in world.handle(&packet) {
                let bytes = reply.encode().map_err(|e| TransportError::Io(e.to_string()))?;
                self.rx.extend(bytes);
            }
        }
        Ok(())
    }

    fn read(&mut self, buf: &mut [u8], deadline: Instant) -> Result<usize, TransportError> {
        if self.rx.is_empty() {
            sleep_until(deadline);
            return Ok(0);
        }
        let n = buf.len().min(self.rx.len());
        for (slot, b) in buf.iter_mut().zip(self.rx.drain(..n)) {
            *slot = b;
        }
        Ok(n)
    }

    fn flush(&mut self) -> Result<(), TransportError> {
        self.rx.clear();
        Ok(())
    }
}

/// Simulated time: waiting steps the plant.
pub struct SimClock {
    world: SimHandle,
}

impl Clock for SimClock {
    fn now(&self) -> f64 {
        self.world.lock().state().time
    }

    fn wait(&mut self, period: f64) -> Result<(), String> {
        let mut w = self.world.lock();
        let steps = (period / w.config().dt).round().max(1.0) as u64;
        w.step(steps).map_err(|e| e.to_string())
    }
}

pub struct SimProbe {
    world: SimHandle,
}

impl PlantProbe for SimProbe {
    fn read(&self) -> ProbeReading {
        self.world.lock().probe_reading()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::{BusConfig, BusError, MotorBus, MotorRole};

    fn world() -> SimHandle {
        SimHandle::new(SimWorld::new(PlantConfig::default(), RoleMap::default()).unwrap())
    }

    #[test]
    fn ping_round_trip_through_codec() {
        let h = world();
        let mut bus = h.virtual_bus();
        bus.write_all(&InstructionPacket::ping(1).encode().unwrap()).unwrap();
        let mut buf = [0u8; 64];
        let n = bus.read(&mut buf, Instant::now()).unwrap();
        let out = Decoder::new().decode_step(&buf[..n]);
        assert!(out.errors.is_empty());
        assert_eq!(out.packets.len(), 1);
        assert_eq!(out.packets[0].id, 1);
        assert_eq!(&out.packets[0].params[..2], &XL330_M288_MODEL.to_le_bytes());
    }

    #[test]
    fn goal_current_drives_plant() {
        let h = world();
        let mut bus = MotorBus::new(h.virtual_bus(), BusConfig::default()).unwrap();
        bus.set_operating_mode(MotorRole::Closer, OperatingMode::CurrentControl).unwrap();
        bus.torque(MotorRole::Closer, true).unwrap();
        bus.set_goal_current(MotorRole::Closer, 100.0).unwrap();
        assert_eq!(h.lock().state().closer.goal_current, 0.1);
        h.lock().step(100).unwrap();
        let omega = h.lock().state().closer.omega;
        let raw = bus.read_raw_state(MotorRole::Closer).unwrap();
        assert_eq!(raw.velocity, units::velocity_raw(units::rad_per_s_to_rpm(omega)));
        let s = bus.read_state(MotorRole::Closer).unwrap();
        assert!(s.velocity_rpm > 100.0);
    }

    #[test]
    fn position_mode_ignores_goal_current() {
        let h = world();
        let mut bus = MotorBus::new(h.virtual_bus(), BusConfig::default()).unwrap();
        bus.torque(MotorRole::Closer, true).unwrap();
        bus.set_goal_current(MotorRole::Closer, 100.0).unwrap();
        assert_eq!(h.lock().state().closer.goal_current, 0.0);
    }

    #[test]
    fn read_only_and_locked_writes_rejected() {
        let h = world();
        let mut bus = MotorBus::new(h.virtual_bus(), BusConfig::default()).unwrap();
        let ro = InstructionPacket::write(1, 126, &[1, 0]);
        assert!(matches!(bus.transact(&ro), Err(BusError::DeviceError { code: 7, .. })));
        bus.torque(MotorRole::Closer, true).unwrap();
        assert!(matches!(
            bus.set_operating_mode(MotorRole::Closer, OperatingMode::CurrentControl),
            Err(BusError::ModeChangeWhileTorqued)
        ));
        let eeprom = InstructionPacket::write(1, 11, &[0]);
        assert!(matches!(bus.transact(&eeprom), Err(BusError::DeviceError { code: 7, .. })));
        let over = InstructionPacket::write(1, 102, &2000i16.to_le_bytes());
        assert!(matches!(bus.transact(&over), Err(BusError::DeviceError { code: 6, .. })));
    }

    #[test]
    fn dead_bus_times_out() {
        let h = world();
        h.lock().set_bus_dead(true);
        let mut bus = MotorBus::new(h.virtual_bus(), BusConfig::default()).unwrap();
        assert!(matches!(bus.ping(1), Err(BusError::Timeout { .. })));
    }

    #[test]
    fn broadcast_ping_answers_for_both() {
        let h = world();
        let mut bus = h.virtual_bus();
        bus.write_all(&InstructionPacket::ping(BROADCAST_ID).encode().unwrap()).unwrap();
        let mut buf = [0u8; 64];
        let n = bus.read(&mut buf, Instant::now()).unwrap();
        let ids: Vec<u8> = Decoder::new().decode_step(&buf[..n]).packets.iter().map(|p| p.id).collect();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn antagonism_counted() {
        let h = world();
        let mut bus = MotorBus::new(h.virtual_bus(), BusConfig::default()).unwrap();
        for role in MotorRole::BOTH {
            bus.set_operating_mode(role, OperatingMode::CurrentControl).unwrap();
            bus.torque(role, true).unwrap();
        }
        bus.set_goal_current(MotorRole::Closer, 50.0).unwrap();
        assert_eq!(h.lock().antagonism().violations, 0);
        bus.set_goal_current(MotorRole::Opener, 50.0).unwrap();
        assert_eq!(h.lock().antagonism().violations, 1);
    }

    #[test]
    fn clock_steps_plant() {
        let h = world();
        let mut c = h.clock();
        c.wait(0.02).unwrap();
        assert_eq!(h.lock().state().steps, 20);
        assert!((c.now() - 0.02).abs() < 1e-12);
    }
}
