use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::registers::{baud_code, OperatingMode, Register, PRESENT_BLOCK};
use super::transport::{Transport, TransportError};
use super::units;
use crate::protocol::{
    DecodeError, Decoder, InstructionPacket, ProtocolError, StatusPacket, BROADCAST_ID, MAX_DEVICE_ID,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BusError {
    #[error("no reply from id {id} within {deadline:?}")]
    Timeout { id: u8, deadline: Duration },
    #[error("device {id} reported error {code} (alert: {alert})")]
    DeviceError { id: u8, code: u8, alert: bool },
    #[error("gave up on id {id} after {attempts} corrupted replies")]
    CrcGiveUp { id: u8, attempts: u32 },
    #[error("goal current {requested_ma} mA exceeds cap of {cap_ma} mA")]
    OutOfRange { requested_ma: f64, cap_ma: f64 },
    #[error("operating mode can only change with torque disabled")]
    ModeChangeWhileTorqued,
    #[error("readback of {register:?} returned {read}, expected {expected}")]
    VerifyFailed { register: Register, expected: i64, read: i64 },
    #[error("{register:?} is read-only")]
    ReadOnly { register: Register },
    #[error("value {value} does not fit {register:?}")]
    ValueRange { register: Register, value: i64 },
    #[error("goal current needs current-control mode, motor is in {0:?}")]
    NotCurrentMode(OperatingMode),
    #[error("reply from id {id} was malformed: {reason}")]
    BadReply { id: u8, reason: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("invalid bus configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MotorRole {
    Closer,
    Opener,
}

impl MotorRole {
    pub const BOTH: [MotorRole; 2] = [MotorRole::Closer, MotorRole::Opener];
}

/// Bus ids of the two cable motors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleMap {
    pub closer: u8,
    pub opener: u8,
}

impl Default for RoleMap {
    fn default() -> Self {
        Self { closer: 1, opener: 2 }
    }
}

impl RoleMap {
    pub fn id(&self, role: MotorRole) -> u8 {
        match role {
            MotorRole::Closer => self.closer,
            MotorRole::Opener => self.opener,
        }
    }

    pub fn role(&self, id: u8) -> Option<MotorRole> {
        if id == self.closer {
            Some(MotorRole::Closer)
        } else if id == self.opener {
            Some(MotorRole::Opener)
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<(), BusError> {
        if self.closer == self.opener {
            return Err(BusError::Config(format!("closer and opener share id {}", self.closer)));
        }
        for id in [self.closer, self.opener] {
            if id > MAX_DEVICE_ID {
                return Err(BusError::Config(format!("id {id} is not a device id")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BusConfig {
    pub ids: RoleMap,
    pub baud: u32,
    #[serde(with = "millis", rename = "deadline_ms")]
    pub deadline: Duration,
    pub retries: u32,
    pub current_cap_ma: f64,
}

impl Default for BusConfig {
    fn default() -> Self {
        Self {
            ids: RoleMap::default(),
            baud: 57_600,
            deadline: Duration::from_millis(20),
            retries: 2,
            current_cap_ma: 150.0,
        }
    }
}

impl BusConfig {
    pub fn validate(&self) -> Result<(), BusError> {
        self.ids.validate()?;
        if baud_code(self.baud).is_none() {
            return Err(BusError::Config(format!("unsupported baud rate {}", self.baud)));
        }
        if !(self.current_cap_ma > 0.0) {
            return Err(BusError::Config("current cap must be positive".into()));
        }
        Ok(())
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Raw present-state block as read from the device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RawMotorState {
    pub current: i16,
    pub velocity: i32,
    pub position: i32,
}

impl RawMotorState {
    pub fn parse(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != PRESENT_BLOCK.1 as usize {
            return None;
        }
        Some(Self {
            current: i16::from_le_bytes([bytes[0], bytes[1]]),
            velocity: i32::from_le_bytes(bytes[2..6].try_into().ok()?),
            position: i32::from_le_bytes(bytes[6..10].try_into().ok()?),
        })
    }

    pub fn to_bytes(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10);
        out.extend_from_slice(&self.current.to_le_bytes());
        out.extend_from_slice(&self.velocity.to_le_bytes());
        out.extend_from_slice(&self.position.to_le_bytes());
        out
    }
}

/// Snapshot of one servo in engineering units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotorState {
    pub position_rev: f64,
    pub velocity_rpm: f64,
    pub current_ma: f64,
}

impl From<RawMotorState> for MotorState {
    fn from(raw: RawMotorState) -> Self {
        Self {
            position_rev: units::position_rev(raw.position),
            velocity_rpm: units::velocity_rpm(raw.velocity),
            current_ma: units::current_ma(raw.current),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BusStats {
    pub transactions: u64,
    pub retries: u64,
    pub timeouts: u64,
}

/// Command/response access to the two gripper servos over one transport.
///
/// Every operation takes `&mut self`, so a bus can only ever have one
/// transaction in flight. Share it between threads with [`SharedBus`].
pub struct MotorBus<T: Transport> {
    transport: T,
    decoder: Decoder,
    config: BusConfig,
    modes: [Option<OperatingMode>; 256],
    stats: BusStats,
}

impl<T: Transport> MotorBus<T> {
    pub fn new(transport: T, config: BusConfig) -> Result<Self, BusError> {
        config.validate()?;
        Ok(Self {
            transport,
            decoder: Decoder::new(),
            config,
            modes: [None; 256],
            stats: BusStats::default(),
        })
    }

    pub fn config(&self) -> &BusConfig {
        &self.config
    }

    pub fn stats(&self) -> BusStats {
        self.stats
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }

    pub fn into_transport(self) -> T {
        self.transport
    }

    pub fn transact(&mut self, packet: &InstructionPacket) -> Result<StatusPacket, BusError> {
        self.transact_with(packet, self.config.deadline)
    }

    /// Send `packet` and wait for the matching status reply. Corrupted
    /// replies are retried up to `retries` times.
    pub fn transact_with(&mut self, packet: &InstructionPacket, deadline: Duration) -> Result<StatusPacket, BusError> {
        let frame = packet.encode()?;
        self.stats.transactions += 1;
        let mut attempts = 0u32;
        let mut buf = [0u8; 512];
        loop {
            attempts += 1;
            self.transport.flush()?;
            self.decoder.reset();
            self.transport.write_all(&frame)?;
            let until = Instant::now() + deadline;
            let mut corrupted = false;
            loop {
                let n = self.transport.read(&mut buf, until)?;
                if n > 0 {
                    let out = self.decoder.decode_step(&buf[..n]);
                    corrupted |= out
                        .errors
                        .iter()
                        .any(|e| matches!(e, DecodeError::CrcMismatch { .. }));
                    if let Some(reply) = out
                        .packets
                        .into_iter()
                        .find(|p| packet.id == BROADCAST_ID || p.id == packet.id)
                    {
                        if reply.error != 0 {
                            return Err(BusError::DeviceError {
                                id: reply.id,
                                code: reply.result_code(),
                                alert: reply.hardware_alert(),
                            });
                        }
                        return Ok(reply);
                    }
                    if corrupted {
                        break;
                    }
                } else if Instant::now() >= until {
                    break;
                }
            }
            if corrupted {
                if attempts <= self.config.retries {
                    self.stats.retries += 1;
                    continue;
                }
                return Err(BusError::CrcGiveUp { id: packet.id, attempts });
            }
            self.stats.timeouts += 1;
            return Err(BusError::Timeout {
                id: packet.id,
                deadline,
            });
        }
    }

    /// Returns the model number.
    pub fn ping(&mut self, id: u8) -> Result<u16, BusError> {
        let reply = self.transact(&InstructionPacket::ping(id))?;
        if reply.params.len() < 2 {
            return Err(BusError::BadReply {
                id,
                reason: format!("ping reply has {} params", reply.params.len()),
            });
        }
        Ok(u16::from_le_bytes([reply.params[0], reply.params[1]]))
    }

    pub fn read_register(&mut self, id: u8, register: Register) -> Result<i64, BusError> {
        let spec = register.spec();
        let reply = self.transact(&InstructionPacket::read(id, spec.address, spec.width as u16))?;
        if reply.params.len() != spec.width as usize {
            return Err(BusError::BadReply {
                id,
                reason: format!("{} returned {} bytes", spec.name, reply.params.len()),
            });
        }
        Ok(spec.decode(&reply.params))
    }

    pub fn write_register(&mut self, id: u8, register: Register, value: i64) -> Result<(), BusError> {
        let spec = register.spec();
        if spec.access != super::registers::Access::ReadWrite {
            return Err(BusError::ReadOnly { register });
        }
        let (lo, hi) = spec.range();
        if value < lo || value > hi {
            return Err(BusError::ValueRange { register, value });
        }
        self.transact(&InstructionPacket::write(id, spec.address, &spec.encode(value)))?;
        Ok(())
    }

    pub fn read_state(&mut self, role: MotorRole) -> Result<MotorState, BusError> {
        self.read_raw_state(role).map(MotorState::from)
    }

    /// One read of the contiguous Present{Current,Velocity,Position} block.
    pub fn read_raw_state(&mut self, role: MotorRole) -> Result<RawMotorState, BusError> {
        let id = self.config.ids.id(role);
        let (address, len) = PRESENT_BLOCK;
        let reply = self.transact(&InstructionPacket::read(id, address, len))?;
        RawMotorState::parse(&reply.params).ok_or_else(|| BusError::BadReply {
            id,
            reason: format!("present block returned {} bytes", reply.params.len()),
        })
    }

    /// Write the goal current, rounded to the nearest raw unit.
    pub fn set_goal_current(&mut self, role: MotorRole, current_ma: f64) -> Result<i16, BusError> {
        let cap = self.config.current_cap_ma;
        if !current_ma.is_finite() || current_ma.abs() > cap {
            return Err(BusError::OutOfRange {
                requested_ma: current_ma,
                cap_ma: cap,
            });
        }
        let id = self.config.ids.id(role);
        if let Some(mode) = self.modes[id as usize] {
            if mode != OperatingMode::CurrentControl {
                return Err(BusError::NotCurrentMode(mode));
            }
        }
        let raw = units::current_raw(current_ma);
        self.write_register(id, Register::GoalCurrent, raw as i64)?;
        Ok(raw)
    }

    pub fn set_operating_mode(&mut self, role: MotorRole, mode: OperatingMode) -> Result<(), BusError> {
        let id = self.config.ids.id(role);
        if self.read_register(id, Register::TorqueEnable)? != 0 {
            return Err(BusError::ModeChangeWhileTorqued);
        }
        let expected = mode.raw() as i64;
        self.write_register(id, Register::OperatingMode, expected)?;
        let read = self.read_register(id, Register::OperatingMode)?;
        if read != expected {
            self.modes[id as usize] = None;
            return Err(BusError::VerifyFailed {
                register: Register::OperatingMode,
                expected,
                read,
            });
        }
        self.modes[id as usize] = Some(mode);
        Ok(())
    }

    pub fn torque(&mut self, role: MotorRole, on: bool) -> Result<(), BusError> {
        let id = self.config.ids.id(role);
        self.write_register(id, Register::TorqueEnable, on as i64)
    }

    /// Last operating mode confirmed by readback.
    pub fn known_mode(&self, role: MotorRole) -> Option<OperatingMode> {
        self.modes[self.config.ids.id(role) as usize]
    }
}

/// A bus shared by several callers; the mutex serialises their commands.
pub struct SharedBus<T: Transport> {
    inner: Arc<Mutex<MotorBus<T>>>,
}

impl<T: Transport> Clone for SharedBus<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Transport> SharedBus<T> {
    pub fn new(bus: MotorBus<T>) -> Self {
        Self {
            inner: Arc::new(Mutex::new(bus)),
        }
    }

    pub fn with<R>(&self, f: impl FnOnce(&mut MotorBus<T>) -> R) -> R {
        let mut guard = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    }
}
