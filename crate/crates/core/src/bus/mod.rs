//! Motor HAL: byte transports, the XL330 control table, unit conversions and
//! command/response transactions.

pub mod loopback;
mod motor;
pub mod registers;
mod transport;
pub mod units;

pub use motor::{
    BusConfig, BusError, BusStats, MotorBus, MotorRole, MotorState, RawMotorState, RoleMap, SharedBus,
};
pub use registers::{Access, OperatingMode, Register, RegisterSpec};
pub use transport::{sleep_until, Transport, TransportError};
