//! Control table of the XL330-M288T (subset used by this stack).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Access {
    ReadOnly,
    ReadWrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegisterSpec {
    pub name: &'static str,
    pub address: u16,
    pub width: u8,
    pub access: Access,
    pub signed: bool,
}

impl RegisterSpec {
    pub fn end(&self) -> u16 {
        self.address + self.width as u16
    }

    pub fn contains(&self, address: u16) -> bool {
        (self.address..self.end()).contains(&address)
    }

    /// Legal raw range for writes.
    pub fn range(&self) -> (i64, i64) {
        let bits = self.width as u32 * 8;
        if self.signed {
            (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
        } else {
            (0, (1i64 << bits) - 1)
        }
    }

    pub fn encode(&self, value: i64) -> Vec<u8> {
        value.to_le_bytes()[..self.width as usize].to_vec()
    }

    pub fn decode(&self, bytes: &[u8]) -> i64 {
        let mut buf = [0u8; 8];
        buf[..self.width as usize].copy_from_slice(&bytes[..self.width as usize]);
        let raw = i64::from_le_bytes(buf);
        if self.signed {
            let shift = 64 - self.width as u32 * 8;
            (raw << shift) >> shift
        } else {
            raw
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Register {
    ModelNumber,
    FirmwareVersion,
    Id,
    BaudRate,
    ReturnDelayTime,
    DriveMode,
    OperatingMode,
    CurrentLimit,
    TorqueEnable,
    Led,
    StatusReturnLevel,
    HardwareErrorStatus,
    GoalCurrent,
    GoalPosition,
    Moving,
    PresentCurrent,
    PresentVelocity,
    PresentPosition,
    PresentInputVoltage,
    PresentTemperature,
}

const fn reg(name: &'static str, address: u16, width: u8, access: Access, signed: bool) -> RegisterSpec {
    RegisterSpec {
        name,
        address,
        width,
        access,
        signed,
    }
}

use Access::{ReadOnly as RO, ReadWrite as RW};

impl Register {
    pub const ALL: [Register; 20] = [
        Register::ModelNumber,
        Register::FirmwareVersion,
        Register::Id,
        Register::BaudRate,
        Register::ReturnDelayTime,
        Register::DriveMode,
        Register::OperatingMode,
        Register::CurrentLimit,
        Register::TorqueEnable,
        Register::Led,
        Register::StatusReturnLevel,
        Register::HardwareErrorStatus,
        Register::GoalCurrent,
        Register::GoalPosition,
        Register::Moving,
        Register::PresentCurrent,
        Register::PresentVelocity,
        Register::PresentPosition,
        Register::PresentInputVoltage,
        Register::PresentTemperature,
    ];

    pub const fn spec(self) -> RegisterSpec {
        match self {
            Register::ModelNumber => reg("ModelNumber", 0, 2, RO, false),
            Register::FirmwareVersion => reg("FirmwareVersion", 6, 1, RO, false),
            Register::Id => reg("Id", 7, 1, RW, false),
            Register::BaudRate => reg("BaudRate", 8, 1, RW, false),
            Register::ReturnDelayTime => reg("ReturnDelayTime", 9, 1, RW, false),
            Register::DriveMode => reg("DriveMode", 10, 1, RW, false),
            Register::OperatingMode => reg("OperatingMode", 11, 1, RW, false),
            Register::CurrentLimit => reg("CurrentLimit", 38, 2, RW, false),
            Register::TorqueEnable => reg("TorqueEnable", 64, 1, RW, false),
            Register::Led => reg("Led", 65, 1, RW, false),
            Register::StatusReturnLevel => reg("StatusReturnLevel", 68, 1, RW, false),
            Register::HardwareErrorStatus => reg("HardwareErrorStatus", 70, 1, RO, false),
            Register::GoalCurrent => reg("GoalCurrent", 102, 2, RW, true),
            Register::GoalPosition => reg("GoalPosition", 116, 4, RW, true),
            Register::Moving => reg("Moving", 122, 1, RO, false),
            Register::PresentCurrent => reg("PresentCurrent", 126, 2, RO, true),
            Register::PresentVelocity => reg("PresentVelocity", 128, 4, RO, true),
            Register::PresentPosition => reg("PresentPosition", 132, 4, RO, true),
            Register::PresentInputVoltage => reg("PresentInputVoltage", 144, 2, RO, false),
            Register::PresentTemperature => reg("PresentTemperature", 146, 1, RO, false),
        }
    }

    /// The register covering `address`, if any.
    pub fn at(address: u16) -> Option<Register> {
        Self::ALL.iter().copied().find(|r| r.spec().contains(address))
    }

    /// Registers below this address live in EEPROM and are locked while
    /// torque is enabled.
    pub const EEPROM_END: u16 = 64;
}

/// Start address and length of the single read covering current, velocity
/// and position.
pub const PRESENT_BLOCK: (u16, u16) = (126, 10);

/// XL330-M288 model number reported by Ping.
pub const XL330_M288_MODEL: u16 = 1200;

/// Factory default current limit in raw units.
pub const XL330_CURRENT_LIMIT: i64 = 1750;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatingMode {
    CurrentControl,
    PositionControl,
    CurrentBasedPosition,
}

impl OperatingMode {
    pub fn raw(self) -> u8 {
        match self {
            OperatingMode::CurrentControl => 0,
            OperatingMode::PositionControl => 3,
            OperatingMode::CurrentBasedPosition => 5,
        }
    }

    pub fn from_raw(raw: u8) -> Option<Self> {
        match raw {
            0 => Some(OperatingMode::CurrentControl),
            3 => Some(OperatingMode::PositionControl),
            5 => Some(OperatingMode::CurrentBasedPosition),
            _ => None,
        }
    }
}

/// Baud rate register encoding. Rates above 1 Mbit/s are not offered.
pub fn baud_code(baud: u32) -> Option<u8> {
    match baud {
        9_600 => Some(0),
        57_600 => Some(1),
        115_200 => Some(2),
        1_000_000 => Some(3),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn addresses_unique_and_non_overlapping() {
        for (i, a) in Register::ALL.iter().enumerate() {
            let sa = a.spec();
            assert!(matches!(sa.width, 1 | 2 | 4));
            for b in &Register::ALL[i + 1..] {
                let sb = b.spec();
                assert!(sa.end() <= sb.address || sb.end() <= sa.address, "{} overlaps {}", sa.name, sb.name);
            }
        }
    }

    #[test]
    fn required_addresses() {
        assert_eq!(Register::OperatingMode.spec().address, 11);
        assert_eq!(Register::TorqueEnable.spec().address, 64);
        assert_eq!(Register::GoalCurrent.spec().address, 102);
        assert_eq!(Register::GoalPosition.spec().address, 116);
        assert_eq!(Register::PresentCurrent.spec().address, 126);
        assert_eq!(Register::PresentVelocity.spec().address, 128);
        assert_eq!(Register::PresentPosition.spec().address, 132);
    }

    #[test]
    fn present_block_covers_state_registers() {
        let (start, len) = PRESENT_BLOCK;
        assert_eq!(start, Register::PresentCurrent.spec().address);
        assert_eq!(start + len, Register::PresentPosition.spec().end());
    }

    #[test]
    fn signed_decode() {
        let spec = Register::PresentCurrent.spec();
        assert_eq!(spec.decode(&[0x9C, 0xFF]), -100);
        assert_eq!(spec.encode(-100), vec![0x9C, 0xFF]);
        let pos = Register::PresentPosition.spec();
        assert_eq!(pos.decode(&(-5000i32).to_le_bytes()), -5000);
    }

    #[test]
    fn lookup_by_address() {
        assert_eq!(Register::at(130), Some(Register::PresentVelocity));
        assert_eq!(Register::at(12), None);
    }
}
