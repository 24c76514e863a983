use serde::{Deserialize, Serialize};

use super::crc;
use super::stuffing;
use super::ProtocolError;

pub const HEADER: [u8; 4] = [0xFF, 0xFF, 0xFD, 0x00];
pub const BROADCAST_ID: u8 = 0xFE;
pub const MAX_DEVICE_ID: u8 = 252;

/// Bytes before the length-counted region: header(4) + id(1) + length(2).
pub const PREFIX_LEN: usize = 7;

/// Largest value the length field can carry.
pub const MAX_LENGTH_FIELD: usize = u16::MAX as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    Ping,
    Read,
    Write,
    RegWrite,
    Action,
    FactoryReset,
    Reboot,
    SyncRead,
    SyncWrite,
    BulkRead,
    BulkWrite,
    Status,
}

impl Instruction {
    pub const ALL: [Instruction; 12] = [
        Instruction::Ping,
        Instruction::Read,
        Instruction::Write,
        Instruction::RegWrite,
        Instruction::Action,
        Instruction::FactoryReset,
        Instruction::Reboot,
        Instruction::SyncRead,
        Instruction::SyncWrite,
        Instruction::BulkRead,
        Instruction::BulkWrite,
        Instruction::Status,
    ];

    pub fn code(self) -> u8 {
        match self {
            Instruction::Ping => 0x01,
            Instruction::Read => 0x02,
            Instruction::Write => 0x03,
            Instruction::RegWrite => 0x04,
            Instruction::Action => 0x05,
            Instruction::FactoryReset => 0x06,
            Instruction::Reboot => 0x08,
            Instruction::Status => 0x55,
            Instruction::SyncRead => 0x82,
            Instruction::SyncWrite => 0x83,
            Instruction::BulkRead => 0x92,
            Instruction::BulkWrite => 0x93,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|i| i.code() == code)
    }
}

/// Device id validity: 0..=252 or broadcast.
pub fn valid_id(id: u8) -> bool {
    id <= MAX_DEVICE_ID || id == BROADCAST_ID
}

/// A host-to-device message, params in logical (unstuffed) form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionPacket {
    pub id: u8,
    pub instruction: Instruction,
    pub params: Vec<u8>,
}

impl InstructionPacket {
    pub fn new(id: u8, instruction: Instruction, params: Vec<u8>) -> Self {
        Self {
            id,
            instruction,
            params,
        }
    }

    pub fn ping(id: u8) -> Self {
        Self::new(id, Instruction::Ping, Vec::new())
    }

    pub fn read(id: u8, address: u16, length: u16) -> Self {
        let mut params = address.to_le_bytes().to_vec();
        params.extend_from_slice(&length.to_le_bytes());
        Self::new(id, Instruction::Read, params)
    }

    pub fn write(id: u8, address: u16, data: &[u8]) -> Self {
        let mut params = address.to_le_bytes().to_vec();
        params.extend_from_slice(data);
        Self::new(id, Instruction::Write, params)
    }

    pub fn encode(&self) -> Result<Vec<u8>, ProtocolError> {
        encode(self)
    }
}

/// A device-to-host reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusPacket {
    pub id: u8,
    pub error: u8,
    pub params: Vec<u8>,
}

impl StatusPacket {
    pub const ALERT_BIT: u8 = 0x80;

    pub fn new(id: u8, error: u8, params: Vec<u8>) -> Self {
        Self { id, error, params }
    }

    /// Low seven bits of the error byte.
    pub fn result_code(&self) -> u8 {
        self.error & 0x7F
    }

    pub fn hardware_alert(&self) -> bool {
        self.error & Self::ALERT_BIT != 0
    }

    pub fn encode(&self) -> Result<Vec<u8>, ProtocolError> {
        let mut payload = Vec::with_capacity(self.params.len() + 1);
        payload.push(self.error);
        payload.extend_from_slice(&self.params);
        encode_frame(self.id, Instruction::Status.code(), &payload)
    }
}

/// A decoded frame of either direction: instruction byte plus unstuffed
/// payload (for status frames the payload starts with the error byte).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub id: u8,
    pub instruction: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn into_status(self) -> Result<StatusPacket, ProtocolError> {
        if self.instruction != Instruction::Status.code() {
            return Err(ProtocolError::NotStatus(self.instruction));
        }
        let Some((&error, params)) = self.payload.split_first() else {
            return Err(ProtocolError::MissingErrorByte);
        };
        if error & 0x7F > 7 {
            return Err(ProtocolError::BadErrorCode(error));
        }
        Ok(StatusPacket {
            id: self.id,
            error,
            params: params.to_vec(),
        })
    }

    pub fn into_instruction(self) -> Result<InstructionPacket, ProtocolError> {
        let instruction = Instruction::from_code(self.instruction)
            .ok_or(ProtocolError::UnknownInstruction(self.instruction))?;
        Ok(InstructionPacket {
            id: self.id,
            instruction,
            params: self.payload,
        })
    }
}

pub fn encode(packet: &InstructionPacket) -> Result<Vec<u8>, ProtocolError> {
    if !valid_id(packet.id) {
        return Err(ProtocolError::InvalidId(packet.id));
    }
    encode_frame(packet.id, packet.instruction.code(), &packet.params)
}

pub(crate) fn encode_frame(id: u8, instruction: u8, payload: &[u8]) -> Result<Vec<u8>, ProtocolError> {
    let stuffed = stuffing::stuff(payload);
    let length = stuffed.len() + 3;
    if length > MAX_LENGTH_FIELD {
        return Err(ProtocolError::PacketTooLong(length));
    }
    let mut out = Vec::with_capacity(PREFIX_LEN + length);
    out.extend_from_slice(&HEADER);
    out.push(id);
    out.extend_from_slice(&(length as u16).to_le_bytes());
    out.push(instruction);
    out.extend_from_slice(&stuffed);
    let crc = crc::crc16(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}
