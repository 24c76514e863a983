//! Protocol 2.0 framing: header `FF FF FD 00`, id, little-endian length,
//! instruction, stuffed parameters, CRC-16 (poly 0x8005, init 0).

pub mod crc;
mod decoder;
mod packet;
pub mod stuffing;

pub use crc::crc16;
pub use decoder::{DecodeError, Decoded, Decoder, Sync, DEFAULT_BUFFER_CAP};
pub use packet::{
    encode, valid_id, Frame, Instruction, InstructionPacket, StatusPacket, BROADCAST_ID, HEADER,
    MAX_DEVICE_ID, MAX_LENGTH_FIELD,
};
pub use stuffing::{stuff, unstuff};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("packet too long: length field would be {0}")]
    PacketTooLong(usize),
    #[error("invalid device id {0}")]
    InvalidId(u8),
    #[error("frame instruction {0:#04x} is not a status reply")]
    NotStatus(u8),
    #[error("status frame has no error byte")]
    MissingErrorByte,
    #[error("status error byte {0:#04x} carries an unknown result code")]
    BadErrorCode(u8),
    #[error("unknown instruction code {0:#04x}")]
    UnknownInstruction(u8),
}
