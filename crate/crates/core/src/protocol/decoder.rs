//! Incremental frame decoder with resynchronisation.

use super::crc;
use super::packet::{Frame, StatusPacket, BROADCAST_ID, HEADER, PREFIX_LEN};
use super::stuffing;
use super::ProtocolError;

pub const DEFAULT_BUFFER_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("crc mismatch: frame carries {received:#06x}, computed {computed:#06x}")]
    CrcMismatch { received: u16, computed: u16 },
    #[error("bad header: skipped {skipped} byte(s) of noise or malformed framing")]
    BadHeader { skipped: usize },
    #[error("truncated: declared frame of {declared} bytes cannot be buffered")]
    Truncated { declared: usize },
    #[error("status frame carries the broadcast id")]
    BroadcastStatus,
    #[error("malformed frame: {0}")]
    Malformed(#[from] ProtocolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sync {
    Searching,
    InPacket,
}

/// Pending bytes plus sync state. One decoder per byte stream.
#[derive(Debug, Clone)]
pub struct Decoder {
    buffer: Vec<u8>,
    sync: Sync,
    cap: usize,
    skipped: usize,
}

impl Default for Decoder {
    fn default() -> Self {
        Self::with_cap(DEFAULT_BUFFER_CAP)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded<T> {
    pub packets: Vec<T>,
    pub errors: Vec<DecodeError>,
}

impl<T> Default for Decoded<T> {
    fn default() -> Self {
        Self {
            packets: Vec::new(),
            errors: Vec::new(),
        }
    }
}

impl Decoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_cap(cap: usize) -> Self {
        assert!(cap > PREFIX_LEN + 3, "decoder cap too small to hold any frame");
        Self {
            buffer: Vec::new(),
            sync: Sync::Searching,
            cap,
            skipped: 0,
        }
    }

    pub fn sync(&self) -> Sync {
        self.sync
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
        self.sync = Sync::Searching;
        self.skipped = 0;
    }

    /// Feed bytes and return every status packet completed by them.
    pub fn decode_step(&mut self, chunk: &[u8]) -> Decoded<StatusPacket> {
        let frames = self.push_frames(chunk);
        let mut out = Decoded {
            packets: Vec::with_capacity(frames.packets.len()),
            errors: frames.errors,
        };
        for frame in frames.packets {
            if frame.id == BROADCAST_ID {
                out.errors.push(DecodeError::BroadcastStatus);
                continue;
            }
            match frame.into_status() {
                Ok(p) => out.packets.push(p),
                Err(e) => out.errors.push(e.into()),
            }
        }
        out
    }

    /// Feed bytes and return every CRC-valid frame, regardless of direction.
    pub fn push_frames(&mut self, chunk: &[u8]) -> Decoded<Frame> {
        let mut out = Decoded::default();
        let mut rest = chunk;
        while !rest.is_empty() {
            let room = self.cap - self.buffer.len();
            let take = room.min(rest.len());
            self.buffer.extend_from_slice(&rest[..take]);
            rest = &rest[take..];
            self.drain(&mut out);
        }
        out
    }

    fn drain(&mut self, out: &mut Decoded<Frame>) {
        loop {
            match self.sync {
                Sync::Searching => {
                    if !self.find_header(out) {
                        return;
                    }
                }
                Sync::InPacket => {
                    if self.buffer.len() < PREFIX_LEN {
                        return;
                    }
                    let length = u16::from_le_bytes([self.buffer[5], self.buffer[6]]) as usize;
                    let total = PREFIX_LEN + length;
                    if length < 3 {
                        out.errors.push(DecodeError::BadHeader { skipped: 1 });
                        self.discard_header_byte();
                        continue;
                    }
                    if total > self.cap {
                        out.errors.push(DecodeError::Truncated { declared: total });
                        self.discard_header_byte();
                        continue;
                    }
                    if self.buffer.len() < total {
                        return;
                    }
                    let received = u16::from_le_bytes([self.buffer[total - 2], self.buffer[total - 1]]);
                    let computed = crc::crc16(&self.buffer[..total - 2]);
                    if received != computed {
                        out.errors.push(DecodeError::CrcMismatch { received, computed });
                        self.discard_header_byte();
                        continue;
                    }
                    let frame = Frame {
                        id: self.buffer[4],
                        instruction: self.buffer[7],
                        payload: stuffing::unstuff(&self.buffer[PREFIX_LEN + 1..total - 2]),
                    };
                    self.buffer.drain(..total);
                    self.sync = Sync::Searching;
                    out.packets.push(frame);
                }
            }
        }
    }

    /// Align the buffer on the next header. Returns false when more input is
    /// needed.
    fn find_header(&mut self, out: &mut Decoded<Frame>) -> bool {
        if let Some(pos) = self.buffer.windows(HEADER.len()).position(|w| w == HEADER) {
            self.skipped += pos;
            self.buffer.drain(..pos);
            if self.skipped > 0 {
                out.errors.push(DecodeError::BadHeader { skipped: self.skipped });
                self.skipped = 0;
            }
            self.sync = Sync::InPacket;
            return true;
        }
        // Keep only a tail that could still grow into a header.
        let keep = (1..HEADER.len())
            .rev()
            .find(|&n| n <= self.buffer.len() && self.buffer[self.buffer.len() - n..] == HEADER[..n])
            .unwrap_or(0);
        let drop = self.buffer.len() - keep;
        self.skipped += drop;
        self.buffer.drain(..drop);
        false
    }

    fn discard_header_byte(&mut self) {
        self.buffer.drain(..1);
        self.sync = Sync::Searching;
    }
}
