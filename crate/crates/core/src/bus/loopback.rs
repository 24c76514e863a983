//! In-memory transports for exercising the bus without hardware.

use std::collections::VecDeque;
use std::time::Instant;

use super::registers::XL330_M288_MODEL;
use super::transport::{sleep_until, Transport, TransportError};
use crate::protocol::{Decoder, Instruction, InstructionPacket, StatusPacket};

/// What the far end does in answer to one write.
pub enum Reply {
    Bytes(Vec<u8>),
    Silence,
}

/// Computes a reply frame from a decoded instruction.
pub struct Responder(Box<dyn FnMut(&InstructionPacket) -> Option<Vec<u8>> + Send>);

impl Responder {
    pub fn new(f: impl FnMut(&InstructionPacket) -> Option<Vec<u8>> + Send + 'static) -> Self {
        Self(Box::new(f))
    }

    /// Answers every ping with an XL330 model number; ignores everything else.
    pub fn echo_ping() -> Self {
        Self::new(|p| {
            (p.instruction == Instruction::Ping).then(|| {
                let [lo, hi] = XL330_M288_MODEL.to_le_bytes();
                StatusPacket::new(p.id, 0, vec![lo, hi, 46]).encode().unwrap()
            })
        })
    }
}

/// Replays a fixed script of replies, one per write, then falls back to an
/// optional responder (or silence).
pub struct ScriptedTransport {
    script: VecDeque<Reply>,
    responder: Option<Responder>,
    decoder: Decoder,
    rx: VecDeque<u8>,
    written: Vec<Vec<u8>>,
    in_flight: usize,
    max_in_flight: usize,
}

impl ScriptedTransport {
    pub fn new(script: Vec<Reply>) -> Self {
        Self {
            script: script.into(),
            responder: None,
            decoder: Decoder::new(),
            rx: VecDeque::new(),
            written: Vec::new(),
            in_flight: 0,
            max_in_flight: 0,
        }
    }

    pub fn responder(responder: Responder) -> Self {
        let mut t = Self::new(Vec::new());
        t.responder = Some(responder);
        t
    }

    pub fn push(&mut self, reply: Reply) {
        self.script.push_back(reply);
    }

    /// Every frame written so far, in order.
    pub fn written(&self) -> &[Vec<u8>] {
        &self.written
    }

    /// Highest number of writes observed awaiting a reply at once.
    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}

impl Transport for ScriptedTransport {
    fn write_all(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        self.written.push(bytes.to_vec());
        let reply = match self.script.pop_front() {
            Some(Reply::Bytes(b)) => Some(b),
            Some(Reply::Silence) => None,
            None => self.responder.as_mut().and_then(|r| {
                let frames = self.decoder.push_frames(bytes);
                frames
                    .packets
                    .into_iter()
                    .filter_map(|f| f.into_instruction().ok())
                    .find_map(|p| (r.0)(&p))
            }),
        };
        if let Some(reply) = reply {
            self.in_flight += 1;
            self.max_in_flight = self.max_in_flight.max(self.in_flight);
            self.rx.extend(reply);
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
        if self.rx.is_empty() {
            self.in_flight = 0;
        }
        Ok(n)
    }

    fn flush(&mut self) -> Result<(), TransportError> {
        if !self.rx.is_empty() {
            self.rx.clear();
            self.in_flight = 0;
        }
        Ok(())
    }
}

/// Never answers.
pub struct SilentTransport;

impl Transport for SilentTransport {
    fn write_all(&mut self, _bytes: &[u8]) -> Result<(), TransportError> {
        Ok(())
    }

    fn read(&mut self, _buf: &mut [u8], deadline: Instant) -> Result<usize, TransportError> {
        sleep_until(deadline);
        Ok(0)
    }

    fn flush(&mut self) -> Result<(), TransportError> {
        Ok(())
    }
}
