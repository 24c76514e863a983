use std::io::{ErrorKind, Read, Write};
use std::time::{Duration, Instant};

use drawstring_core::bus::{Transport, TransportError};
use serialport::{ClearBuffer, SerialPort};

use crate::ServiceError;

/// A USB-serial adapter talking to the servo bus.
pub struct SerialTransport {
    port: Box<dyn SerialPort>,
}

impl SerialTransport {
    pub fn open(device: &str, baud: u32) -> Result<Self, ServiceError> {
        let port = serialport::new(device, baud)
            .timeout(Duration::from_millis(5))
            .open()
            .map_err(|e| ServiceError::Transport(format!("{device}: {e}")))?;
        Ok(Self { port })
    }
}

impl Transport for SerialTransport {
    fn write_all(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        self.port.write_all(bytes)?;
        self.port.flush()?;
        Ok(())
    }

    fn read(&mut self, buf: &mut [u8], deadline: Instant) -> Result<usize, TransportError> {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Ok(0);
        }
        self.port
            .set_timeout(left)
            .map_err(|e| TransportError::Io(e.to_string()))?;
        match self.port.read(buf) {
            Ok(n) => Ok(n),
            Err(e) if e.kind() == ErrorKind::TimedOut => Ok(0),
            Err(e) => Err(e.into()),
        }
    }

    fn flush(&mut self) -> Result<(), TransportError> {
        self.port
            .clear(ClearBuffer::Input)
            .map_err(|e| TransportError::Io(e.to_string()))
    }
}
