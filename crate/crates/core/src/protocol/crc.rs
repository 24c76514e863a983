//! CRC-16/BUYPASS as used by protocol 2.0 frames.
//!
//! Polynomial 0x8005, init 0x0000, MSB first, no reflection, no final XOR.

use std::sync::OnceLock;

pub const POLYNOMIAL: u16 = 0x8005;

static TABLE: OnceLock<[u16; 256]> = OnceLock::new();

fn build_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    for (i, slot) in table.iter_mut().enumerate() {
        let mut crc = (i as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ POLYNOMIAL
            } else {
                crc << 1
            };
        }
        *slot = crc;
    }
    table
}

fn table() -> &'static [u16; 256] {
    TABLE.get_or_init(build_table)
}

/// Table-driven CRC over `data`.
pub fn crc16(data: &[u8]) -> u16 {
    update(0, data)
}

/// Continue a running CRC with more bytes.
pub fn update(crc: u16, data: &[u8]) -> u16 {
    let table = table();
    data.iter().fold(crc, |crc, &byte| {
        let idx = ((crc >> 8) as u8 ^ byte) as usize;
        (crc << 8) ^ table[idx]
    })
}
