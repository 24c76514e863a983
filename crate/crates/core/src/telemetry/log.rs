//! Line-delimited JSON logs. Every line carries `schema_version`.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TelemetrySample;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log i/o: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema_version {found} is not supported (expected {SCHEMA_VERSION})")]
    SchemaMismatch { line: usize, found: u32 },
    #[error("line {line}: time {found} does not follow {previous}")]
    NonMonotoneTime { line: usize, previous: f64, found: f64 },
}

#[derive(Serialize)]
struct OutLine<'a, T> {
    schema_version: u32,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Deserialize)]
struct Version {
    schema_version: Option<u32>,
}

/// One JSON object, no trailing newline.
pub fn encode_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(&OutLine {
        schema_version: SCHEMA_VERSION,
        body: value,
    })
    .expect("telemetry types always serialise")
}

pub fn decode_line<T: DeserializeOwned>(line_no: usize, text: &str) -> Result<T, LogError> {
    let parse = |e: serde_json::Error| LogError::Parse {
        line: line_no,
        message: e.to_string(),
    };
    let v: Version = serde_json::from_str(text).map_err(parse)?;
    match v.schema_version {
        Some(SCHEMA_VERSION) => {}
        Some(found) => return Err(LogError::SchemaMismatch { line: line_no, found }),
        None => {
            return Err(LogError::Parse {
                line: line_no,
                message: "missing schema_version".into(),
            })
        }
    }
    serde_json::from_str(text).map_err(parse)
}

/// Appends lines to a log file; single writer per file.
pub struct LogWriter<W: Write> {
    out: W,
}

impl LogWriter<BufWriter<File>> {
    pub fn append_to(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::new(BufWriter::new(file)))
    }
}

impl<W: Write> LogWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn append<T: Serialize>(&mut self, value: &T) -> io::Result<()> {
        self.out.write_all(encode_line(value).as_bytes())?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// The whole log as bytes, as it would be written to disk.
pub fn log_bytes<T: Serialize>(values: &[T]) -> Vec<u8> {
    let mut w = LogWriter::new(Vec::new());
    for v in values {
        w.append(v).expect("writing to a Vec cannot fail");
    }
    w.into_inner()
}

pub fn write_log<T: Serialize>(path: impl AsRef<Path>, values: &[T]) -> io::Result<()> {
    std::fs::write(path, log_bytes(values))
}

/// Parse every non-blank line.
pub fn read_lines<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, LogError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(decode_line(i + 1, &line)?);
    }
    Ok(out)
}

/// Samples from `reader`, checking that time strictly increases.
pub fn read_samples(reader: impl BufRead) -> Result<Vec<TelemetrySample>, LogError> {
    let mut out: Vec<TelemetrySample> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: TelemetrySample = decode_line(i + 1, &line)?;
        if let Some(prev) = out.last() {
            if !(sample.time > prev.time) {
                return Err(LogError::NonMonotoneTime {
                    line: i + 1,
                    previous: prev.time,
                    found: sample.time,
                });
            }
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn load_log(path: impl AsRef<Path>) -> Result<Vec<TelemetrySample>, LogError> {
    read_samples(BufReader::new(File::open(path)?))
}

pub fn load_records<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, LogError> {
    read_lines(BufReader::new(File::open(path)?))
}
