//! Damage-threshold statistics, detachment-force margins and damage rates.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FruitClass, HarvestRecord, TelemetrySample};
use crate::controller::GraspPhase;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("threshold study has no samples")]
    EmptyStudy,
    #[error("harvest {0} has no Detaching samples")]
    NoDetachPhase(String),
    #[error("harvest {0} has no force data while detaching")]
    NoForceData(String),
    #[error("force sensor csv: {0}")]
    SensorCsv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstSample {
    pub fruit_id: String,
    /// N.
    pub burst_force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStudy {
    pub samples: Vec<BurstSample>,
    /// Mean burst force, N.
    pub threshold: f64,
    pub min: f64,
    pub max: f64,
    /// Sample standard deviation; zero for a single sample.
    pub stddev: f64,
}

pub fn compute_threshold(samples: &[BurstSample]) -> Result<ThresholdStudy, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::EmptyStudy);
    }
    let n = samples.len() as f64;
    let forces = samples.iter().map(|s| s.burst_force);
    let mean = forces.clone().sum::<f64>() / n;
    let min = forces.clone().fold(f64::INFINITY, f64::min);
    let max = forces.clone().fold(f64::NEG_INFINITY, f64::max);
    let stddev = if samples.len() > 1 {
        (forces.map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(ThresholdStudy {
        samples: samples.to_vec(),
        threshold: mean,
        min,
        max,
        stddev,
    })
}

/// A reading from an external force sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceReading {
    /// s, on the same clock as the telemetry.
    pub time: f64,
    /// N.
    pub force: f64,
}

/// Read `time,force` rows (with header).
pub fn read_force_csv(reader: impl Read) -> Result<Vec<ForceReading>, AnalysisError> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize()
        .map(|r| r.map_err(|e| AnalysisError::SensorCsv(e.to_string())))
        .collect()
}

/// Telemetry of one harvest.
#[derive(Debug, Clone, PartialEq)]
pub struct HarvestLog {
    pub id: String,
    pub samples: Vec<TelemetrySample>,
}

/// Largest force seen while detaching: from the sim's contact force, or
/// from the sensor readings falling inside the Detaching interval.
pub fn peak_detach_force(log: &HarvestLog, sensor: Option<&[ForceReading]>) -> Result<f64, AnalysisError> {
    let detach: Vec<&TelemetrySample> = log
        .samples
        .iter()
        .filter(|s| s.phase == GraspPhase::Detaching)
        .collect();
    let (Some(first), Some(last)) = (detach.first(), detach.last()) else {
        return Err(AnalysisError::NoDetachPhase(log.id.clone()));
    };
    let peak = match sensor {
        Some(readings) => readings
            .iter()
            .filter(|r| r.time >= first.time && r.time <= last.time)
            .map(|r| r.force)
            .reduce(f64::max),
        None => detach.iter().filter_map(|s| s.contact_force).reduce(f64::max),
    };
    peak.ok_or_else(|| AnalysisError::NoForceData(log.id.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub id: String,
    /// N.
    pub peak_force: f64,
    /// threshold - peak, N.
    pub margin: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub threshold: f64,
    pub rows: Vec<MarginRow>,
    pub violations: usize,
    pub min_margin: Option<f64>,
}

/// Margins for already-extracted peaks. A margin of zero is a violation.
pub fn margins(peaks: &[(String, f64)], threshold: f64) -> MarginReport {
    let rows: Vec<MarginRow> = peaks
        .iter()
        .map(|(id, peak)| {
            let margin = threshold - peak;
            MarginRow {
                id: id.clone(),
                peak_force: *peak,
                margin,
                violation: margin <= 0.0,
            }
        })
        .collect();
    MarginReport {
        threshold,
        violations: rows.iter().filter(|r| r.violation).count(),
        min_margin: rows.iter().map(|r| r.margin).reduce(f64::min),
        rows,
    }
}

pub fn margin_report(
    logs: &[HarvestLog],
    threshold: f64,
    sensor: Option<&[ForceReading]>,
) -> Result<MarginReport, AnalysisError> {
    let peaks = logs
        .iter()
        .map(|l| peak_detach_force(l, sensor).map(|p| (l.id.clone(), p)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(margins(&peaks, threshold))
}

impl fmt::Display for MarginReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "threshold {:.2} N", self.threshold)?;
        writeln!(f, "{:<24} {:>10} {:>10}", "harvest", "peak [N]", "margin [N]")?;
        for r in &self.rows {
            let flag = if r.violation { "  VIOLATION" } else { "" };
            writeln!(f, "{:<24} {:>10.2} {:>10.2}{flag}", r.id, r.peak_force, r.margin)?;
        }
        match self.min_margin {
            Some(m) => write!(f, "violations {}, minimum margin {m:.2} N", self.violations),
            None => write!(f, "no harvests"),
        }
    }
}

/// A percentage held as an exact count ratio, shown to one decimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Percent {
    pub count: u64,
    pub total: u64,
}

impl Percent {
    /// Tenths of a percent, rounded half to even.
    pub fn tenths(self) -> u64 {
        if self.total == 0 {
            return 0;
        }
        let scaled = self.count * 1000;
        let (q, r) = (scaled / self.total, scaled % self.total);
        match (2 * r).cmp(&self.total) {
            std::cmp::Ordering::Greater => q + 1,
            std::cmp::Ordering::Equal => q + (q % 2),
            std::cmp::Ordering::Less => q,
        }
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.tenths();
        write!(f, "{}.{}%", t / 10, t % 10)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub class: FruitClass,
    pub n: u64,
    pub damage: Percent,
    /// Among records with an inspection result.
    pub bruise: Option<Percent>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

impl RateTable {
    pub fn row(&self, class: FruitClass) -> Option<&RateRow> {
        self.rows.iter().find(|r| r.class == class)
    }

    pub fn damaged(&self) -> u64 {
        self.rows.iter().map(|r| r.damage.count).sum()
    }
}

pub fn rate_table(records: &[HarvestRecord]) -> RateTable {
    let mut by_class: BTreeMap<FruitClass, (u64, u64, u64, u64)> = BTreeMap::new();
    for r in records {
        let e = by_class.entry(r.fruit_class).or_default();
        e.0 += 1;
        e.1 += r.damaged_on_harvest as u64;
        if let Some(b) = r.bruised_day5 {
            e.2 += 1;
            e.3 += b as u64;
        }
    }
    RateTable {
        rows: by_class
            .into_iter()
            .map(|(class, (n, damaged, inspected, bruised))| RateRow {
                class,
                n,
                damage: Percent { count: damaged, total: n },
                bruise: (inspected > 0).then_some(Percent {
                    count: bruised,
                    total: inspected,
                }),
            })
            .collect(),
    }
}

impl fmt::Display for RateTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>4} {:>22} {:>26}", "class", "n", "damage (on harvest)", "bruise (5 days after)")?;
        for r in &self.rows {
            let bruise = r.bruise.map_or("n/a".to_string(), |p| p.to_string());
            writeln!(f, "{:<8} {:>4} {:>22} {:>26}", r.class.name(), r.n, r.damage.to_string(), bruise)?;
        }
        Ok(())
    }
}
