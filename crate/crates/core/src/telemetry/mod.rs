//! Telemetry records, line-delimited logs and the damage analyses.

pub mod analysis;
pub mod log;
pub mod plot;
mod sample;

pub use analysis::{
    compute_threshold, margin_report, margins, rate_table, AnalysisError, BurstSample, ForceReading, HarvestLog,
    MarginReport, MarginRow, Percent, RateRow, RateTable, ThresholdStudy,
};
pub use log::{load_log, load_records, log_bytes, read_samples, write_log, LogError, LogWriter, SCHEMA_VERSION};
pub use plot::{export_csv, import_csv, render_svg, Field, PlotError};
pub use sample::{FruitClass, FruitTag, HarvestRecord, TelemetrySample};
