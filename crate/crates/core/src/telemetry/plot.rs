//! Series export: CSV of chosen fields and a two-panel SVG (current above,
//! velocity below) with the reference current drawn across the top panel.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use super::TelemetrySample;

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("log is empty")]
    EmptyLog,
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Time,
    CloserCurrent,
    CloserVelocity,
    CloserPosition,
    OpenerCurrent,
    OpenerVelocity,
    OpenerPosition,
    ContactForce,
    PullForce,
}

impl Field {
    pub const ALL: [Field; 9] = [
        Field::Time,
        Field::CloserCurrent,
        Field::CloserVelocity,
        Field::CloserPosition,
        Field::OpenerCurrent,
        Field::OpenerVelocity,
        Field::OpenerPosition,
        Field::ContactForce,
        Field::PullForce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Time => "time",
            Field::CloserCurrent => "closer.current",
            Field::CloserVelocity => "closer.velocity",
            Field::CloserPosition => "closer.position",
            Field::OpenerCurrent => "opener.current",
            Field::OpenerVelocity => "opener.velocity",
            Field::OpenerPosition => "opener.position",
            Field::ContactForce => "contact_force",
            Field::PullForce => "pull_force",
        }
    }

    pub fn get(self, s: &TelemetrySample) -> Option<f64> {
        match self {
            Field::Time => Some(s.time),
            Field::CloserCurrent => Some(s.closer.current_ma),
            Field::CloserVelocity => Some(s.closer.velocity_rpm),
            Field::CloserPosition => Some(s.closer.position_rev),
            Field::OpenerCurrent => Some(s.opener.current_ma),
            Field::OpenerVelocity => Some(s.opener.velocity_rpm),
            Field::OpenerPosition => Some(s.opener.position_rev),
            Field::ContactForce => s.contact_force,
            Field::PullForce => s.pull_force,
        }
    }
}

impl FromStr for Field {
    type Err = PlotError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Field::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| PlotError::UnknownField(s.to_string()))
    }
}

pub fn parse_fields(names: &[&str]) -> Result<Vec<Field>, PlotError> {
    names.iter().map(|n| n.parse()).collect()
}

/// Header row of field names, then one row per sample. Missing values are
/// left empty. Numbers are written in shortest round-trip form.
pub fn export_csv(samples: &[TelemetrySample], fields: &[Field]) -> Result<String, PlotError> {
    if samples.is_empty() {
        return Err(PlotError::EmptyLog);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| PlotError::Csv(e.to_string());
    w.write_record(fields.iter().map(|f| f.name())).map_err(csv_err)?;
    for s in samples {
        w.write_record(fields.iter().map(|f| f.get(s).map_or(String::new(), |v| v.to_string())))
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| PlotError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| PlotError::Csv(e.to_string()))
}

/// Columns back out of an exported CSV.
pub fn import_csv(text: &str) -> Result<(Vec<Field>, Vec<Vec<Option<f64>>>), PlotError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let csv_err = |e: csv::Error| PlotError::Csv(e.to_string());
    let fields = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.parse())
        .collect::<Result<Vec<Field>, _>>()?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|e| PlotError::Csv(e.to_string()))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok((fields, rows))
}

const WIDTH: f64 = 720.0;
const PANEL_H: f64 = 220.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const GAP: f64 = 50.0;

struct Panel {
    y0: f64,
    lo: f64,
    hi: f64,
}

impl Panel {
    fn new(y0: f64, values: impl Iterator<Item = f64>, include: &[f64]) -> Self {
        let (mut lo, mut hi) = values
            .chain(include.iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        if hi - lo < 1e-9 {
            lo -= 1.0;
            hi += 1.0;
        }
        let pad = 0.05 * (hi - lo);
        Self {
            y0,
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn y(&self, v: f64) -> f64 {
        self.y0 + PANEL_H * (1.0 - (v - self.lo) / (self.hi - self.lo))
    }
}

/// Closer current (top, with `reference_ma` line) and closer velocity
/// (bottom) against time.
pub fn render_svg(samples: &[TelemetrySample], reference_ma: f64) -> Result<String, PlotError> {
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Err(PlotError::EmptyLog);
    };
    let (t0, t1) = (first.time, last.time.max(first.time + 1e-9));
    let x = |t: f64| LEFT + (WIDTH - LEFT - RIGHT) * (t - t0) / (t1 - t0);
    let current = Panel::new(TOP, samples.iter().map(|s| s.closer.current_ma), &[0.0, reference_ma]);
    let velocity = Panel::new(TOP + PANEL_H + GAP, samples.iter().map(|s| s.closer.velocity_rpm), &[0.0]);
    let height = TOP + 2.0 * PANEL_H + GAP + 40.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (panel, label, get) in [
        (&current, "current [mA]", (|s: &TelemetrySample| s.closer.current_ma) as fn(&TelemetrySample) -> f64),
        (&velocity, "velocity [rev/min]", |s: &TelemetrySample| s.closer.velocity_rpm),
    ] {
        let _ = writeln!(
            svg,
            r#"<rect x="{LEFT}" y="{}" width="{}" height="{PANEL_H}" fill="none" stroke="black"/>"#,
            panel.y0,
            WIDTH - LEFT - RIGHT
        );
        let _ = writeln!(
            svg,
            r#"<text x="10" y="{:.1}" transform="rotate(-90 10 {:.1})" text-anchor="middle">{label}</text>"#,
            panel.y0 + PANEL_H / 2.0,
            panel.y0 + PANEL_H / 2.0
        );
        for v in [panel.lo, (panel.lo + panel.hi) / 2.0, panel.hi] {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
                LEFT - 4.0,
                panel.y(v) + 4.0
            );
        }
        let points: Vec<String> = samples
            .iter()
            .map(|s| format!("{:.2},{:.2}", x(s.time), panel.y(get(s))))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
    }
    let ry = current.y(reference_ma);
    let _ = writeln!(
        svg,
        r#"<line id="reference" x1="{LEFT}" y1="{ry:.2}" x2="{}" y2="{ry:.2}" stroke="crimson" stroke-dasharray="6 4"/>"#,
        WIDTH - RIGHT
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{:.2}" text-anchor="end" fill="crimson">reference {reference_ma} mA</text>"#,
        WIDTH - RIGHT - 4.0,
        ry - 4.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">time [s]</text>"#,
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        height - 10.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}
