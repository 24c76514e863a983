use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drawstring_core::controller::{ControlError, GraspResult};
use drawstring_core::sim::{run_batch, run_scenario, BatchSpec, Scenario, ScenarioError};
use drawstring_core::telemetry::{
    compute_threshold, export_csv, load_log, load_records, margin_report, rate_table, render_svg, write_log, BurstSample,
    Field, HarvestLog, HarvestRecord,
};
use drawstring_service::{serve, Calibration, GraspOverrides, Registry, ServiceConfig, SimBackend, TransportSpec};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "drawstring", version, about = "Drawstring gripper control, simulation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulated scenario.
    Sim {
        #[arg(long)]
        scenario: PathBuf,
        /// Directory for the log, events, record and plot.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Expected outcome, replacing the scenario's own.
        #[arg(long, value_parser = parse_result)]
        expect: Option<GraspResult>,
        /// Reference current, mA. Raises the simulated bus cap if needed.
        #[arg(long)]
        current: Option<f64>,
    },
    /// Run a batch of simulated harvests and print the damage table.
    Batch {
        /// Batch file; the 56-tomato harvest when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Reference current, mA. Raises the simulated bus cap if needed.
        #[arg(long)]
        current: Option<f64>,
        /// Directory for the harvest records.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Close empty and store the empty-closure threshold.
    Calibrate {
        #[command(flatten)]
        transport: TransportArgs,
        #[arg(long)]
        current: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing calibration file.
        #[arg(long)]
        force: bool,
    },
    /// Run the HTTP service.
    Serve {
        #[command(flatten)]
        transport: TransportArgs,
        #[arg(long, env = "DRAWSTRING_LISTEN", default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Bearer token required on commands.
        #[arg(long, env = "DRAWSTRING_TOKEN", hide_env_values = true)]
        token: Option<String>,
        #[arg(long)]
        current: Option<f64>,
        /// Calibration file from `drawstring calibrate`.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Simulated seconds per wall second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Directory for telemetry, event and record logs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Damage threshold, force margins, damage rates and plots from logs.
    Analyze {
        /// Telemetry logs, one harvest each.
        logs: Vec<PathBuf>,
        /// Harvest records (JSON lines) for the rate table.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Damage threshold, N.
        #[arg(long, conflicts_with = "bursts")]
        threshold: Option<f64>,
        /// JSON array of {fruit_id, burst_force} to derive the threshold from.
        #[arg(long)]
        bursts: Option<PathBuf>,
        /// Force sensor CSV (time, force) covering the logs.
        #[arg(long)]
        sensor: Option<PathBuf>,
        /// Reference line on the current plot, mA.
        #[arg(long, default_value_t = 100.0)]
        current: f64,
        /// Directory for CSV and SVG exports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct TransportArgs {
    /// Simulated plant from a scenario file.
    #[arg(long, group = "source")]
    scenario: Option<PathBuf>,
    /// Serial device of the servo bus.
    #[arg(long, group = "source")]
    serial: Option<String>,
    #[arg(long, default_value_t = 57600)]
    baud: u32,
}

impl TransportArgs {
    fn spec(&self, speed: f64) -> TransportSpec {
        match &self.serial {
            Some(device) => TransportSpec::Serial {
                device: device.clone(),
                baud: self.baud,
            },
            None => TransportSpec::Sim {
                scenario: self.scenario.clone(),
                speed,
            },
        }
    }
}

fn parse_result(s: &str) -> Result<GraspResult, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| "one of Secured, EmptyClosure, Oversize, Timeout, Aborted".to_string())
}

/// Exit 1 for a run that completed badly, 2 for bad input.
enum Failure {
    Failed(String),
    Input(String),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } | ScenarioError::Parse(_) => Failure::Input(e.to_string()),
            _ => Failure::Failed(e.to_string()),
        }
    }
}

fn input(e: impl std::fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

fn failed(e: impl std::fmt::Display) -> Failure {
    Failure::Failed(e.to_string())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Sim {
            scenario,
            out,
            expect,
            current,
        } => sim(&scenario, out.as_deref(), expect, current),
        Cmd::Batch { scenario, current, out } => batch(scenario.as_deref(), current, out.as_deref()),
        Cmd::Calibrate {
            transport,
            current,
            out,
            force,
        } => calibrate(&transport, current, &out, force),
        Cmd::Serve {
            transport,
            listen,
            token,
            current,
            calibration,
            speed,
            out,
        } => serve_cmd(&transport, listen, token, current, calibration.as_deref(), speed, out),
        Cmd::Analyze {
            logs,
            records,
            threshold,
            bursts,
            sensor,
            current,
            out,
        } => analyze(&logs, records.as_deref(), threshold, bursts.as_deref(), sensor.as_deref(), current, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Failed(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn sim(path: &Path, out: Option<&Path>, expect: Option<GraspResult>, current: Option<f64>) -> Result<(), Failure> {
    let mut scenario = Scenario::load(path)?;
    if let Some(ma) = current {
        scenario.grasp.reference_current_ma = ma;
        scenario.bus.current_cap_ma = scenario.bus.current_cap_ma.max(ma);
    }
    let expect = expect.or(scenario.expect);
    let run = run_scenario(&scenario)?;
    let record = &run.record;

    println!("scenario  {}", run.name);
    println!("outcome   {:?}", run.result());
    if let Some(o) = &run.outcome {
        println!(
            "closer    {:.1} mA, travel {:.3} rev, {:.0} ms",
            o.steady_current_ma, o.closure_position_rev, o.elapsed_ms
        );
    }
    println!("harvested {}  damaged {}", record.harvested, record.damaged_on_harvest);
    if let Some(p) = record.peak_pull_force {
        println!("peak pull {p:.2} N");
    }
    println!(
        "power     {:.2} W electrical, {:.3} W mechanical peak",
        run.power.peak_electrical_w, run.power.peak_mechanical_w
    );
    println!("phase     {}", run.final_phase);
    if let Some(e) = &run.error {
        println!("stopped   {e}");
    }

    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| failed(format!("{}: {e}", dir.display())))?;
        write_log(dir.join("telemetry.jsonl"), &run.samples).map_err(failed)?;
        write_log(dir.join("events.jsonl"), &run.events).map_err(failed)?;
        write_log(dir.join("record.jsonl"), std::slice::from_ref(record)).map_err(failed)?;
        if !run.samples.is_empty() {
            write_file(&dir.join("telemetry.csv"), export_csv(&run.samples, &Field::ALL).map_err(failed)?)?;
            let svg = render_svg(&run.samples, scenario.grasp.reference_current_ma).map_err(failed)?;
            write_file(&dir.join("closer.svg"), svg)?;
        }
        println!("wrote     {}", dir.display());
    }

    match expect {
        Some(want) if want != run.result() => Err(failed(format!(
            "outcome mismatch\n- expected {want:?}\n+ got      {:?}",
            run.result()
        ))),
        _ => Ok(()),
    }
}

fn batch(path: Option<&Path>, current: Option<f64>, out: Option<&Path>) -> Result<(), Failure> {
    let mut spec = match path {
        Some(p) => BatchSpec::load(p)?,
        None => BatchSpec::tomato_harvest(),
    };
    if let Some(ma) = current {
        spec.grasp.reference_current_ma = ma;
        spec.bus.current_cap_ma = spec.bus.current_cap_ma.max(ma);
    }
    let report = run_batch(&spec)?;
    print!("{report}");
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| failed(format!("{}: {e}", dir.display())))?;
        let records: Vec<&HarvestRecord> = report.runs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
        write_log(dir.join("records.jsonl"), &records).map_err(failed)?;
    }
    if report.clean() {
        Ok(())
    } else {
        Err(failed(format!(
            "{} damaged, {} margin violations, {} failed runs",
            report.damaged(),
            report.violations(),
            report.failures.len()
        )))
    }
}

fn calibrate(transport: &TransportArgs, current: Option<f64>, out: &Path, force: bool) -> Result<(), Failure> {
    if out.exists() && !force {
        return Err(input(format!(
            "{}: already exists; pass --force to overwrite",
            out.display()
        )));
    }
    let overrides = GraspOverrides {
        reference_current_ma: current,
        empty_closure_position_rev: None,
    };
    let mut session = match transport.spec(0.0) {
        TransportSpec::Sim { scenario, .. } => {
            let mut s = match scenario {
                Some(p) => Scenario::load(p)?,
                None => Scenario::default(),
            };
            s.calibration.auto = false;
            let grasp = overrides.apply(s.grasp.clone());
            Box::new(SimBackend::session(s, grasp, 0.0).map_err(failed)?)
        }
        spec => Registry::default().open(&spec, &overrides).map_err(failed)?,
    };
    let rev = match session.calibrate() {
        Ok(rev) => rev,
        Err(e @ ControlError::NotSettled(_)) => return Err(failed(e)),
        Err(e) => return Err(failed(format!("calibration failed: {e}"))),
    };
    session.shutdown();
    let cal = Calibration {
        schema_version: drawstring_service::SCHEMA_VERSION,
        empty_closure_position_rev: rev,
        reference_current_ma: session.config().reference_current_ma,
        source: transport.serial.clone().unwrap_or_else(|| "sim".into()),
    };
    cal.save(out, force).map_err(input)?;
    println!("empty closure at {rev:.4} rev, wrote {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn serve_cmd(
    transport: &TransportArgs,
    listen: SocketAddr,
    token: Option<String>,
    current: Option<f64>,
    calibration: Option<&Path>,
    speed: f64,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let empty_closure_position_rev = match calibration {
        Some(p) => Some(Calibration::load(p).map_err(input)?.empty_closure_position_rev),
        None => None,
    };
    let config = ServiceConfig {
        listen,
        transport: transport.spec(speed),
        overrides: GraspOverrides {
            reference_current_ma: current,
            empty_closure_position_rev,
        },
        token: token.filter(|t| !t.is_empty()),
        log_dir: out,
    };
    let rt = tokio::runtime::Runtime::new().map_err(failed)?;
    rt.block_on(async {
        let registry = Registry::default();
        let service = serve(config, &registry).await.map_err(failed)?;
        println!("listening on http://{}", service.local_addr());
        let _ = tokio::signal::ctrl_c().await;
        tracing::info!("shutting down");
        service.stop().await;
        Ok(())
    })
}

fn analyze(
    logs: &[PathBuf],
    records: Option<&Path>,
    threshold: Option<f64>,
    bursts: Option<&Path>,
    sensor: Option<&Path>,
    current: f64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let threshold = match bursts {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
            let samples: Vec<BurstSample> =
                serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", p.display())))?;
            let study = compute_threshold(&samples).map_err(input)?;
            println!(
                "threshold {:.2} N from {} fruits (min {:.2}, max {:.2}, sd {:.2})",
                study.threshold,
                samples.len(),
                study.min,
                study.max,
                study.stddev
            );
            Some(study.threshold)
        }
        None => threshold,
    };

    let mut harvests = Vec::new();
    for p in logs {
        let samples = load_log(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
        let id = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        harvests.push(HarvestLog { id, samples });
    }

    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| failed(format!("{}: {e}", dir.display())))?;
        for h in &harvests {
            write_file(&dir.join(format!("{}.csv", h.id)), export_csv(&h.samples, &Field::ALL).map_err(input)?)?;
            write_file(&dir.join(format!("{}.svg", h.id)), render_svg(&h.samples, current).map_err(input)?)?;
        }
    }

    if let Some(p) = records {
        let recs: Vec<HarvestRecord> = load_records(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
        print!("{}", rate_table(&recs));
    }

    let mut violations = 0;
    if let Some(t) = threshold {
        if !harvests.is_empty() {
            let sensor = match sensor {
                Some(p) => {
                    let f = fs::File::open(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
                    Some(drawstring_core::telemetry::analysis::read_force_csv(f).map_err(input)?)
                }
                None => None,
            };
            let report = margin_report(&harvests, t, sensor.as_deref()).map_err(input)?;
            println!("{report}");
            violations = report.violations;
        }
    }
    if violations > 0 {
        return Err(failed(format!("{violations} harvests at or over the damage threshold")));
    }
    Ok(())
}
