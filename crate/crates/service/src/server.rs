//! HTTP command surface and server-sent telemetry.
//!
//! Routes:
//! - `GET /state`: phase, whether an open has settled, latest motor snapshot,
//!   reference current and cap.
//! - `POST /command`: `{"command": {...}, "request_id"?: n}`; 202 with the
//!   request id, 409 with the phase when the command is not allowed, 422 when
//!   a SetCurrent value is outside the bus cap.
//! - `GET /telemetry`: SSE, `sample` messages at up to 100 Hz and every
//!   `event`. A subscriber that falls behind loses its oldest frames.
//! - `GET /records`: completed harvest records.
//!
//! Every JSON body and stream message carries `schema_version`.

use std::convert::Infallible;
use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use drawstring_core::bus::MotorState;
use drawstring_core::controller::{
    Command, CommandEnvelope, CommandSource, ControllerEvent, EventKind, GraspPhase, Observer,
};
use drawstring_core::telemetry::log::encode_line;
use drawstring_core::telemetry::{HarvestRecord, LogWriter, TelemetrySample};
use futures::stream::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;
use tokio::sync::{broadcast, oneshot};

use crate::backend::{Registry, Session};
use crate::{ServiceConfig, ServiceError, SCHEMA_VERSION};

/// Messages on the telemetry stream, as JSON with a `type` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum StreamMessage {
    Sample(TelemetrySample),
    Event(ControllerEvent),
}

impl StreamMessage {
    fn name(&self) -> &'static str {
        match self {
            StreamMessage::Sample(_) => "sample",
            StreamMessage::Event(_) => "event",
        }
    }
}

const STREAM_CAPACITY: usize = 1024;
/// Minimum wall time between streamed samples (100 Hz). Events are never thinned.
const STREAM_MIN_PERIOD: Duration = Duration::from_millis(10);

#[derive(Debug, Clone)]
struct Frame {
    name: &'static str,
    json: Arc<str>,
}

#[derive(Debug, Clone, Serialize)]
struct Snapshot {
    phase: GraspPhase,
    open_settled: bool,
    time: Option<f64>,
    closer: Option<MotorState>,
    opener: Option<MotorState>,
    reference_current_ma: f64,
    current_cap_ma: f64,
    transport: &'static str,
}

struct Shared {
    snapshot: Mutex<Snapshot>,
    records: Mutex<Vec<HarvestRecord>>,
    /// Taken on stop so open streams end.
    frames: Mutex<Option<broadcast::Sender<Frame>>>,
    commands: Mutex<mpsc::Sender<CommandEnvelope>>,
    next_id: AtomicU64,
    token: Option<String>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

struct Logs {
    telemetry: LogWriter<BufWriter<File>>,
    events: LogWriter<BufWriter<File>>,
    records: LogWriter<BufWriter<File>>,
}

impl Logs {
    fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            telemetry: LogWriter::append_to(dir.join("telemetry.jsonl"))?,
            events: LogWriter::append_to(dir.join("events.jsonl"))?,
            records: LogWriter::append_to(dir.join("records.jsonl"))?,
        })
    }

    fn flush(&mut self) {
        for w in [&mut self.telemetry, &mut self.events, &mut self.records] {
            if let Err(e) = w.flush() {
                tracing::warn!("log flush: {e}");
            }
        }
    }
}

/// Observer on the control thread. Publishing never blocks on a subscriber.
struct Hub {
    shared: Arc<Shared>,
    frames: broadcast::Sender<Frame>,
    logs: Option<Logs>,
    last_streamed: Option<Instant>,
}

impl Hub {
    fn publish(&self, msg: &StreamMessage) {
        let frame = Frame {
            name: msg.name(),
            json: encode_line(msg).into(),
        };
        // No subscribers is not an error.
        let _ = self.frames.send(frame);
    }
}

impl Observer for Hub {
    fn sample(&mut self, sample: &TelemetrySample) {
        {
            let mut s = lock(&self.shared.snapshot);
            s.phase = sample.phase;
            s.time = Some(sample.time);
            s.closer = Some(sample.closer);
            s.opener = Some(sample.opener);
        }
        if let Some(logs) = &mut self.logs {
            if let Err(e) = logs.telemetry.append(sample) {
                tracing::warn!("telemetry log: {e}");
            }
        }
        let now = Instant::now();
        if self.last_streamed.is_some_and(|t| now - t < STREAM_MIN_PERIOD) {
            return;
        }
        self.last_streamed = Some(now);
        self.publish(&StreamMessage::Sample(sample.clone()));
    }

    fn event(&mut self, event: &ControllerEvent) {
        match &event.kind {
            EventKind::PhaseChanged { to, .. } => lock(&self.shared.snapshot).phase = *to,
            EventKind::CommandApplied {
                command: Command::SetCurrent(ma),
            } => lock(&self.shared.snapshot).reference_current_ma = *ma,
            EventKind::Record { record } => {
                lock(&self.shared.records).push(record.clone());
                if let Some(logs) = &mut self.logs {
                    if let Err(e) = logs.records.append(record) {
                        tracing::warn!("record log: {e}");
                    }
                    logs.flush();
                }
            }
            _ => {}
        }
        if let Some(logs) = &mut self.logs {
            if let Err(e) = logs.events.append(event) {
                tracing::warn!("event log: {e}");
            }
        }
        self.publish(&StreamMessage::Event(event.clone()));
    }
}

impl Drop for Hub {
    fn drop(&mut self) {
        if let Some(logs) = &mut self.logs {
            logs.flush();
        }
    }
}

/// Feeds envelopes posted over HTTP into the controller queue.
struct Inbox(mpsc::Receiver<CommandEnvelope>);

impl CommandSource for Inbox {
    fn poll(&mut self, _now: f64) -> Vec<CommandEnvelope> {
        self.0.try_iter().collect()
    }
}

/// Handle on a started service. Dropping it without [`stop`](Self::stop)
/// leaves the service running until the process exits.
pub struct RunningService {
    addr: SocketAddr,
    shared: Arc<Shared>,
    halt: Arc<AtomicBool>,
    control: Option<JoinHandle<()>>,
    server: Option<tokio::task::JoinHandle<()>>,
    shutdown: Option<oneshot::Sender<()>>,
}

impl RunningService {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Whether the control loop is still ticking.
    pub fn is_running(&self) -> bool {
        self.control.as_ref().is_some_and(|h| !h.is_finished())
    }

    /// Zero the goals, stop the loop and close the listener.
    pub async fn stop(mut self) {
        self.halt.store(true, Ordering::SeqCst);
        if let Some(h) = self.control.take() {
            let _ = tokio::task::spawn_blocking(move || h.join()).await;
        }
        lock(&self.shared.frames).take();
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(server) = self.server.take() {
            let _ = server.await;
        }
    }
}

/// Open the transport, start the control loop and bind the listener.
pub async fn serve(config: ServiceConfig, registry: &Registry) -> Result<RunningService, ServiceError> {
    let mut session = registry.open(&config.transport, &config.overrides)?;
    let listener = tokio::net::TcpListener::bind(config.listen)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: config.listen,
            source,
        })?;
    let addr = listener.local_addr().map_err(|source| ServiceError::Bind {
        addr: config.listen,
        source,
    })?;
    let logs = match &config.log_dir {
        Some(dir) => Some(Logs::open(dir).map_err(|e| ServiceError::File {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?),
        None => None,
    };

    let (tx, rx) = mpsc::channel();
    let (frames, _) = broadcast::channel(STREAM_CAPACITY);
    let shared = Arc::new(Shared {
        snapshot: Mutex::new(Snapshot {
            phase: session.phase(),
            open_settled: false,
            time: None,
            closer: None,
            opener: None,
            reference_current_ma: session.config().reference_current_ma,
            current_cap_ma: session.current_cap_ma(),
            transport: config.transport.kind(),
        }),
        records: Mutex::new(Vec::new()),
        frames: Mutex::new(Some(frames.clone())),
        commands: Mutex::new(tx),
        next_id: AtomicU64::new(1),
        token: config.token.clone(),
    });
    session.add_source(Box::new(Inbox(rx)));
    session.add_observer(Box::new(Hub {
        shared: shared.clone(),
        frames,
        logs,
        last_streamed: None,
    }));

    let halt = Arc::new(AtomicBool::new(false));
    let control = {
        let halt = halt.clone();
        std::thread::Builder::new()
            .name("control".into())
            .spawn({
                let shared = shared.clone();
                move || control_loop(session, &shared, &halt)
            })
            .map_err(|e| ServiceError::Transport(e.to_string()))?
    };

    let app = router(shared.clone());
    let (shutdown, stop_rx) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        let result = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stop_rx.await;
            })
            .await;
        if let Err(e) = result {
            tracing::error!("server: {e}");
        }
    });
    tracing::info!("listening on {addr} ({})", config.transport.kind());
    Ok(RunningService {
        addr,
        shared,
        halt,
        control: Some(control),
        server: Some(server),
        shutdown: Some(shutdown),
    })
}

fn control_loop(mut session: Box<dyn Session>, shared: &Shared, halt: &AtomicBool) {
    while !halt.load(Ordering::SeqCst) {
        if let Err(e) = session.tick() {
            tracing::error!("control loop stopped: {e}");
            break;
        }
        lock(&shared.snapshot).open_settled = session.open_settled();
    }
    session.shutdown();
}

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/state", get(state))
        .route("/command", post(command))
        .route("/telemetry", get(telemetry))
        .route("/records", get(records))
        .with_state(shared)
}

async fn state(State(shared): State<Arc<Shared>>) -> Response {
    let s = lock(&shared.snapshot).clone();
    Json(json!({ "schema_version": SCHEMA_VERSION, "state": s })).into_response()
}

async fn records(State(shared): State<Arc<Shared>>) -> Response {
    let records = lock(&shared.records).clone();
    Json(json!({ "schema_version": SCHEMA_VERSION, "records": records })).into_response()
}

#[derive(Debug, Deserialize)]
struct CommandRequest {
    command: Command,
    request_id: Option<u64>,
    #[serde(default)]
    issued_at: f64,
}

fn authorised(shared: &Shared, headers: &HeaderMap) -> bool {
    let Some(token) = &shared.token else { return true };
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|given| given == token)
}

fn reply(status: StatusCode, body: serde_json::Value) -> Response {
    (status, Json(body)).into_response()
}

async fn command(State(shared): State<Arc<Shared>>, headers: HeaderMap, Json(req): Json<CommandRequest>) -> Response {
    if !authorised(&shared, &headers) {
        return reply(
            StatusCode::UNAUTHORIZED,
            json!({ "schema_version": SCHEMA_VERSION, "error": "Unauthorized" }),
        );
    }
    let (phase, cap) = {
        let s = lock(&shared.snapshot);
        (s.phase, s.current_cap_ma)
    };
    if let Command::SetCurrent(ma) = req.command {
        if !(ma.is_finite() && ma > 0.0 && ma <= cap) {
            return reply(
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({
                    "schema_version": SCHEMA_VERSION,
                    "error": "CurrentOutOfRange",
                    "value": ma,
                    "current_cap_ma": cap,
                }),
            );
        }
    }
    if !req.command.allowed_in(phase) {
        return reply(
            StatusCode::CONFLICT,
            json!({
                "schema_version": SCHEMA_VERSION,
                "error": "PhaseError",
                "phase": phase,
                "command": req.command,
            }),
        );
    }
    let request_id = req
        .request_id
        .unwrap_or_else(|| shared.next_id.fetch_add(1, Ordering::Relaxed));
    let env = CommandEnvelope {
        command: req.command,
        request_id,
        issued_at: req.issued_at,
    };
    if lock(&shared.commands).send(env).is_err() {
        return reply(
            StatusCode::SERVICE_UNAVAILABLE,
            json!({ "schema_version": SCHEMA_VERSION, "error": "ControlLoopStopped" }),
        );
    }
    reply(
        StatusCode::ACCEPTED,
        json!({ "schema_version": SCHEMA_VERSION, "request_id": request_id, "phase": phase }),
    )
}

async fn telemetry(State(shared): State<Arc<Shared>>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = lock(&shared.frames).as_ref().map(|tx| tx.subscribe());
    let stream = futures::stream::iter(rx).flat_map(frame_stream).map(|frame| Ok(Event::default().event(frame.name).data(&*frame.json)));
    Sse::new(stream).keep_alive(KeepAlive::default())
}

/// Skips over lagged frames, so a slow subscriber loses the oldest ones
/// instead of stalling anyone.
fn frame_stream(rx: broadcast::Receiver<Frame>) -> impl Stream<Item = Frame> + Send {
    futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(frame) => return Some((frame, rx)),
                Err(RecvError::Lagged(n)) => tracing::debug!("subscriber lagged, dropped {n}"),
                Err(RecvError::Closed) => return None,
            }
        }
    })
}
