#![allow(dead_code)]

use std::path::PathBuf;
use std::time::Duration;

use drawstring_core::controller::{ControllerEvent, EventKind, GraspPhase};
use drawstring_service::{serve, GraspOverrides, Registry, RunningService, ServiceConfig, StreamMessage, TransportSpec};
use futures::StreamExt;
use serde_json::{json, Value};

pub fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub struct Opts {
    pub scenario: &'static str,
    pub speed: f64,
    pub token: Option<String>,
    pub log_dir: Option<PathBuf>,
}

impl Default for Opts {
    fn default() -> Self {
        Self {
            scenario: "medium.toml",
            speed: 10.0,
            token: None,
            log_dir: None,
        }
    }
}

pub async fn start(opts: Opts) -> RunningService {
    let config = ServiceConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        transport: TransportSpec::Sim {
            scenario: Some(scenario(opts.scenario)),
            speed: opts.speed,
        },
        overrides: GraspOverrides::default(),
        token: opts.token,
        log_dir: opts.log_dir,
    };
    serve(config, &Registry::default()).await.expect("service starts")
}

pub fn url(svc: &RunningService, path: &str) -> String {
    format!("http://{}{path}", svc.local_addr())
}

pub async fn post(svc: &RunningService, command: Value) -> (u16, Value) {
    post_with(svc, json!({ "command": command }), None).await
}

pub async fn post_with(svc: &RunningService, body: Value, token: Option<&str>) -> (u16, Value) {
    let mut req = reqwest::Client::new().post(url(svc, "/command")).json(&body);
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp = req.send().await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap())
}

pub async fn get(svc: &RunningService, path: &str) -> Value {
    reqwest::get(url(svc, path)).await.unwrap().json().await.unwrap()
}

/// One server-sent event.
#[derive(Debug, Clone, PartialEq)]
pub struct Sse {
    pub name: String,
    pub data: String,
}

impl Sse {
    pub fn message(&self) -> StreamMessage {
        serde_json::from_str(&self.data).unwrap_or_else(|e| panic!("{e}: {}", self.data))
    }

    pub fn event(&self) -> Option<ControllerEvent> {
        match self.message() {
            StreamMessage::Event(e) => Some(e),
            StreamMessage::Sample(_) => None,
        }
    }
}

/// Reads `/telemetry` on a background task; frames arrive on the channel.
pub async fn subscribe(svc: &RunningService) -> tokio::sync::mpsc::UnboundedReceiver<Sse> {
    let resp = reqwest::get(url(svc, "/telemetry")).await.unwrap();
    assert_eq!(resp.status(), 200);
    let (tx, rx) = tokio::sync::mpsc::unbounded_channel();
    tokio::spawn(async move {
        let mut body = resp.bytes_stream();
        let mut buf = String::new();
        while let Some(Ok(chunk)) = body.next().await {
            buf.push_str(&String::from_utf8_lossy(&chunk));
            while let Some(end) = buf.find("\n\n") {
                let block: String = buf.drain(..end + 2).collect();
                let mut sse = Sse {
                    name: "message".into(),
                    data: String::new(),
                };
                for line in block.lines() {
                    if let Some(v) = line.strip_prefix("event:") {
                        sse.name = v.trim().into();
                    } else if let Some(v) = line.strip_prefix("data:") {
                        sse.data.push_str(v.strip_prefix(' ').unwrap_or(v));
                    }
                }
                if !sse.data.is_empty() && tx.send(sse).is_err() {
                    return;
                }
            }
        }
    });
    rx
}

pub async fn next(rx: &mut tokio::sync::mpsc::UnboundedReceiver<Sse>) -> Sse {
    tokio::time::timeout(Duration::from_secs(20), rx.recv())
        .await
        .expect("stream stalled")
        .expect("stream closed")
}

/// Frames until the phase reaches `to`, inclusive.
pub async fn until_phase(rx: &mut tokio::sync::mpsc::UnboundedReceiver<Sse>, to: GraspPhase) -> Vec<Sse> {
    let mut seen = Vec::new();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(30);
    loop {
        assert!(tokio::time::Instant::now() < deadline, "no transition to {to}");
        let f = next(rx).await;
        let done = matches!(f.event(), Some(ControllerEvent { kind: EventKind::PhaseChanged { to: t, .. }, .. }) if t == to);
        seen.push(f);
        if done {
            return seen;
        }
    }
}

/// Polls `/state` until the pockets have finished opening.
pub async fn wait_open_settled(svc: &RunningService) {
    let deadline = tokio::time::Instant::now() + Duration::from_secs(30);
    while get(svc, "/state").await["state"]["open_settled"] != true {
        assert!(tokio::time::Instant::now() < deadline, "open never settled");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}
