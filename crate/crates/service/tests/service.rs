mod common;

use std::collections::BTreeSet;
use std::time::Duration;

use common::*;
use drawstring_core::controller::{ControllerEvent, EventKind, GraspPhase};
use drawstring_core::telemetry::{load_log, load_records, HarvestRecord, TelemetrySample};
use drawstring_service::{serve, GraspOverrides, Registry, ServiceConfig, ServiceError, StreamMessage, TransportSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[tokio::test(flavor = "multi_thread")]
async fn state_reports_phase_and_motors() {
    let svc = start(Opts::default()).await;
    tokio::time::sleep(Duration::from_millis(100)).await;
    let s = get(&svc, "/state").await;
    assert_eq!(s["schema_version"], 1);
    assert_eq!(s["state"]["phase"], "Idle");
    assert_eq!(s["state"]["transport"], "sim");
    assert_eq!(s["state"]["current_cap_ma"], 150.0);
    assert!(s["state"]["closer"]["current_ma"].is_number(), "{s}");
    svc.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn grasp_from_idle_is_a_phase_error() {
    let svc = start(Opts::default()).await;
    let (status, body) = post(&svc, json!({ "kind": "Grasp" })).await;
    assert_eq!(status, 409);
    assert_eq!(body["error"], "PhaseError");
    assert_eq!(body["phase"], "Idle");
    svc.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn grasp_from_open_is_accepted_and_streams_enclosing() {
    let svc = start(Opts::default()).await;
    let mut rx = subscribe(&svc).await;
    let (status, body) = post(&svc, json!({ "kind": "Open" })).await;
    assert_eq!(status, 202, "{body}");
    until_phase(&mut rx, GraspPhase::Open).await;

    let (status, body) = post(&svc, json!({ "kind": "Grasp" })).await;
    assert_eq!(status, 202, "{body}");
    let id = body["request_id"].as_u64().unwrap();
    let frames = until_phase(&mut rx, GraspPhase::Enclosing).await;
    let ev = frames.last().unwrap().event().unwrap();
    assert_eq!(ev.request_id, Some(id));
    assert_eq!(get(&svc, "/state").await["state"]["phase"], "Enclosing");
    svc.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn set_current_above_the_cap_is_refused() {
    let svc = start(Opts::default()).await;
    let (status, body) = post(&svc, json!({ "kind": "SetCurrent", "value": 400.0 })).await;
    assert_eq!(status, 422);
    assert_eq!(body["error"], "CurrentOutOfRange");
    let (status, _) = post(&svc, json!({ "kind": "SetCurrent", "value": 80.0 })).await;
    assert_eq!(status, 202);
    svc.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn client_request_ids_are_kept() {
    let svc = start(Opts::default()).await;
    let mut rx = subscribe(&svc).await;
    let (status, body) = post_with(&svc, json!({ "command": { "kind": "Open" }, "request_id": 4242 }), None).await;
    assert_eq!(status, 202);
    assert_eq!(body["request_id"], 4242);
    let frames = until_phase(&mut rx, GraspPhase::Open).await;
    assert!(frames.iter().filter_map(|f| f.event()).any(|e| e.request_id == Some(4242)));
    svc.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn token_guards_commands_only() {
    let svc = start(Opts {
        token: Some("s3cret".into()),
        ..Opts::default()
    })
    .await;
    let open = json!({ "command": { "kind": "Open" } });
    assert_eq!(post_with(&svc, open.clone(), None).await.0, 401);
    assert_eq!(post_with(&svc, open.clone(), Some("wrong")).await.0, 401);
    assert_eq!(post_with(&svc, open, Some("s3cret")).await.0, 202);
    assert_eq!(get(&svc, "/state").await["schema_version"], 1);
    svc.stop().await;
}

/// Whether `needle` appears as one contiguous run inside `hay`.
fn aligned<T: PartialEq>(hay: &[T], needle: &[T]) -> bool {
    let Some(first) = needle.first() else { return true };
    hay.iter()
        .enumerate()
        .filter(|(_, x)| *x == first)
        .any(|(i, _)| hay[i..].iter().zip(needle).all(|(a, b)| a == b) && hay.len() - i >= needle.len())
}

#[tokio::test(flavor = "multi_thread")]
async fn two_subscribers_receive_identical_sequences() {
    let svc = start(Opts {
        speed: 2.0,
        ..Opts::default()
    })
    .await;
    let mut a = subscribe(&svc).await;
    let mut b = subscribe(&svc).await;
    post(&svc, json!({ "kind": "Open" })).await;
    let fa = until_phase(&mut a, GraspPhase::Open).await;
    let fb = until_phase(&mut b, GraspPhase::Open).await;
    post(&svc, json!({ "kind": "Grasp" })).await;
    let mut ra = fa;
    ra.extend(until_phase(&mut a, GraspPhase::Secured).await);
    let mut rb = fb;
    rb.extend(until_phase(&mut b, GraspPhase::Secured).await);

    // The later subscriber may have missed a few frames at the start.
    let (long, short) = if ra.len() >= rb.len() { (&ra, &rb) } else { (&rb, &ra) };
    assert!(short.len() > 20, "{}", short.len());
    assert!(aligned(long, short), "streams diverge");
    assert_eq!(ra.last(), rb.last());
    svc.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn harvest_produces_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let svc = start(Opts {
        speed: 20.0,
        log_dir: Some(dir.path().into()),
        ..Opts::default()
    })
    .await;
    let mut rx = subscribe(&svc).await;
    post(&svc, json!({ "kind": "Open" })).await;
    until_phase(&mut rx, GraspPhase::Open).await;
    // The sim presents the fruit once the pockets are open.
    wait_open_settled(&svc).await;
    post(&svc, json!({ "kind": "Grasp" })).await;
    // The sim pulls the fruit after the hold and the controller releases it.
    let frames = until_phase(&mut rx, GraspPhase::Releasing).await;
    assert!(frames
        .iter()
        .filter_map(|f| f.event())
        .any(|e| matches!(e.kind, EventKind::Record { .. })));
    let body = get(&svc, "/records").await;
    let records: Vec<HarvestRecord> = serde_json::from_value(body["records"].clone()).unwrap();
    assert_eq!(records.len(), 1);
    assert!(records[0].harvested && !records[0].damaged_on_harvest, "{records:?}");
    svc.stop().await;

    let logged: Vec<HarvestRecord> = load_records(dir.path().join("records.jsonl")).unwrap();
    assert_eq!(logged, records);
}

#[tokio::test(flavor = "multi_thread")]
async fn stream_order_matches_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let svc = start(Opts {
        speed: 2.0,
        log_dir: Some(dir.path().into()),
        ..Opts::default()
    })
    .await;
    let mut rx = subscribe(&svc).await;
    post(&svc, json!({ "kind": "Open" })).await;
    let mut frames = until_phase(&mut rx, GraspPhase::Open).await;
    wait_open_settled(&svc).await;
    post(&svc, json!({ "kind": "Grasp" })).await;
    frames.extend(until_phase(&mut rx, GraspPhase::Secured).await);
    svc.stop().await;

    let mut samples: Vec<TelemetrySample> = Vec::new();
    let mut events: Vec<ControllerEvent> = Vec::new();
    for f in &frames {
        match f.message() {
            StreamMessage::Sample(s) => samples.push(s),
            StreamMessage::Event(e) => events.push(e),
        }
    }
    let log_samples = load_log(dir.path().join("telemetry.jsonl")).unwrap();
    let log_events: Vec<ControllerEvent> = load_records(dir.path().join("events.jsonl")).unwrap();
    assert!(samples.len() > 20);
    assert!(in_order(&log_samples, &samples), "sample order differs from the log");
    assert!(aligned(&log_events, &events), "event order differs from the log");
}

/// Whether every item of `needle` occurs in `hay`, in the same order.
fn in_order<T: PartialEq>(hay: &[T], needle: &[T]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

#[tokio::test(flavor = "multi_thread")]
async fn samples_are_streamed_at_most_100_hz() {
    let svc = start(Opts {
        speed: 20.0,
        ..Opts::default()
    })
    .await;
    let mut rx = subscribe(&svc).await;
    let t0 = std::time::Instant::now();
    let mut n = 0;
    while t0.elapsed() < Duration::from_secs(1) {
        if let StreamMessage::Sample(_) = next(&mut rx).await.message() {
            n += 1;
        }
    }
    let wall = t0.elapsed().as_secs_f64();
    // 20x real time is 1000 samples/s at the loop.
    assert!(n as f64 <= 100.0 * wall + 2.0, "{n} samples in {wall:.2} s");
    assert!(n > 20, "{n}");
    svc.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn every_accepted_command_is_answered_under_a_storm() {
    let svc = start(Opts {
        speed: 40.0,
        ..Opts::default()
    })
    .await;
    let mut rx = subscribe(&svc).await;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut accepted = BTreeSet::new();
    let mut conflicts = 0;
    for _ in 0..300 {
        let command = match rng.random_range(0..6) {
            0 => json!({ "kind": "Open" }),
            1 => json!({ "kind": "AlignConfirm" }),
            2 => json!({ "kind": "Grasp" }),
            3 => json!({ "kind": "Release" }),
            4 => json!({ "kind": "Abort" }),
            _ => json!({ "kind": "SetCurrent", "value": rng.random_range(40.0..140.0) }),
        };
        let (status, body) = post(&svc, command).await;
        match status {
            202 => {
                accepted.insert(body["request_id"].as_u64().unwrap());
            }
            409 => conflicts += 1,
            s => panic!("unexpected status {s}: {body}"),
        }
        if rng.random_bool(0.2) {
            tokio::time::sleep(Duration::from_millis(rng.random_range(1..40))).await;
        }
    }
    assert!(accepted.len() > 50 && conflicts > 0, "{} {conflicts}", accepted.len());

    let mut pending = accepted.clone();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(30);
    while !pending.is_empty() && tokio::time::Instant::now() < deadline {
        let Ok(Some(f)) = tokio::time::timeout(Duration::from_secs(5), rx.recv()).await else {
            break;
        };
        if let Some(ControllerEvent {
            request_id: Some(id),
            kind:
                EventKind::PhaseChanged { .. } | EventKind::CommandApplied { .. } | EventKind::CommandRejected { .. },
            ..
        }) = f.event()
        {
            pending.remove(&id);
        }
    }
    assert!(pending.is_empty(), "no event for request ids {pending:?}");
    svc.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn stop_closes_streams_and_zeroes_goals() {
    let svc = start(Opts::default()).await;
    let mut rx = subscribe(&svc).await;
    post(&svc, json!({ "kind": "Open" })).await;
    until_phase(&mut rx, GraspPhase::Open).await;
    assert!(svc.is_running());
    tokio::time::timeout(Duration::from_secs(5), svc.stop())
        .await
        .expect("stop does not hang on open streams");
    // Abort on the way out shows up before the stream closes.
    let mut saw_fault = false;
    while let Ok(Some(f)) = tokio::time::timeout(Duration::from_secs(5), rx.recv()).await {
        if let Some(ControllerEvent {
            kind: EventKind::PhaseChanged { to, .. },
            ..
        }) = f.event()
        {
            saw_fault |= to.is_fault();
        }
    }
    assert!(saw_fault);
}

#[tokio::test(flavor = "multi_thread")]
async fn bind_failure_is_reported() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let config = ServiceConfig {
        listen: taken.local_addr().unwrap(),
        transport: TransportSpec::Sim {
            scenario: Some(scenario("medium.toml")),
            speed: 1.0,
        },
        overrides: GraspOverrides::default(),
        token: None,
        log_dir: None,
    };
    let err = serve(config, &Registry::default()).await.err().expect("bind fails");
    assert!(matches!(err, ServiceError::Bind { .. }), "{err}");
}

#[tokio::test(flavor = "multi_thread")]
async fn missing_serial_device_is_a_transport_error() {
    let config = ServiceConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        transport: TransportSpec::Serial {
            device: "/dev/does-not-exist".into(),
            baud: 57600,
        },
        overrides: GraspOverrides::default(),
        token: None,
        log_dir: None,
    };
    let err = serve(config, &Registry::default()).await.err().expect("open fails");
    assert!(matches!(err, ServiceError::Transport(_)), "{err}");
}
