mod common;

use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use klafate::backend::http::{router, AppState};
use klafate::backend::run_loop::{run, Command, LoopConfig, Shared, SimSource};
use klafate::backend::{Bus, Engine, EngineConfig, EventStore, SystemClock};
use klafate::bgsim::{Recipe, Scenario, Simulator};
use klafate::fmea::load_workbook;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tower::ServiceExt;

struct Harness {
    app: axum::Router,
    commands: tokio::sync::mpsc::Sender<Command>,
    handle: tokio::task::JoinHandle<Result<Engine, klafate::backend::BackendError>>,
}

fn start(script: &str, period_ms: u64) -> Harness {
    let bus = Bus::default();
    let engine = Engine::new(
        load_workbook(common::fixture("bgs.fmea")).unwrap(),
        EventStore::in_memory(),
        bus.clone(),
        Arc::new(SystemClock),
        EngineConfig::default(),
    )
    .unwrap();
    let shared = Arc::new(RwLock::new(Shared::default()));
    let (tx, rx) = tokio::sync::mpsc::channel(8);
    let app = router(AppState {
        commands: tx.clone(),
        bus,
        shared: shared.clone(),
    });
    let source = SimSource::new(Simulator::new(2, Recipe::np()), Scenario::parse(script).unwrap());
    let config = LoopConfig {
        period: Duration::from_millis(period_ms),
        ..LoopConfig::default()
    };
    let handle = tokio::spawn(run(engine, source, config, rx, shared));
    Harness {
        app,
        commands: tx,
        handle,
    }
}

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, serde_json::Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null))
}

async fn get(app: &axum::Router, path: &str) -> (StatusCode, serde_json::Value) {
    call(app, Request::get(path).body(Body::empty()).unwrap()).await
}

async fn post(app: &axum::Router, body: &str) -> (StatusCode, serde_json::Value) {
    let req = Request::post("/event")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await
}

async fn wait_for_phase(app: &axum::Router, phase: &str) {
    for _ in 0..2000 {
        if get(app, "/health").await.1["phase"] == phase {
            return;
        }
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
    panic!("never reached {phase}");
}

#[tokio::test]
async fn report_path_over_http() {
    let h = start("at 3 inject air_valve_closed\n", 2);
    let (status, body) = get(&h.app, "/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");

    wait_for_phase(&h.app, "AWAIT_ACK").await;
    let (status, a) = get(&h.app, "/assessment/current").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(a["fm_id"], "LQ");
    assert_eq!(a["seq"], 1);

    assert_eq!(post(&h.app, r#"{"kind":"next"}"#).await.0, StatusCode::CONFLICT);
    assert_eq!(post(&h.app, r#"{"kind":"ack"}"#).await.1["phase"], "AWAIT_RESOLUTION");
    let mut phase = serde_json::Value::Null;
    for _ in 0..a["pairs"].as_array().unwrap().len() {
        phase = post(&h.app, r#"{"kind":"next"}"#).await.1["phase"].clone();
    }
    assert_eq!(phase, "AWAIT_REPORT");
    assert_eq!(post(&h.app, r#"{"kind":"report","text":"flap jammed"}"#).await.1["phase"], "MONITOR");
    assert!(post(&h.app, r#"{"kind":"teleport"}"#).await.0.is_client_error());

    let (_, m) = get(&h.app, "/metrics").await;
    assert_eq!(m["latency"]["cycle"]["count"], 1);

    h.commands.send(Command::Shutdown).await.unwrap();
    let engine = h.handle.await.unwrap().unwrap();
    assert!((engine.weights().get("LQ").unwrap().w_r - 0.355).abs() < 1e-12);
}

#[tokio::test]
async fn sse_stream_delivers_assessments() {
    let h = start("at 30 inject vacuum_pump_off\n", 5);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = h.app.clone();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    stream
        .write_all(b"GET /assessment HTTP/1.1\r\nHost: localhost\r\nAccept: text/event-stream\r\n\r\n")
        .await
        .unwrap();
    let mut received = String::new();
    let mut buf = [0u8; 4096];
    let deadline = tokio::time::Instant::now() + Duration::from_secs(10);
    while !received.contains("event: assessment") {
        let n = tokio::time::timeout_at(deadline, stream.read(&mut buf)).await.expect("SSE timed out").unwrap();
        assert!(n > 0, "stream closed");
        received.push_str(&String::from_utf8_lossy(&buf[..n]));
    }
    assert!(received.contains("text/event-stream"));
    while !received.contains("\n\n") || !received.contains("\"fm_id\"") {
        let n = tokio::time::timeout_at(deadline, stream.read(&mut buf)).await.unwrap().unwrap();
        received.push_str(&String::from_utf8_lossy(&buf[..n]));
    }
    assert!(received.contains("\"fm_id\":\"LQ\""), "{received}");
    assert!(received.contains("no_vacuum_pump"), "{received}");
    h.commands.send(Command::Shutdown).await.unwrap();
}
