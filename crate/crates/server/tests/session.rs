use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use lazymtl::encoding::EncodedScenario;
use lazymtl::scenario::{EventFile, Scenario};
use lazymtl::synthesis::{RhcConfig, RhcRunner};
use lazymtl_server::protocol::{ServerBody, ServerMessage};
use lazymtl_server::{spawn, RunningServer, ServerOptions};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

const WAIT: Duration = Duration::from_secs(60);

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn phi3() -> Scenario {
    Scenario::load(fixture("phi3.toml")).unwrap()
}

fn options(paused: bool) -> ServerOptions {
    ServerOptions {
        step_period: Some(Duration::from_millis(10)),
        start_paused: paused,
        ..Default::default()
    }
}

async fn start(opts: ServerOptions) -> RunningServer {
    let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
    spawn(phi3(), opts, addr).await.unwrap()
}

async fn connect(server: &RunningServer) -> Ws {
    let (ws, _) = connect_async(format!("ws://{}/ws", server.addr))
        .await
        .unwrap();
    ws
}

async fn recv(ws: &mut Ws) -> ServerMessage {
    loop {
        let msg = tokio::time::timeout(WAIT, ws.next())
            .await
            .expect("timed out waiting for a message")
            .expect("stream ended")
            .unwrap();
        if let Message::Text(text) = msg {
            return serde_json::from_str(&text).unwrap();
        }
    }
}

/// Reads until a message matches; returns it and everything skipped.
async fn recv_until(
    ws: &mut Ws,
    pred: impl Fn(&ServerMessage) -> bool,
) -> (ServerMessage, Vec<ServerMessage>) {
    let mut skipped = Vec::new();
    loop {
        let m = recv(ws).await;
        if pred(&m) {
            return (m, skipped);
        }
        skipped.push(m);
    }
}

async fn send(ws: &mut Ws, json: serde_json::Value) {
    ws.send(Message::Text(json.to_string().into()))
        .await
        .unwrap();
}

async fn http_get(addr: SocketAddr, path: &str) -> (u16, serde_json::Value) {
    let mut s = TcpStream::connect(addr).await.unwrap();
    let req = format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n");
    s.write_all(req.as_bytes()).await.unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    let status = buf[9..12].parse().unwrap();
    let body = &buf[buf.find("\r\n\r\n").unwrap() + 4..];
    (status, serde_json::from_str(body).unwrap())
}

fn is_step(m: &ServerMessage) -> bool {
    matches!(m.body, ServerBody::StepEvent(_))
}

#[tokio::test]
async fn health_and_scenario_endpoints() {
    let server = start(options(true)).await;
    let (status, health) = http_get(server.addr, "/health").await;
    assert_eq!(status, 200);
    assert_eq!(health["status"], "ok");
    assert_eq!(health["protocol"], 1);
    let (status, scenario) = http_get(server.addr, "/scenario").await;
    assert_eq!(status, 200);
    assert_eq!(scenario["name"], "phi3");
    server.shutdown().await;
}

#[tokio::test]
async fn clients_start_from_the_same_snapshot() {
    let server = start(options(true)).await;
    let mut a = connect(&server).await;
    let mut b = connect(&server).await;
    let sa = recv(&mut a).await;
    let sb = recv(&mut b).await;
    assert_eq!(sa, sb);
    let ServerBody::Snapshot(snap) = sa.body else {
        panic!("expected a snapshot, got {sa:?}");
    };
    assert_eq!(sa.step, 1);
    assert!(snap.paused);
    assert_eq!(snap.horizon, 40);
    assert_eq!(snap.executed.len(), 1);
    let placeholder = snap
        .predicates
        .iter()
        .find(|p| p.name == "Unsafe2")
        .unwrap();
    assert!(!placeholder.in_use);
    server.shutdown().await;
}

#[tokio::test]
async fn bad_commands_get_error_replies() {
    let server = start(options(true)).await;
    let mut ws = connect(&server).await;
    recv(&mut ws).await;

    ws.send(Message::Text("{not json".into())).await.unwrap();
    let m = recv(&mut ws).await;
    assert!(matches!(m.body, ServerBody::Error(ref e) if e.message.contains("malformed")));

    send(
        &mut ws,
        serde_json::json!({"v": 1, "id": "x1", "kind": "fly"}),
    )
    .await;
    let m = recv(&mut ws).await;
    assert!(matches!(m.body, ServerBody::Error(ref e) if e.id.as_deref() == Some("x1")));

    send(
        &mut ws,
        serde_json::json!({"v": 9, "id": "x2", "kind": "pause"}),
    )
    .await;
    let m = recv(&mut ws).await;
    assert!(matches!(m.body, ServerBody::Error(ref e) if e.message.contains("version")));

    // concave polygon
    let verts = [[5.0, 1.0], [7.0, 1.0], [6.0, 1.5], [7.0, 2.0], [5.0, 2.0]];
    send(
        &mut ws,
        serde_json::json!({"v": 1, "id": "x3", "kind": "add_obstacle", "vertices": verts}),
    )
    .await;
    let m = recv(&mut ws).await;
    assert!(matches!(m.body, ServerBody::Error(ref e) if e.message.contains("convex")));

    send(
        &mut ws,
        serde_json::json!({"v": 1, "kind": "set_speed", "speed": -1.0}),
    )
    .await;
    let m = recv(&mut ws).await;
    assert!(matches!(m.body, ServerBody::Error(_)));

    // the session still works
    send(
        &mut ws,
        serde_json::json!({"v": 1, "id": "ok", "kind": "resume"}),
    )
    .await;
    let (m, _) = recv_until(&mut ws, |m| matches!(m.body, ServerBody::Ack(_))).await;
    assert!(matches!(m.body, ServerBody::Ack(ref a) if a.id.as_deref() == Some("ok")));
    server.shutdown().await;
}

#[tokio::test]
async fn added_obstacle_reaches_the_plan() {
    let server = start(options(true)).await;
    let mut ws = connect(&server).await;
    recv(&mut ws).await;
    let verts = [[6.5, 0.8], [7.5, 0.8], [7.5, 1.8], [6.5, 1.8]];
    send(
        &mut ws,
        serde_json::json!({"v": 1, "id": "o1", "kind": "add_obstacle", "vertices": verts}),
    )
    .await;
    let ack = recv(&mut ws).await;
    let ServerBody::Ack(a) = ack.body else {
        panic!("expected an ack, got {ack:?}");
    };
    assert_eq!(a.predicate.as_deref(), Some("Unsafe2"));
    assert_eq!(a.effective_step, Some(1));

    send(&mut ws, serde_json::json!({"v": 1, "kind": "resume"})).await;
    let (update, _) = recv_until(&mut ws, |m| matches!(m.body, ServerBody::PlanUpdate(_))).await;
    let ServerBody::PlanUpdate(u) = update.body else {
        unreachable!()
    };
    let p = u.predicates.iter().find(|p| p.name == "Unsafe2").unwrap();
    assert!(p.in_use);
    let (step, _) = recv_until(&mut ws, is_step).await;
    let ServerBody::StepEvent(s) = step.body else {
        unreachable!()
    };
    assert_eq!(s.ran, 1);
    assert_eq!(s.updates, vec!["Unsafe2".to_string()]);
    assert_eq!(step.seq, update.seq + 1);
    server.shutdown().await;
}

#[tokio::test]
async fn pause_and_resume_keep_step_continuity() {
    let server = start(options(false)).await;
    let mut ws = connect(&server).await;
    let mut last = 0;
    for _ in 0..3 {
        let (m, _) = recv_until(&mut ws, is_step).await;
        let ServerBody::StepEvent(s) = m.body else {
            unreachable!()
        };
        assert_eq!(s.ran, last + 1);
        last = s.ran;
    }
    send(&mut ws, serde_json::json!({"v": 1, "kind": "pause"})).await;
    let (_, skipped) = recv_until(&mut ws, |m| matches!(m.body, ServerBody::Ack(_))).await;
    for m in skipped.iter().filter(|m| is_step(m)) {
        let ServerBody::StepEvent(s) = &m.body else {
            unreachable!()
        };
        assert_eq!(s.ran, last + 1);
        last = s.ran;
    }
    // nothing runs while paused
    let quiet = tokio::time::timeout(Duration::from_millis(200), ws.next()).await;
    assert!(quiet.is_err(), "message while paused: {quiet:?}");

    send(&mut ws, serde_json::json!({"v": 1, "kind": "resume"})).await;
    let (m, _) = recv_until(&mut ws, is_step).await;
    let ServerBody::StepEvent(s) = m.body else {
        unreachable!()
    };
    assert_eq!(s.ran, last + 1);
    server.shutdown().await;
}

#[tokio::test]
async fn placeholder_budget_is_enforced() {
    let server = start(options(true)).await;
    let mut ws = connect(&server).await;
    recv(&mut ws).await;
    let verts = [[6.5, 0.8], [7.5, 0.8], [7.5, 1.8], [6.5, 1.8]];
    let add = serde_json::json!({"v": 1, "kind": "add_obstacle", "vertices": verts});
    send(&mut ws, add.clone()).await;
    assert!(matches!(recv(&mut ws).await.body, ServerBody::Ack(_)));
    send(&mut ws, add.clone()).await;
    let m = recv(&mut ws).await;
    assert!(matches!(m.body, ServerBody::Error(ref e) if e.message.contains("budget")));

    // removing frees the slot again
    send(
        &mut ws,
        serde_json::json!({"v": 1, "kind": "remove_obstacle", "name": "Unsafe2"}),
    )
    .await;
    assert!(matches!(recv(&mut ws).await.body, ServerBody::Ack(_)));
    send(&mut ws, add).await;
    assert!(matches!(recv(&mut ws).await.body, ServerBody::Ack(_)));
    server.shutdown().await;
}

#[tokio::test]
async fn scripted_session_matches_offline_replay() {
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().join("session.json");
    let events = EventFile::load(fixture("unsafe2_at_7.5s.json")).unwrap();
    let opts = ServerOptions {
        step_period: Some(Duration::from_millis(2)),
        events: events.clone(),
        record: Some(record.clone()),
        ..Default::default()
    };
    let server = start(opts).await;
    let mut ws = connect(&server).await;
    let (done, _) = recv_until(&mut ws, |m| matches!(m.body, ServerBody::Done(_))).await;
    let ServerBody::Done(done) = done.body else {
        unreachable!()
    };
    server.shutdown().await;

    let offline = |events: &EventFile| {
        let s = phi3();
        let enc = EncodedScenario::encode(s.problem::<f64>().unwrap()).unwrap();
        let config = RhcConfig {
            step_deadline: s.deadline,
            ..Default::default()
        };
        let mut runner = RhcRunner::new(enc, config);
        for u in s.updates::<f64>(events).unwrap() {
            runner.queue_update(u);
        }
        runner.run().unwrap();
        runner.combined()
    };
    assert_eq!(done.trajectory, offline(&events));
    let recorded = EventFile::load(&record).unwrap();
    assert_eq!(recorded, done.events);
    assert_eq!(offline(&recorded), done.trajectory);
}
