use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use icecath::gateway::messages::Mode;
use icecath::gateway::{ControlMessage, Controller, ControllerOptions, Event, JogDelta, PlantConfig, ServerMessage};
use icecath::planner::Roadmap;
use icecath::Config;
use icecath_server::{Service, ServiceOptions};
use tokio::net::{TcpListener, TcpStream};
use tokio::time::timeout;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Client = WebSocketStream<MaybeTlsStream<TcpStream>>;

const WAIT: Duration = Duration::from_secs(5);

async fn start(tick_hz: f64) -> (Service, SocketAddr) {
    let controller = Controller::new("ws", PlantConfig::default(), ControllerOptions::default(), None).unwrap();
    let service = Service::spawn(controller, ServiceOptions { tick_hz, ..ServiceOptions::default() }).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let router = service.router();
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
    (service, addr)
}

async fn client(addr: SocketAddr) -> Client {
    connect_async(format!("ws://{addr}/ws")).await.unwrap().0
}

async fn send(ws: &mut Client, msg: &ControlMessage) {
    ws.send(Message::text(msg.to_json())).await.unwrap();
}

async fn next(ws: &mut Client) -> ServerMessage {
    loop {
        let frame = timeout(WAIT, ws.next()).await.expect("frame within timeout").unwrap().unwrap();
        if let Message::Text(text) = frame {
            return ServerMessage::from_json(text.as_str()).unwrap();
        }
    }
}

/// Next frame that is not a broadcast snapshot or heartbeat.
async fn reply(ws: &mut Client) -> ServerMessage {
    loop {
        match next(ws).await {
            ServerMessage::Snapshot(_) | ServerMessage::Heartbeat { .. } => {}
            other => return other,
        }
    }
}

async fn snapshot_where(ws: &mut Client, pred: impl Fn(&icecath::gateway::Snapshot) -> bool) -> icecath::gateway::Snapshot {
    loop {
        if let ServerMessage::Snapshot(s) = next(ws).await {
            if pred(&s) {
                return s;
            }
        }
    }
}

#[tokio::test]
async fn query_state_reports_initial_state() {
    // Slow ticks: the only snapshot frame after the first tick is the reply.
    let (service, addr) = start(0.2).await;
    let mut ws = client(addr).await;
    tokio::time::sleep(Duration::from_millis(50)).await;
    send(&mut ws, &ControlMessage::QueryState).await;
    match next(&mut ws).await {
        ServerMessage::Snapshot(s) => {
            assert_eq!(s.config, Config::STRAIGHT);
            assert_eq!(s.mode, Mode::Manual);
            assert!(s.views.is_empty());
            assert_eq!(s.roadmap.vertices, 1, "the first tick observed the straight pose");
            assert_eq!(s.bend.radius, None);
        }
        other => panic!("expected snapshot, got {other:?}"),
    }
    service.shutdown().await.unwrap();
}

#[tokio::test]
async fn malformed_frames_keep_the_connection() {
    let (service, addr) = start(50.0).await;
    let mut ws = client(addr).await;
    ws.send(Message::text("{not json")).await.unwrap();
    assert!(matches!(reply(&mut ws).await, ServerMessage::Error { request: None, .. }));
    ws.send(Message::text(r#"{"v":1,"kind":"teleport"}"#)).await.unwrap();
    assert!(matches!(reply(&mut ws).await, ServerMessage::Error { .. }));
    ws.send(Message::binary(vec![1u8, 2, 3])).await.unwrap();
    assert!(matches!(reply(&mut ws).await, ServerMessage::Error { .. }));
    send(&mut ws, &ControlMessage::Abort).await;
    assert_eq!(reply(&mut ws).await, ServerMessage::Token { granted: true });
    assert_eq!(reply(&mut ws).await, ServerMessage::Ack { request: "abort".into(), view_id: None });
    service.shutdown().await.unwrap();
}

#[tokio::test]
async fn broadcasts_snapshots_and_heartbeats() {
    let (service, addr) = start(50.0).await;
    let mut ws = client(addr).await;
    let mut snapshots = 0;
    let heartbeat = loop {
        match next(&mut ws).await {
            ServerMessage::Snapshot(_) => snapshots += 1,
            ServerMessage::Heartbeat { tick, uptime_ms } => break (tick, uptime_ms),
            other => panic!("unexpected {other:?}"),
        }
    };
    assert!(heartbeat.1 >= 1000, "first heartbeat after one second, got {} ms", heartbeat.1);
    assert!(snapshots >= 10, "snapshots stream at the tick rate, got {snapshots}");
    service.shutdown().await.unwrap();
}

#[tokio::test]
async fn second_controller_is_read_only_until_release() {
    let (service, addr) = start(50.0).await;
    let mut first = client(addr).await;
    let mut second = client(addr).await;
    let jog = ControlMessage::Jog { delta: JogDelta { phi1: 1.0, ..JogDelta::default() } };

    send(&mut first, &jog).await;
    assert_eq!(reply(&mut first).await, ServerMessage::Token { granted: true });
    assert!(matches!(reply(&mut first).await, ServerMessage::Ack { .. }));

    send(&mut second, &jog).await;
    assert_eq!(reply(&mut second).await, ServerMessage::Token { granted: false });
    assert!(matches!(reply(&mut second).await, ServerMessage::Error { .. }));
    send(&mut second, &ControlMessage::QueryState).await;
    let s = snapshot_where(&mut second, |_| true).await;
    assert_eq!(s.commanded.phi1, 1.0, "viewer jog was not applied");

    first.close(None).await.unwrap();
    drop(first);
    let granted = async {
        loop {
            send(&mut second, &jog).await;
            if reply(&mut second).await == (ServerMessage::Token { granted: true }) {
                break;
            }
            let _ = reply(&mut second).await;
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    };
    timeout(WAIT, granted).await.expect("token released after disconnect");
    service.shutdown().await.unwrap();
}

/// Jogs and waits until a broadcast snapshot shows the new configuration.
async fn jog_to(ws: &mut Client, target: &mut Config, d: JogDelta) {
    *target = Config::new(target.phi1 + d.phi1, target.phi2 + d.phi2, target.phi3 + d.phi3, target.d4 + d.d4);
    send(ws, &ControlMessage::Jog { delta: d }).await;
    while !matches!(reply(ws).await, ServerMessage::Ack { .. }) {}
    let want = *target;
    snapshot_where(ws, |s| s.config == want).await;
}

#[tokio::test]
async fn jog_save_wander_recover_returns_exactly() {
    let (service, addr) = start(200.0).await;
    let mut ws = client(addr).await;

    let mut target = Config::STRAIGHT;
    for _ in 0..8 {
        jog_to(&mut ws, &mut target, JogDelta { phi1: 0.5, phi3: 0.25, ..JogDelta::default() }).await;
    }
    send(&mut ws, &ControlMessage::SaveView { label: "septum".into() }).await;
    let view_id = loop {
        if let ServerMessage::Ack { view_id: Some(id), .. } = reply(&mut ws).await {
            break id;
        }
    };
    for _ in 0..6 {
        jog_to(&mut ws, &mut target, JogDelta { phi2: 0.5, d4: 0.5, ..JogDelta::default() }).await;
    }

    send(&mut ws, &ControlMessage::Recover { view_id: "view-99".into() }).await;
    match reply(&mut ws).await {
        ServerMessage::Error { message, request } => {
            assert!(message.contains("unknown view"), "{message}");
            assert_eq!(request.as_deref(), Some("recover"));
        }
        other => panic!("expected error, got {other:?}"),
    }

    send(&mut ws, &ControlMessage::Recover { view_id: view_id.clone() }).await;
    assert_eq!(reply(&mut ws).await, ServerMessage::Ack { request: "recover".into(), view_id: Some(view_id.clone()) });
    let done = snapshot_where(&mut ws, |s| s.mode == Mode::Manual && s.recovery.is_none() && s.config != target).await;
    let saved = done.views.iter().find(|v| v.id == view_id).unwrap().config;
    assert_eq!(done.config, saved);

    let controller = service.shutdown().await.unwrap();
    assert_eq!(controller.actuated(), saved);

    // The roadmap built live equals one built offline from the recorded samples.
    let mut offline = Roadmap::new(controller.roadmap().epsilon(), *controller.roadmap().metric()).unwrap();
    for e in controller.session().events() {
        if let Event::EmSample { config, .. } = e {
            offline.observe(config).unwrap();
        }
    }
    assert_eq!(&offline, controller.roadmap());
}
