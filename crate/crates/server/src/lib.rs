//! Live control service over websockets.
//!
//! One task owns the [`Controller`]. Connections reach it only through a
//! request channel and receive its output from a broadcast channel, so every
//! snapshot a client sees is an immutable copy.
//!
//! Route: `GET /ws`, upgraded to a websocket carrying JSON text frames in the
//! schema of [`icecath::gateway::messages`]. The service broadcasts a
//! `snapshot` every control tick (50 Hz by default) and a `heartbeat` every
//! second. A request is answered on the same connection with `ack`,
//! `snapshot` (for `query_state`) or `error`; malformed frames get an `error`
//! and the connection stays open.
//!
//! The first connection to send an actuating message receives
//! `{"kind":"token","granted":true}` and keeps the actuation token until it
//! disconnects. Actuating messages from any other connection are answered with
//! `token` (`granted: false`) followed by an `error`; those connections remain
//! viewers.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use icecath::gateway::{ControlMessage, Controller, Response, ServerMessage};
use icecath::{Error, Result};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::{interval, interval_at, Instant, MissedTickBehavior};

pub const DEFAULT_TICK_HZ: f64 = 50.0;
pub const HEARTBEAT_PERIOD: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceOptions {
    pub tick_hz: f64,
    pub heartbeat: Duration,
    /// Capacity of the request channel and of each client's frame backlog.
    pub queue: usize,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self { tick_hz: DEFAULT_TICK_HZ, heartbeat: HEARTBEAT_PERIOD, queue: 256 }
    }
}

impl ServiceOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tick_hz.is_finite() && self.tick_hz > 0.0) {
            return Err(Error::Domain(format!("tick rate {} Hz must be positive", self.tick_hz)));
        }
        if self.heartbeat.is_zero() || self.queue == 0 {
            return Err(Error::Domain("heartbeat period and queue size must be positive".into()));
        }
        Ok(())
    }
}

enum Request {
    Message { conn: u64, msg: ControlMessage, reply: oneshot::Sender<Vec<ServerMessage>> },
    Disconnect { conn: u64 },
}

/// Cheap, clonable access to a running control loop.
#[derive(Clone)]
pub struct ServiceHandle {
    requests: mpsc::Sender<Request>,
    frames: broadcast::Sender<Arc<str>>,
    next_conn: Arc<AtomicU64>,
}

impl ServiceHandle {
    /// Identifier for a new client; token ownership is tracked per id.
    pub fn open(&self) -> u64 {
        self.next_conn.fetch_add(1, Ordering::Relaxed)
    }

    /// Serialized frames broadcast by the control loop.
    pub fn subscribe(&self) -> broadcast::Receiver<Arc<str>> {
        self.frames.subscribe()
    }

    /// Sends one message on behalf of `conn` and waits for the answer frames.
    pub async fn request(&self, conn: u64, msg: ControlMessage) -> Vec<ServerMessage> {
        let name = msg.name();
        let (reply, answer) = oneshot::channel();
        if self.requests.send(Request::Message { conn, msg, reply }).await.is_err() {
            return vec![stopped(name)];
        }
        answer.await.unwrap_or_else(|_| vec![stopped(name)])
    }

    /// Releases whatever `conn` held.
    pub async fn close(&self, conn: u64) {
        let _ = self.requests.send(Request::Disconnect { conn }).await;
    }

    pub fn router(&self) -> Router {
        Router::new().route("/ws", get(upgrade)).with_state(self.clone())
    }
}

fn stopped(request: &str) -> ServerMessage {
    ServerMessage::Error { message: "control loop has stopped".into(), request: Some(request.into()) }
}

/// A spawned control loop.
pub struct Service {
    handle: ServiceHandle,
    shutdown: oneshot::Sender<()>,
    task: JoinHandle<Controller>,
}

impl Service {
    /// Starts the control loop on the current tokio runtime.
    pub fn spawn(controller: Controller, options: ServiceOptions) -> Result<Self> {
        options.validate()?;
        let (requests, inbox) = mpsc::channel(options.queue);
        let (frames, _) = broadcast::channel(options.queue);
        let (shutdown, stop) = oneshot::channel();
        let state = ControlLoop { controller, holder: None, frames: frames.clone(), started: Instant::now() };
        let task = tokio::spawn(state.run(options, inbox, stop));
        Ok(Self { handle: ServiceHandle { requests, frames, next_conn: Arc::new(AtomicU64::new(1)) }, shutdown, task })
    }

    pub fn handle(&self) -> ServiceHandle {
        self.handle.clone()
    }

    pub fn router(&self) -> Router {
        self.handle.router()
    }

    /// Stops the loop and returns the controller with its session log.
    pub async fn shutdown(self) -> Result<Controller> {
        let _ = self.shutdown.send(());
        self.task.await.map_err(|e| Error::State(format!("control loop panicked: {e}")))
    }
}

/// Binds `addr`, serves until `stop` resolves, then returns the controller.
pub async fn serve(
    controller: Controller,
    options: ServiceOptions,
    addr: SocketAddr,
    stop: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<Controller> {
    let service = Service::spawn(controller, options)?;
    let listener = TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, tick_hz = options.tick_hz, "serving on /ws");
    axum::serve(listener, service.router()).with_graceful_shutdown(stop).await?;
    service.shutdown().await
}

struct ControlLoop {
    controller: Controller,
    holder: Option<u64>,
    frames: broadcast::Sender<Arc<str>>,
    started: Instant,
}

impl ControlLoop {
    async fn run(
        mut self,
        options: ServiceOptions,
        mut inbox: mpsc::Receiver<Request>,
        mut stop: oneshot::Receiver<()>,
    ) -> Controller {
        let mut ticker = interval(Duration::from_secs_f64(1.0 / options.tick_hz));
        ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
        let mut heartbeat = interval_at(Instant::now() + options.heartbeat, options.heartbeat);
        heartbeat.set_missed_tick_behavior(MissedTickBehavior::Skip);
        loop {
            tokio::select! {
                _ = &mut stop => break,
                _ = ticker.tick() => match self.controller.tick() {
                    Ok(s) => self.broadcast(&ServerMessage::Snapshot(s)),
                    Err(e) => {
                        tracing::warn!(error = %e, "control tick failed");
                        self.broadcast(&ServerMessage::error(&e, None));
                    }
                },
                _ = heartbeat.tick() => {
                    let uptime_ms = self.started.elapsed().as_millis() as u64;
                    self.broadcast(&ServerMessage::Heartbeat { tick: self.controller.tick_count(), uptime_ms });
                }
                request = inbox.recv() => match request {
                    Some(Request::Message { conn, msg, reply }) => {
                        let _ = reply.send(self.dispatch(conn, msg));
                    }
                    Some(Request::Disconnect { conn }) => {
                        if self.holder == Some(conn) {
                            tracing::info!(conn, "actuation token released");
                            self.holder = None;
                        }
                    }
                    None => break,
                },
            }
        }
        self.controller
    }

    fn broadcast(&self, msg: &ServerMessage) {
        // No receivers is not an error: nobody is watching.
        let _ = self.frames.send(msg.to_json().into());
    }

    fn dispatch(&mut self, conn: u64, msg: ControlMessage) -> Vec<ServerMessage> {
        let request = msg.name();
        let mut out = Vec::with_capacity(2);
        if msg.actuates() {
            match self.holder {
                None => {
                    self.holder = Some(conn);
                    tracing::info!(conn, "actuation token granted");
                    out.push(ServerMessage::Token { granted: true });
                }
                Some(h) if h == conn => {}
                Some(_) => {
                    return vec![
                        ServerMessage::Token { granted: false },
                        ServerMessage::Error {
                            message: "actuation token is held by another connection".into(),
                            request: Some(request.into()),
                        },
                    ];
                }
            }
        }
        out.push(match self.controller.handle(msg) {
            Ok(Response::Ack { view_id }) => ServerMessage::Ack { request: request.into(), view_id },
            Ok(Response::State(s)) => ServerMessage::Snapshot(*s),
            Err(e) => ServerMessage::error(&e, Some(request)),
        });
        out
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(handle): State<ServiceHandle>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, handle))
}

async fn connection(socket: WebSocket, handle: ServiceHandle) {
    let conn = handle.open();
    let mut frames = handle.subscribe();
    let (mut tx, mut rx) = socket.split();
    tracing::debug!(conn, "client connected");
    loop {
        let outgoing: Vec<String> = tokio::select! {
            incoming = rx.next() => match incoming {
                Some(Ok(Message::Text(text))) => match ControlMessage::from_json(text.as_str()) {
                    Ok(msg) => handle.request(conn, msg).await.iter().map(ServerMessage::to_json).collect(),
                    Err(e) => vec![ServerMessage::error(&e, None).to_json()],
                },
                Some(Ok(Message::Binary(_))) => {
                    vec![ServerMessage::Error { message: "only text frames are accepted".into(), request: None }.to_json()]
                }
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => Vec::new(),
            },
            frame = frames.recv() => match frame {
                Ok(f) => vec![f.to_string()],
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::debug!(conn, skipped = n, "slow client skipped frames");
                    Vec::new()
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
        };
        for text in outgoing {
            if tx.send(Message::text(text)).await.is_err() {
                handle.close(conn).await;
                return;
            }
        }
    }
    handle.close(conn).await;
    tracing::debug!(conn, "client disconnected");
}
