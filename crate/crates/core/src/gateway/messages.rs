//! Wire schema of the control service.
//!
//! Every frame is one JSON object with a `kind` tag and a protocol version `v`.
//! Unknown kinds are rejected; unknown extra fields are ignored.
//!
//! Client to service:
//!
//! ```json
//! {"v": 1, "kind": "jog", "delta": {"phi1": 2.0, "phi3": -1.0}}
//! {"v": 1, "kind": "set_config", "config": {"phi1": 30.0, "phi2": 0.0, "phi3": 0.0, "d4": 5.0}}
//! {"v": 1, "kind": "save_view", "label": "four-chamber"}
//! {"v": 1, "kind": "recover", "view_id": "view-1"}
//! {"v": 1, "kind": "set_compensation", "enabled": true}
//! {"v": 1, "kind": "query_state"}
//! {"v": 1, "kind": "abort"}
//! ```
//!
//! Service to client: `snapshot`, `ack`, `error`, `heartbeat` and `token`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::kinematics::{BendParams, Config, TipPose};
use crate::planner::View;

pub const PROTOCOL_VERSION: u32 = 1;

/// Relative joint motion; omitted channels are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct JogDelta {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
    pub d4: f64,
}

impl JogDelta {
    pub fn as_array(&self) -> [f64; 4] {
        [self.phi1, self.phi2, self.phi3, self.d4]
    }

    /// Largest absolute channel, degrees or mm.
    pub fn max_abs(&self) -> f64 {
        self.as_array().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlMessage {
    Jog { delta: JogDelta },
    SetConfig { config: Config },
    SaveView {
        #[serde(default)]
        label: String,
    },
    Recover { view_id: String },
    SetCompensation { enabled: bool },
    QueryState,
    Abort,
}

impl ControlMessage {
    pub fn name(&self) -> &'static str {
        match self {
            ControlMessage::Jog { .. } => "jog",
            ControlMessage::SetConfig { .. } => "set_config",
            ControlMessage::SaveView { .. } => "save_view",
            ControlMessage::Recover { .. } => "recover",
            ControlMessage::SetCompensation { .. } => "set_compensation",
            ControlMessage::QueryState => "query_state",
            ControlMessage::Abort => "abort",
        }
    }

    /// Messages that move the catheter or change what is actuated.
    pub fn actuates(&self) -> bool {
        !matches!(self, ControlMessage::QueryState)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_versioned(text)
    }

    pub fn to_json(&self) -> String {
        to_versioned(self)
    }
}

fn from_versioned<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Format(format!("malformed message: {e}")))?;
    match value.get("v").and_then(Value::as_u64) {
        Some(v) if v == u64::from(PROTOCOL_VERSION) => {}
        Some(v) => return Err(Error::Format(format!("unsupported protocol version {v}"))),
        None => return Err(Error::Format("missing protocol version field 'v'".into())),
    }
    serde_json::from_value(value).map_err(|e| Error::Format(format!("invalid message: {e}")))
}

fn to_versioned<T: Serialize>(msg: &T) -> String {
    let mut value = serde_json::to_value(msg).expect("message types serialize to JSON objects");
    if let Value::Object(map) = &mut value {
        map.insert("v".into(), Value::from(PROTOCOL_VERSION));
    }
    value.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Manual,
    Recovering,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSnapshot {
    pub position: [f64; 3],
    /// Row-major rotation matrix; column 0 is the image direction.
    pub rotation: [[f64; 3]; 3],
}

impl From<&TipPose> for PoseSnapshot {
    fn from(p: &TipPose) -> Self {
        let r = &p.rotation;
        Self {
            position: [p.position.x, p.position.y, p.position.z],
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
        }
    }
}

impl PoseSnapshot {
    pub fn to_pose(&self) -> TipPose {
        TipPose::new(
            nalgebra::Vector3::from(self.position),
            nalgebra::Matrix3::from_fn(|i, j| self.rotation[i][j]),
        )
    }
}

/// Arc of the actuated configuration; `radius` is absent for a straight catheter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BendSnapshot {
    pub theta: f64,
    pub alpha: f64,
    pub radius: Option<f64>,
    pub length: f64,
}

impl BendSnapshot {
    pub fn new(b: &BendParams, length: f64) -> Self {
        Self { theta: b.theta, alpha: b.alpha, radius: b.radius.is_finite().then_some(b.radius), length }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadmapSummary {
    pub vertices: usize,
    pub edges: usize,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryProgress {
    pub view_id: String,
    pub emitted: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompensationState {
    pub available: bool,
    pub enabled: bool,
}

/// Immutable copy of the controller state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub mode: Mode,
    /// Configuration sent to the motors.
    pub config: Config,
    /// Operator-space configuration before compensation.
    pub commanded: Config,
    pub bend: BendSnapshot,
    /// Latest tracker reading of the tip.
    pub tip: PoseSnapshot,
    pub roadmap: RoadmapSummary,
    pub views: Vec<View>,
    pub recovery: Option<RecoveryProgress>,
    pub compensation: CompensationState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerMessage {
    Snapshot(Snapshot),
    Ack {
        request: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        view_id: Option<String>,
    },
    Error {
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request: Option<String>,
    },
    Heartbeat { tick: u64, uptime_ms: u64 },
    Token { granted: bool },
}

impl ServerMessage {
    pub fn from_json(text: &str) -> Result<Self> {
        from_versioned(text)
    }

    pub fn to_json(&self) -> String {
        to_versioned(self)
    }

    pub fn error(e: &Error, request: Option<&str>) -> Self {
        ServerMessage::Error { message: e.to_string(), request: request.map(str::to_string) }
    }
}
