//! Append-only session log, stored as line-delimited JSON.
//!
//! The first line is a header:
//!
//! ```json
//! {"magic":"ICECATH-SESSION","version":1,"id":"bench-7","plant":{...},"options":{...},"map":null}
//! ```
//!
//! Every further line is one event tagged by `event`: `command`, `em_sample`,
//! `view_saved`, `recovery_requested` or `path_executed`. Each carries the
//! control-loop `tick` it happened at; ticks never decrease.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::PlantConfig;
use super::messages::{ControlMessage, PoseSnapshot};
use crate::error::{Error, Result};
use crate::kinematics::Config;
use crate::planner::{ExecutionReport, Metric, DEFAULT_EPSILON};
use crate::trajectories::DEFAULT_RATE_LIMIT;

pub const SESSION_MAGIC: &str = "ICECATH-SESSION";
pub const SESSION_VERSION: u32 = 1;

/// Controller settings recorded with a session so replays match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerOptions {
    pub epsilon: f64,
    pub metric: Metric,
    /// Largest jog per channel, degrees or mm.
    pub jog_limit: f64,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, metric: Metric::default(), jog_limit: DEFAULT_RATE_LIMIT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub magic: String,
    pub version: u32,
    pub id: String,
    pub plant: PlantConfig,
    pub options: ControllerOptions,
    /// Elasticity map file used for compensation, if any.
    pub map: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// A control message and, when it was refused, why.
    Command {
        tick: u64,
        message: ControlMessage,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    EmSample { tick: u64, config: Config, pose: PoseSnapshot },
    ViewSaved { tick: u64, view_id: String, label: String, config: Config },
    RecoveryRequested { tick: u64, view_id: String, waypoints: usize, cost: f64 },
    PathExecuted { tick: u64, view_id: String, report: ExecutionReport },
}

impl Event {
    pub fn tick(&self) -> u64 {
        match self {
            Event::Command { tick, .. }
            | Event::EmSample { tick, .. }
            | Event::ViewSaved { tick, .. }
            | Event::RecoveryRequested { tick, .. }
            | Event::PathExecuted { tick, .. } => *tick,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    header: SessionHeader,
    events: Vec<Event>,
}

impl Session {
    pub fn new(id: &str, plant: PlantConfig, options: ControllerOptions, map: Option<String>) -> Self {
        Self {
            header: SessionHeader {
                magic: SESSION_MAGIC.into(),
                version: SESSION_VERSION,
                id: id.into(),
                plant,
                options,
                map,
            },
            events: Vec::new(),
        }
    }

    pub fn header(&self) -> &SessionHeader {
        &self.header
    }

    pub fn id(&self) -> &str {
        &self.header.id
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn em_samples(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| matches!(e, Event::EmSample { .. }))
    }

    pub fn append(&mut self, event: Event) -> Result<()> {
        if let Some(last) = self.events.last() {
            if event.tick() < last.tick() {
                return Err(Error::State(format!("event at tick {} precedes tick {}", event.tick(), last.tick())));
            }
        }
        self.events.push(event);
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.events {
            writeln!(out, "{}", serde_json::to_string(e).expect("events serialize")).expect("writing to a String");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::Format("empty session file".into()))?;
        let header: SessionHeader =
            serde_json::from_str(first).map_err(|e| Error::Format(format!("session header: {e}")))?;
        if header.magic != SESSION_MAGIC {
            return Err(Error::Format(format!("not a session file (magic '{}')", header.magic)));
        }
        if header.version != SESSION_VERSION {
            return Err(Error::Format(format!("unsupported session version {}", header.version)));
        }
        let mut session = Session { header, events: Vec::new() };
        for (n, line) in lines {
            let event: Event =
                serde_json::from_str(line).map_err(|e| Error::Format(format!("session line {}: {e}", n + 1)))?;
            session.append(event).map_err(|e| Error::Format(format!("session line {}: {e}", n + 1)))?;
        }
        Ok(session)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
