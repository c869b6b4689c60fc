//! Plumbing that turns the library into a usable controller: plant
//! configuration files, the control loop, its message schema, session
//! recording and replay, the map and roadmap file formats, and the repeated
//! recovery bench.

pub mod bench;
pub mod config;
pub mod control;
pub mod formats;
pub mod messages;
pub mod session;

pub use bench::{recover_bench, BenchReport, BenchSpec};
pub use config::PlantConfig;
pub use control::{replay, Controller, ReplayReport, Response};
pub use formats::{load_map, load_roadmap, save_map, save_roadmap};
pub use messages::{ControlMessage, JogDelta, ServerMessage, Snapshot, PROTOCOL_VERSION};
pub use session::{ControllerOptions, Event, Session};
