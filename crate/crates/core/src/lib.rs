//! Robotic intra-cardiac echocardiography catheter control, fully simulated.
//!
//! * [`kinematics`]: constant-curvature forward and inverse kinematics.
//! * [`plant`]: a distorted, noisy stand-in for the physical catheter and its EM tracker.
//! * [`compensation`]: calibration, the elasticity correction map and trajectory smoothing.
//! * [`planner`]: roadmap of visited configurations, saved views and A* view recovery.
//! * [`trajectories`]: image-spinning trajectories and validation metrics.
//! * [`gateway`]: control loop, session recording, message schema and file formats.

pub mod compensation;
pub mod error;
pub mod gateway;
pub mod kinematics;
pub mod planner;
pub mod plant;
pub mod trajectories;

pub use error::{Error, Result};
pub use kinematics::{CatheterParams, Config, TipPose};
