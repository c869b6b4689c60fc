//! Declarative plant configuration.
//!
//! ```toml
//! seed = 7
//!
//! [catheter]
//! bend_length = 60.0          # mm
//! knob_radius = 1.65          # mm
//! catheter_radius = 1.65      # mm
//! workspace_bound = 90.0      # degrees, symmetric on both knobs
//! us_offset_mm = [0.0, 0.0, 0.0]
//! us_offset_rotvec_deg = [0.0, 0.0, 0.0]
//!
//! [distortion]
//! alpha_gain = [1.0, -0.32, 0.32]
//! twist_amplitude = 8.0
//! twist_bound = 10.0
//! asymmetry = [1.0, 1.0]
//!
//! [curvature]
//! condition = "straight"      # straight | moderate | steep
//! position_mm = 1.5
//! orientation_deg = 4.0
//!
//! [noise]
//! position_sd = 0.0           # per axis, mm
//! orientation_sd = 0.0        # degrees
//! ```
//!
//! Every key is optional and falls back to the defaults shown.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{rodrigues, CatheterParams, RigidTransform};
use crate::plant::{CurvatureBias, CurvatureCondition, DistortionField, NoiseModel, PlantModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatheterSection {
    pub bend_length: f64,
    pub knob_radius: f64,
    pub catheter_radius: f64,
    pub workspace_bound: f64,
    pub us_offset_mm: [f64; 3],
    /// Rotation vector of the ultrasound offset: axis times angle in degrees.
    pub us_offset_rotvec_deg: [f64; 3],
}

impl Default for CatheterSection {
    fn default() -> Self {
        let p = CatheterParams::default();
        Self {
            bend_length: p.bend_length,
            knob_radius: p.knob_radius,
            catheter_radius: p.catheter_radius,
            workspace_bound: p.workspace_bound,
            us_offset_mm: [0.0; 3],
            us_offset_rotvec_deg: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvatureSection {
    pub condition: CurvatureCondition,
    pub position_mm: f64,
    pub orientation_deg: f64,
}

impl Default for CurvatureSection {
    fn default() -> Self {
        let b = CurvatureBias::default();
        Self { condition: CurvatureCondition::Straight, position_mm: b.position_mm, orientation_deg: b.orientation_deg }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub seed: u64,
    pub catheter: CatheterSection,
    pub distortion: DistortionField,
    pub curvature: CurvatureSection,
    pub noise: NoiseModel,
}

impl PlantConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("plant config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("plant config: {e}")))
    }

    pub fn params(&self) -> Result<CatheterParams> {
        let c = &self.catheter;
        let rotvec = Vector3::from(c.us_offset_rotvec_deg);
        let angle = rotvec.norm();
        let rotation = if angle == 0.0 { nalgebra::Matrix3::identity() } else { rodrigues(&(rotvec / angle), angle)? };
        let params = CatheterParams {
            bend_length: c.bend_length,
            knob_radius: c.knob_radius,
            catheter_radius: c.catheter_radius,
            us_offset: RigidTransform::new(rotation, Vector3::from(c.us_offset_mm)),
            workspace_bound: c.workspace_bound,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn build(&self) -> Result<PlantModel> {
        let mut plant =
            PlantModel::new(self.params()?, self.distortion.clone(), self.curvature.condition, self.noise, self.seed)?;
        plant.curvature_bias =
            CurvatureBias { position_mm: self.curvature.position_mm, orientation_deg: self.curvature.orientation_deg };
        Ok(plant)
    }
}
