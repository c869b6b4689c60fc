//! Constant-curvature kinematics of the four-joint catheter.
//!
//! A configuration `q = (phi1, phi2, phi3, d4)` holds the two knob angles, the
//! bulk roll and the axial translation. The knobs pull tendons that bend the
//! distal section into a circular arc of fixed length `L`; roll and translation
//! move the whole catheter about and along the base `z` axis. The tip frame is
//!
//! ```text
//! T_tip = T_trans(d4) * T_roll(phi3) * T_tilt(theta, alpha) * T_US
//! ```
//!
//! Angles are degrees at every public boundary and radians inside this module.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angular and positional tolerance used when validating poses.
pub const POSE_TOLERANCE: f64 = 1e-6;

const UNIT_TOLERANCE: f64 = 1e-9;

/// Joint state of the robot: knob angles and roll in degrees, translation in mm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Config {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
    pub d4: f64,
}

impl Config {
    pub const STRAIGHT: Config = Config { phi1: 0.0, phi2: 0.0, phi3: 0.0, d4: 0.0 };

    pub const fn new(phi1: f64, phi2: f64, phi3: f64, d4: f64) -> Self {
        Self { phi1, phi2, phi3, d4 }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.phi1, self.phi2, self.phi3, self.d4]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    /// Checks finiteness and the knob workspace bound. Roll and translation are unbounded.
    pub fn validate(&self, workspace_bound: f64) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::Domain(format!("non-finite configuration {self:?}")));
        }
        if self.phi1.abs() > workspace_bound + UNIT_TOLERANCE
            || self.phi2.abs() > workspace_bound + UNIT_TOLERANCE
        {
            return Err(Error::Domain(format!(
                "knob angles ({}, {}) outside workspace ±{workspace_bound}°",
                self.phi1, self.phi2
            )));
        }
        Ok(())
    }

    /// Largest absolute per-coordinate difference.
    pub fn max_abs_diff(&self, other: &Config) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Rotation plus translation, applied as `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    pub fn rotation(r: Matrix3<f64>) -> Self {
        Self { rotation: r, translation: Vector3::zeros() }
    }

    /// `self * rhs`: apply `rhs` first.
    pub fn compose(&self, rhs: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }
}

/// Geometry of the catheter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatheterParams {
    /// Length of the bending section, mm.
    pub bend_length: f64,
    /// Radius of the handle knobs, mm.
    pub knob_radius: f64,
    /// Radius of the catheter at the tendon sheaths, mm.
    pub catheter_radius: f64,
    /// Fixed transform from the end of the bending section to the image center.
    pub us_offset: RigidTransform,
    /// Symmetric bound on both knob angles, degrees.
    pub workspace_bound: f64,
}

impl Default for CatheterParams {
    fn default() -> Self {
        Self {
            bend_length: 60.0,
            knob_radius: 1.65,
            catheter_radius: 1.65,
            us_offset: RigidTransform::identity(),
            workspace_bound: 90.0,
        }
    }
}

impl CatheterParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.bend_length) || !positive(self.knob_radius) || !positive(self.catheter_radius) {
            return Err(Error::Domain(format!(
                "bend length and radii must be positive (L = {}, r_knob = {}, r_catheter = {})",
                self.bend_length, self.knob_radius, self.catheter_radius
            )));
        }
        if !positive(self.workspace_bound) {
            return Err(Error::Domain(format!("workspace bound {} must be positive", self.workspace_bound)));
        }
        Ok(())
    }

    /// Ratio converting the knob-angle norm into arc angle.
    pub fn knob_ratio(&self) -> f64 {
        self.knob_radius / self.catheter_radius
    }
}

/// Arc description of the bending section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BendParams {
    /// Azimuth of the bending plane measured from the base x axis, degrees.
    pub theta: f64,
    /// Arc angle, degrees, never negative.
    pub alpha: f64,
    /// Arc radius, mm; `f64::INFINITY` for the straight catheter.
    pub radius: f64,
}

/// Position and orientation of the tip frame in the base frame.
///
/// Column 0 of `rotation` is the image-facing direction, column 2 the catheter axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipPose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl TipPose {
    pub fn new(position: Vector3<f64>, rotation: Matrix3<f64>) -> Self {
        Self { position, rotation }
    }

    pub fn from_transform(t: &RigidTransform) -> Self {
        Self { position: t.translation, rotation: t.rotation }
    }

    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform::new(self.rotation, self.position)
    }

    pub fn image_direction(&self) -> Vector3<f64> {
        self.rotation.column(0).into_owned()
    }

    pub fn axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    /// Orthonormality and handedness of the rotation, within `tol`.
    pub fn rotation_is_valid(&self, tol: f64) -> bool {
        is_rotation(&self.rotation, tol)
    }
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let gram = r.transpose() * r - Matrix3::identity();
    gram.iter().all(|v| v.abs() <= tol) && (r.determinant() - 1.0).abs() <= tol
}

/// Rotation of `angle` degrees about the unit vector `axis`, right-hand rule.
pub fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Result<Matrix3<f64>> {
    let norm = axis.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE || !angle.is_finite() {
        return Err(Error::Domain(format!(
            "rotation axis must be a unit vector (|axis| = {norm}), angle finite ({angle})"
        )));
    }
    Ok(rodrigues_rad(axis, angle.to_radians()))
}

/// `R = I + sin(b) K + (1 - cos(b)) K^2` with `K` the cross-product matrix of `axis`.
pub(crate) fn rodrigues_rad(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis.cross_matrix();
    let (s, c) = angle.sin_cos();
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

pub(crate) fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub(crate) fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Geodesic angle between two rotations, degrees.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    let skew = Vector3::new(rel[(2, 1)] - rel[(1, 2)], rel[(0, 2)] - rel[(2, 0)], rel[(1, 0)] - rel[(0, 1)]);
    let cos = (rel.trace() - 1.0) / 2.0;
    (skew.norm() / 2.0).atan2(cos).to_degrees()
}

/// Wraps an angle in degrees into (-180, 180].
pub fn wrap_degrees(a: f64) -> f64 {
    let mut w = a.rem_euclid(360.0);
    if w > 180.0 {
        w -= 360.0;
    }
    w
}

/// Knob angles to arc parameters.
pub fn config_to_bend(q: &Config, p: &CatheterParams) -> BendParams {
    bend_from_knobs(q.phi1, q.phi2, p)
}

pub(crate) fn bend_from_knobs(phi1: f64, phi2: f64, p: &CatheterParams) -> BendParams {
    // L_ap = phi1 * r_knob, L_rl = phi2 * r_knob, alpha = |(L_ap, L_rl)| / r_catheter
    let alpha = p.knob_ratio() * phi1.hypot(phi2);
    let theta = phi2.atan2(phi1).to_degrees();
    let radius = if alpha > 0.0 { p.bend_length / alpha.to_radians() } else { f64::INFINITY };
    BendParams { theta, alpha, radius }
}

/// Unit direction `(cos theta, sin theta)` of the bending plane, taken from the
/// knob vector so that single-knob bends stay exactly in their plane.
pub(crate) fn bend_direction(phi1: f64, phi2: f64) -> (f64, f64) {
    let norm = phi1.hypot(phi2);
    if norm == 0.0 {
        (1.0, 0.0)
    } else {
        (phi1 / norm, phi2 / norm)
    }
}

/// Tip of the bending section relative to its base, for arc angle `alpha`
/// (radians) in the plane with direction `(ct, st)`. Uses
/// `(1 - cos a) / a = 2 sin^2(a/2) / a` so the straight limit is exact.
pub(crate) fn arc_tip(alpha: f64, (ct, st): (f64, f64), length: f64) -> (Vector3<f64>, Matrix3<f64>) {
    if alpha == 0.0 {
        return (Vector3::new(0.0, 0.0, length), Matrix3::identity());
    }
    let half = (alpha / 2.0).sin();
    let radial = length * 2.0 * half * half / alpha;
    let axial = length * alpha.sin() / alpha;
    let position = Vector3::new(radial * ct, radial * st, axial);
    let normal = Vector3::new(-st, ct, 0.0);
    (position, rodrigues_rad(&normal, alpha))
}


/// Composes `T_trans(d4) * T_roll(phi3) * tilt * T_US`.
pub(crate) fn compose_tip(tilt: &RigidTransform, q: &Config, p: &CatheterParams) -> TipPose {
    let base = RigidTransform::new(rot_z(q.phi3.to_radians()), Vector3::new(0.0, 0.0, q.d4));
    TipPose::from_transform(&base.compose(tilt).compose(&p.us_offset))
}

/// Forward kinematics.
pub fn forward(q: &Config, p: &CatheterParams) -> TipPose {
    let bend = config_to_bend(q, p);
    let (position, rotation) = arc_tip(bend.alpha.to_radians(), bend_direction(q.phi1, q.phi2), p.bend_length);
    compose_tip(&RigidTransform::new(rotation, position), q, p)
}

/// Closed-form inverse kinematics.
///
/// The arc angle comes from the tip axis, the world azimuth of the bending plane
/// from the tip position, and the split of that azimuth between roll and the
/// knob-plane angle from the remaining twist of the tip frame about its axis.
/// The result is checked by running it back through [`forward`].
pub fn inverse(pose: &TipPose, p: &CatheterParams) -> Result<Config> {
    p.validate()?;
    if !pose.position.iter().chain(pose.rotation.iter()).all(|v| v.is_finite()) {
        return Err(Error::Domain("pose contains non-finite values".into()));
    }
    if !pose.rotation_is_valid(1e-9) {
        return Err(Error::Domain("pose rotation is not a proper rotation".into()));
    }

    let bend_end = pose.to_transform().compose(&p.us_offset.inverse());
    let r = bend_end.rotation;
    let pos = bend_end.translation;

    // acos(n0_z . ntip_z), evaluated through atan2 for accuracy near the straight pose
    let axis_z = r.column(2);
    let alpha = axis_z.xy().norm().atan2(axis_z.z);

    let (theta, phi3) = if alpha == 0.0 {
        (0.0, r[(1, 0)].atan2(r[(0, 0)]))
    } else {
        let world_azimuth = pos.y.atan2(pos.x);
        let residual = rot_y(alpha).transpose() * rot_z(world_azimuth).transpose() * r;
        let theta = residual[(0, 1)].atan2(residual[(0, 0)]);
        (theta, world_azimuth - theta)
    };

    let knob_alpha = alpha.to_degrees() / p.knob_ratio();
    let axial = if alpha == 0.0 { p.bend_length } else { p.bend_length * alpha.sin() / alpha };
    let q = Config {
        phi1: knob_alpha * theta.cos(),
        phi2: knob_alpha * theta.sin(),
        phi3: wrap_degrees(phi3.to_degrees()),
        d4: pos.z - axial,
    };

    let reproduced = forward(&q, p);
    let position_mm = (reproduced.position - pose.position).norm();
    let rotation_rad = rotation_angle_between(&reproduced.rotation, &pose.rotation).to_radians();
    if position_mm > POSE_TOLERANCE || rotation_rad > POSE_TOLERANCE {
        return Err(Error::Unreachable { position_mm, rotation_rad });
    }
    q.validate(p.workspace_bound)?;
    Ok(q)
}
