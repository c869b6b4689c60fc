//! Synthetic ground-truth catheter.
//!
//! The plant bends differently from the ideal model: the arc angle is scaled by
//! a polynomial gain, the bending plane twists away from the commanded azimuth,
//! the knobs may act asymmetrically, and a curved access path pushes the tip
//! out of its bending plane. [`PlantModel::measure`] adds EM-tracker noise
//! from a seeded stream and is the only source of randomness in the crate.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{self, bend_direction, bend_from_knobs, compose_tip, Config, CatheterParams, RigidTransform, TipPose};

/// Arc angle at which the distortion polynomials are normalized, degrees.
pub const REFERENCE_ARC: f64 = 90.0;

/// Sum of the steep condition's arc angles; the curvature bias reaches its
/// configured magnitude there.
pub const STEEP_ARC_SUM: f64 = 85.0;

/// Non-linear elasticity of the bending section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistortionField {
    /// Coefficients `c_i` of `g(a) = sum c_i (a / 90°)^i`; the plant bends to `g(a) * a`.
    pub alpha_gain: Vec<f64>,
    /// Peak bending-plane deviation at a 90° arc, degrees: `A sin(2 theta) (a / 90°)`.
    pub twist_amplitude: f64,
    /// Twist is clamped to `±twist_bound` degrees.
    pub twist_bound: f64,
    /// Scale of the anterior-posterior and right-left knobs.
    pub asymmetry: (f64, f64),
}

impl Default for DistortionField {
    /// Gain `1 - 0.32 x (1 - x)` (8% softening at mid-range, exact at 90°) plus
    /// an 8° bending-plane twist.
    fn default() -> Self {
        Self { alpha_gain: vec![1.0, -0.32, 0.32], twist_amplitude: 8.0, twist_bound: 10.0, asymmetry: (1.0, 1.0) }
    }
}

impl DistortionField {
    pub fn identity() -> Self {
        Self { alpha_gain: vec![1.0], twist_amplitude: 0.0, twist_bound: 10.0, asymmetry: (1.0, 1.0) }
    }

    /// Constant gain, no twist: the plant bends to `gain * a`.
    pub fn pure_gain(gain: f64) -> Self {
        Self { alpha_gain: vec![gain], ..Self::identity() }
    }

    /// Linear softening `a (1 - s a / 90°)` with the default twist.
    pub fn linear_softening(softening: f64) -> Self {
        Self { alpha_gain: vec![1.0, -softening], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.alpha_gain.iter().all(|c| c.is_finite())
            && self.twist_amplitude.is_finite()
            && self.twist_bound.is_finite()
            && self.asymmetry.0.is_finite()
            && self.asymmetry.1.is_finite();
        if !finite || self.alpha_gain.is_empty() {
            return Err(Error::Domain("distortion coefficients must be finite and non-empty".into()));
        }
        if self.twist_bound < 0.0 {
            return Err(Error::Domain(format!("twist bound {} must be non-negative", self.twist_bound)));
        }
        Ok(())
    }

    pub fn gain(&self, alpha: f64) -> f64 {
        let x = alpha / REFERENCE_ARC;
        self.alpha_gain.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// Arc angle the plant actually reaches when the model predicts `alpha`.
    pub fn effective_alpha(&self, alpha: f64) -> f64 {
        (self.gain(alpha) * alpha).max(0.0)
    }

    /// Deviation of the real bending plane at azimuth `theta`, degrees.
    pub fn twist(&self, theta: f64, alpha: f64) -> f64 {
        let (s, c) = theta.to_radians().sin_cos();
        self.twist_along((c, s), alpha)
    }

    /// Same as [`twist`](Self::twist) for a unit plane direction; zero on the knob axes.
    fn twist_along(&self, (c, s): (f64, f64), alpha: f64) -> f64 {
        let raw = self.twist_amplitude * 2.0 * s * c * (alpha / REFERENCE_ARC);
        raw.clamp(-self.twist_bound, self.twist_bound)
    }
}

/// Shape of the vessel the catheter passes through before the bending section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureCondition {
    #[default]
    Straight,
    Moderate,
    Steep,
}

impl CurvatureCondition {
    pub const ALL: [CurvatureCondition; 3] =
        [CurvatureCondition::Straight, CurvatureCondition::Moderate, CurvatureCondition::Steep];

    /// The two access-path arc angles, degrees.
    pub fn arc_angles(&self) -> (f64, f64) {
        match self {
            CurvatureCondition::Straight => (0.0, 0.0),
            CurvatureCondition::Moderate => (30.0, 30.0),
            CurvatureCondition::Steep => (40.0, 45.0),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            CurvatureCondition::Straight => "straight",
            CurvatureCondition::Moderate => "moderate",
            CurvatureCondition::Steep => "steep",
        }
    }
}

impl std::str::FromStr for CurvatureCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(Self::Straight),
            "moderate" => Ok(Self::Moderate),
            "steep" => Ok(Self::Steep),
            other => Err(Error::Domain(format!("unknown curvature condition '{other}'"))),
        }
    }
}

/// Bias a curved access path adds at the tip, reached under the steep condition
/// at a 90° bend. The side load of the curved access path deflects the tip out
/// of its bending plane: an offset along the plane normal and a tilt about the
/// in-plane radial direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurvatureBias {
    pub position_mm: f64,
    pub orientation_deg: f64,
}

impl Default for CurvatureBias {
    fn default() -> Self {
        Self { position_mm: 1.5, orientation_deg: 4.0 }
    }
}

/// Standard deviations of the simulated EM tracker.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Per-axis position noise, mm.
    pub position_sd: f64,
    /// Angle of a random-axis rotation, degrees.
    pub orientation_sd: f64,
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel { position_sd: 0.0, orientation_sd: 0.0 };

    /// Noise whose 3-D position error has RMS `rms_mm`.
    pub fn from_rms(rms_mm: f64, orientation_sd: f64) -> Self {
        Self { position_sd: rms_mm / 3f64.sqrt(), orientation_sd }
    }
}

/// One tracker reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EMSample {
    pub config: Config,
    pub measured_pose: TipPose,
    pub timestamp: u64,
}

/// Ground-truth catheter plus its measurement stream.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub params: CatheterParams,
    pub distortion: DistortionField,
    pub curvature: CurvatureCondition,
    pub curvature_bias: CurvatureBias,
    pub noise: NoiseModel,
    seed: u64,
    rng: ChaCha8Rng,
    tick: u64,
}

impl PlantModel {
    pub fn new(
        params: CatheterParams,
        distortion: DistortionField,
        curvature: CurvatureCondition,
        noise: NoiseModel,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        distortion.validate()?;
        if !(noise.position_sd >= 0.0 && noise.orientation_sd >= 0.0) {
            return Err(Error::Domain(format!("noise standard deviations must be non-negative: {noise:?}")));
        }
        Ok(Self {
            params,
            distortion,
            curvature,
            curvature_bias: CurvatureBias::default(),
            noise,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tick: 0,
        })
    }

    /// Undistorted, noiseless plant: behaves exactly like the model.
    pub fn ideal(params: CatheterParams) -> Self {
        Self::new(params, DistortionField::identity(), CurvatureCondition::Straight, NoiseModel::NONE, 0)
            .expect("default parameters are valid")
    }

    /// Default distortion, straight access, no noise.
    pub fn with_distortion(params: CatheterParams, distortion: DistortionField) -> Result<Self> {
        Self::new(params, distortion, CurvatureCondition::Straight, NoiseModel::NONE, 0)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Rewinds the measurement stream to its seed.
    pub fn reset_stream(&mut self) {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.tick = 0;
    }

    pub fn with_curvature(mut self, curvature: CurvatureCondition) -> Self {
        self.curvature = curvature;
        self
    }

    pub fn with_noise(mut self, noise: NoiseModel, seed: u64) -> Self {
        self.noise = noise;
        self.seed = seed;
        self.reset_stream();
        self
    }

    /// Fraction of the configured curvature bias active under the current condition.
    fn curvature_scale(&self) -> f64 {
        let (a, b) = self.curvature.arc_angles();
        (a + b) / STEEP_ARC_SUM
    }

    /// Noiseless pose of the real tip for command `q`.
    pub fn plant_forward(&self, q: &Config) -> Result<TipPose> {
        q.validate(self.params.workspace_bound)?;
        let d = &self.distortion;
        let (k1, k2) = (q.phi1 * d.asymmetry.0, q.phi2 * d.asymmetry.1);
        let bend = bend_from_knobs(k1, k2, &self.params);
        let alpha = d.effective_alpha(bend.alpha);
        let (c, s) = bend_direction(k1, k2);
        let (sd, cd) = d.twist_along((c, s), bend.alpha).to_radians().sin_cos();
        let (ct, st) = (c * cd - s * sd, s * cd + c * sd);

        let (mut position, mut rotation) =
            kinematics::arc_tip(alpha.to_radians(), (ct, st), self.params.bend_length);

        let bias = self.curvature_scale() * alpha / REFERENCE_ARC;
        if bias > 0.0 {
            position += Vector3::new(-st, ct, 0.0) * (self.curvature_bias.position_mm * bias);
            let radial = Vector3::new(ct, st, 0.0);
            let tilt = kinematics::rodrigues_rad(&radial, (self.curvature_bias.orientation_deg * bias).to_radians());
            rotation = tilt * rotation;
        }

        Ok(compose_tip(&RigidTransform::new(rotation, position), q, &self.params))
    }

    /// Noisy tracker reading; advances the stream by one tick.
    pub fn measure(&mut self, q: &Config) -> Result<EMSample> {
        let truth = self.plant_forward(q)?;
        let n: [f64; 7] = std::array::from_fn(|_| self.rng.sample::<f64, _>(StandardNormal));
        let timestamp = self.tick;
        self.tick += 1;

        let mut pose = truth;
        if self.noise.position_sd > 0.0 {
            pose.position += Vector3::new(n[0], n[1], n[2]) * self.noise.position_sd;
        }
        if self.noise.orientation_sd > 0.0 {
            let axis = Vector3::new(n[3], n[4], n[5]);
            let norm = axis.norm();
            if norm > 0.0 {
                let noise = kinematics::rodrigues_rad(&(axis / norm), (n[6] * self.noise.orientation_sd).to_radians());
                pose.rotation = orthonormalize(&(noise * pose.rotation));
            }
        }
        Ok(EMSample { config: *q, measured_pose: pose, timestamp })
    }
}

/// Re-orthonormalizes a rotation matrix polluted by rounding (Gram-Schmidt on columns).
fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let x = r.column(0).normalize();
    let y = (r.column(1) - x * x.dot(&r.column(1))).normalize();
    let z = x.cross(&y);
    Matrix3::from_columns(&[x, y, z])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::forward;
    use approx::assert_abs_diff_eq;

    fn params() -> CatheterParams {
        CatheterParams::default()
    }

    fn grid() -> impl Iterator<Item = Config> {
        (-9..=9).flat_map(|i| (-9..=9).map(move |j| Config::new(i as f64 * 10.0, j as f64 * 10.0, 15.0, 2.0)))
    }

    #[test]
    fn straight_pose_is_fixed_point() {
        let distortions = [
            DistortionField::default(),
            DistortionField::linear_softening(0.15),
            DistortionField::pure_gain(0.7),
            DistortionField { asymmetry: (0.8, 1.3), ..DistortionField::default() },
        ];
        for d in distortions {
            for c in CurvatureCondition::ALL {
                let plant = PlantModel::with_distortion(params(), d.clone()).unwrap().with_curvature(c);
                for roll in [0.0, 33.0] {
                    let q = Config::new(0.0, 0.0, roll, 4.0);
                    assert_eq!(plant.plant_forward(&q).unwrap(), forward(&q, &params()));
                }
            }
        }
    }

    #[test]
    fn identity_distortion_matches_model() {
        let plant = PlantModel::ideal(params());
        for q in grid() {
            assert_eq!(plant.plant_forward(&q).unwrap(), forward(&q, &params()));
        }
    }

    #[test]
    fn pure_gain_equals_reduced_command() {
        let plant = PlantModel::with_distortion(params(), DistortionField::pure_gain(0.9)).unwrap();
        let real = plant.plant_forward(&Config::new(90.0, 0.0, 0.0, 0.0)).unwrap();
        let model = forward(&Config::new(81.0, 0.0, 0.0, 0.0), &params());
        assert_abs_diff_eq!(real.position, model.position, epsilon = 1e-12);
        assert_abs_diff_eq!(real.rotation, model.rotation, epsilon = 1e-12);
    }

    #[test]
    fn default_gain_is_exact_at_reference_arc() {
        let d = DistortionField::default();
        assert_abs_diff_eq!(d.effective_alpha(90.0), 90.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.gain(45.0), 0.92, epsilon = 1e-12);
        let soft = DistortionField::linear_softening(0.15);
        assert_abs_diff_eq!(soft.effective_alpha(90.0), 76.5, epsilon = 1e-12);
    }

    #[test]
    fn twist_is_bounded() {
        let d = DistortionField { twist_amplitude: 30.0, twist_bound: 10.0, ..DistortionField::default() };
        for t in 0..360 {
            assert!(d.twist(t as f64, 90.0).abs() <= 10.0);
        }
    }

    #[test]
    fn plant_poses_are_valid_rotations() {
        let plant = PlantModel::with_distortion(params(), DistortionField::default())
            .unwrap()
            .with_curvature(CurvatureCondition::Steep);
        for q in grid() {
            assert!(plant.plant_forward(&q).unwrap().rotation_is_valid(1e-9));
        }
    }

    #[test]
    fn curvature_degrades_monotonically() {
        let rmse = |c: CurvatureCondition| {
            let plant = PlantModel::with_distortion(params(), DistortionField::default()).unwrap().with_curvature(c);
            let (sum, n) = grid().fold((0.0, 0usize), |(s, n), q| {
                let e = (plant.plant_forward(&q).unwrap().position - forward(&q, &params()).position).norm();
                (s + e * e, n + 1)
            });
            (sum / n as f64).sqrt()
        };
        let (a, b, c) =
            (rmse(CurvatureCondition::Straight), rmse(CurvatureCondition::Moderate), rmse(CurvatureCondition::Steep));
        assert!(a < b && b < c, "{a} {b} {c}");
    }

    #[test]
    fn zero_noise_measurement_is_exact() {
        let mut plant = PlantModel::with_distortion(params(), DistortionField::default()).unwrap();
        let q = Config::new(30.0, -20.0, 5.0, 1.0);
        let s = plant.measure(&q).unwrap();
        assert_eq!(s.measured_pose, plant.plant_forward(&q).unwrap());
        assert_eq!(s.timestamp, 0);
        assert_eq!(plant.measure(&q).unwrap().timestamp, 1);
    }

    #[test]
    fn measurement_stream_is_deterministic() {
        let noise = NoiseModel { position_sd: 1.0, orientation_sd: 0.5 };
        let make = || PlantModel::new(params(), DistortionField::default(), CurvatureCondition::Moderate, noise, 42);
        let (mut a, mut b) = (make().unwrap(), make().unwrap());
        assert_eq!(a, b);
        for q in grid().take(50) {
            assert_eq!(a.measure(&q).unwrap(), b.measure(&q).unwrap());
        }
        let mut c = a.clone();
        c.reset_stream();
        b.reset_stream();
        assert_eq!(c.measure(&Config::STRAIGHT).unwrap(), b.measure(&Config::STRAIGHT).unwrap());
    }

    #[test]
    fn position_noise_has_requested_spread() {
        let noise = NoiseModel { position_sd: 1.0, orientation_sd: 0.0 };
        let mut plant =
            PlantModel::new(params(), DistortionField::default(), CurvatureCondition::Straight, noise, 11).unwrap();
        let q = Config::new(20.0, 10.0, 0.0, 0.0);
        let truth = plant.plant_forward(&q).unwrap().position;
        let n = 10_000;
        let samples: Vec<Vector3<f64>> = (0..n).map(|_| plant.measure(&q).unwrap().measured_pose.position - truth).collect();
        for axis in 0..3 {
            let mean = samples.iter().map(|s| s[axis]).sum::<f64>() / n as f64;
            let var = samples.iter().map(|s| (s[axis] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            assert!((0.97..=1.03).contains(&sd), "axis {axis}: sd {sd}");
        }
    }

    #[test]
    fn orientation_noise_keeps_rotation_valid() {
        let noise = NoiseModel { position_sd: 0.0, orientation_sd: 2.0 };
        let mut plant =
            PlantModel::new(params(), DistortionField::default(), CurvatureCondition::Straight, noise, 3).unwrap();
        for q in grid().take(100) {
            assert!(plant.measure(&q).unwrap().measured_pose.rotation_is_valid(1e-9));
        }
    }

    #[test]
    fn rejects_out_of_workspace_and_negative_noise() {
        let plant = PlantModel::ideal(params());
        assert!(plant.plant_forward(&Config::new(95.0, 0.0, 0.0, 0.0)).is_err());
        let bad = NoiseModel { position_sd: -1.0, orientation_sd: 0.0 };
        assert!(PlantModel::new(params(), DistortionField::identity(), CurvatureCondition::Straight, bad, 0).is_err());
    }
}
