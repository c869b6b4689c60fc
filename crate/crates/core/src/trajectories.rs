//! Image-spinning trajectories and the validation metrics.
//!
//! A spin revolves the imaging plane about the catheter axis while the tip stays
//! put: the knobs trace a circle of constant norm, so the arc angle is fixed and
//! the bending plane turns with `psi`, while the bulk roll turns back by `psi`.

use nalgebra::{Matrix3, Vector3};

use crate::compensation::smoothing::{smooth, DEFAULT_ORDER, DEFAULT_WINDOW};
use crate::compensation::ElasticityMap;
use crate::error::{Error, Result};
use crate::kinematics::{rot_z, rotation_angle_between, CatheterParams, Config, TipPose};
use crate::plant::PlantModel;

/// Largest per-step change on either knob channel, degrees.
pub const DEFAULT_RATE_LIMIT: f64 = 5.0;

/// Seconds per step at the 50 Hz control rate.
pub const DEFAULT_DT: f64 = 0.02;

pub const MIN_STEPS: usize = 8;

#[derive(Debug, Clone, Copy)]
pub struct SpinSpec<'a> {
    /// Starting knob angles `(phi1, phi2)`, degrees.
    pub initial: (f64, f64),
    /// Starting bulk roll, degrees.
    pub roll: f64,
    /// Axial translation held through the spin, mm.
    pub translation: f64,
    /// Total image rotation, degrees.
    pub sweep: f64,
    pub step_count: usize,
    pub compensation: Option<&'a ElasticityMap>,
    pub rate_limit: f64,
    pub dt: f64,
}

impl<'a> SpinSpec<'a> {
    /// Full turn in `step_count` steps from `initial`, uncompensated.
    pub fn new(initial: (f64, f64), step_count: usize) -> Self {
        Self {
            initial,
            roll: 0.0,
            translation: 0.0,
            sweep: 360.0,
            step_count,
            compensation: None,
            rate_limit: DEFAULT_RATE_LIMIT,
            dt: DEFAULT_DT,
        }
    }

    pub fn compensated(mut self, map: &'a ElasticityMap) -> Self {
        self.compensation = Some(map);
        self
    }

    pub fn amplitude(&self) -> f64 {
        self.initial.0.hypot(self.initial.1)
    }

    pub fn validate(&self, p: &CatheterParams) -> Result<()> {
        let finite = [self.initial.0, self.initial.1, self.roll, self.translation, self.sweep, self.dt];
        if !finite.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!("non-finite spin parameters {self:?}")));
        }
        if self.amplitude() > p.workspace_bound {
            return Err(Error::Domain(format!(
                "initial bend norm {:.3}° exceeds the workspace ±{}°",
                self.amplitude(),
                p.workspace_bound
            )));
        }
        if self.step_count < MIN_STEPS {
            return Err(Error::Domain(format!("spin needs at least {MIN_STEPS} steps, got {}", self.step_count)));
        }
        if !(self.rate_limit > 0.0) || !(self.dt > 0.0) {
            return Err(Error::Domain("rate limit and dt must be positive".into()));
        }
        Ok(())
    }
}

/// Time-ordered joint commands.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Config>,
    /// Commanded image rotation at each step, degrees.
    pub spin: Vec<f64>,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Largest per-step change on either knob channel.
    pub fn max_knob_step(&self) -> f64 {
        self.steps
            .windows(2)
            .map(|w| (w[1].phi1 - w[0].phi1).abs().max((w[1].phi2 - w[0].phi2).abs()))
            .fold(0.0, f64::max)
    }

    pub fn validate(&self, rate_limit: f64, workspace_bound: f64) -> Result<()> {
        if self.spin.len() != self.steps.len() {
            return Err(Error::Trajectory("spin angles and steps differ in length".into()));
        }
        for q in &self.steps {
            q.validate(workspace_bound).map_err(|e| Error::Trajectory(e.to_string()))?;
        }
        for (k, w) in self.steps.windows(2).enumerate() {
            let jump = (w[1].phi1 - w[0].phi1).abs().max((w[1].phi2 - w[0].phi2).abs());
            if jump > rate_limit {
                return Err(Error::Trajectory(format!(
                    "knob step {k}->{} of {jump:.3}° exceeds the rate limit {rate_limit}°",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// Builds the spin. With compensation each knob pair goes through the map and
/// the result is smoothed before the rate limit is checked.
pub fn spin_trajectory(spec: &SpinSpec<'_>, p: &CatheterParams) -> Result<Trajectory> {
    spec.validate(p)?;
    let amplitude = spec.amplitude();
    let psi0 = spec.initial.1.atan2(spec.initial.0);
    let n = spec.step_count;

    let spin: Vec<f64> = (0..=n).map(|k| k as f64 * spec.sweep / n as f64).collect();
    let mut steps: Vec<Config> = spin
        .iter()
        .map(|&psi| {
            let (s, c) = (psi.to_radians() + psi0).sin_cos();
            Config::new(amplitude * c, amplitude * s, spec.roll - psi, spec.translation)
        })
        .collect();

    if let Some(map) = spec.compensation {
        steps = steps.iter().map(|q| map.apply_config(q)).collect::<Result<_>>()?;
        steps = smooth(&steps, DEFAULT_WINDOW, DEFAULT_ORDER)?;
        for q in &mut steps {
            q.phi1 = q.phi1.clamp(-p.workspace_bound, p.workspace_bound);
            q.phi2 = q.phi2.clamp(-p.workspace_bound, p.workspace_bound);
        }
    }

    let traj = Trajectory { steps, spin, dt: spec.dt };
    traj.validate(spec.rate_limit, p.workspace_bound)?;
    Ok(traj)
}

/// Per-step and aggregate errors of one executed trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    /// mm
    pub position_rmse: f64,
    /// degrees
    pub orientation_rmse: f64,
    pub position_errors: Vec<f64>,
    pub orientation_errors: Vec<f64>,
    pub measured: Vec<TipPose>,
}

pub fn rmse(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

impl RunMetrics {
    pub fn max_position_error(&self) -> f64 {
        self.position_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Reference orientation at spin angle `psi`: the image plane turned by `-psi` about the tip axis.
pub fn spun_reference(reference: &Matrix3<f64>, psi: f64) -> Matrix3<f64> {
    reference * rot_z(-psi.to_radians())
}

/// Executes `traj` through the plant's tracker and scores it against `reference`.
pub fn run_and_score(traj: &Trajectory, plant: &mut PlantModel, reference: &TipPose) -> Result<RunMetrics> {
    let mut position_errors = Vec::with_capacity(traj.len());
    let mut orientation_errors = Vec::with_capacity(traj.len());
    let mut measured = Vec::with_capacity(traj.len());
    for (q, &psi) in traj.steps.iter().zip(&traj.spin) {
        let pose = plant.measure(q)?.measured_pose;
        position_errors.push((pose.position - reference.position).norm());
        orientation_errors.push(rotation_angle_between(&pose.rotation, &spun_reference(&reference.rotation, psi)));
        measured.push(pose);
    }
    Ok(RunMetrics {
        position_rmse: rmse(&position_errors),
        orientation_rmse: rmse(&orientation_errors),
        position_errors,
        orientation_errors,
        measured,
    })
}

/// Spread of repeated tip positions about their geometric median.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadReport {
    /// Index of the sample minimizing the summed distance to all others.
    pub median_index: usize,
    pub median: Vector3<f64>,
    /// Distance of every sample to the median, mm.
    pub distances: Vec<f64>,
    /// Mean distance of the other samples, mm.
    pub mean: f64,
    /// Sample standard deviation of those distances, mm.
    pub sd: f64,
}

pub fn repeat_spread(poses: &[TipPose]) -> Result<SpreadReport> {
    if poses.len() < 2 {
        return Err(Error::Domain(format!("spread needs at least 2 poses, got {}", poses.len())));
    }
    let total = |i: usize| poses.iter().map(|p| (p.position - poses[i].position).norm()).sum::<f64>();
    let mut median_index = 0;
    let mut best = total(0);
    for i in 1..poses.len() {
        let t = total(i);
        if t < best {
            best = t;
            median_index = i;
        }
    }
    let median = poses[median_index].position;
    let distances: Vec<f64> = poses.iter().map(|p| (p.position - median).norm()).collect();
    let others: Vec<f64> =
        distances.iter().enumerate().filter(|&(i, _)| i != median_index).map(|(_, d)| *d).collect();
    let mean = others.iter().sum::<f64>() / others.len() as f64;
    let sd = if others.len() > 1 {
        (others.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (others.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(SpreadReport { median_index, median, distances, mean, sd })
}
