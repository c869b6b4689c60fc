//! Data-driven correction of the knob angles for non-linear elasticity.
//!
//! Calibration samples relate commanded knob angles to measured tip positions.
//! Three interpolants turn the samples into a continuous estimate of the real
//! tip position over the whole workspace. For every node of the workspace grid
//! the model position is then registered to the nearest real position, which
//! yields the knob pair `F(phi1, phi2)` that makes the real catheter land where
//! the model expects it.

pub mod interp;
pub mod smoothing;

use std::fmt;

use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{self, CatheterParams, Config};
use crate::plant::PlantModel;

pub use interp::{BicubicSpline, CubicSpline, Surface, ThinPlateSpline};
pub use smoothing::{savitzky_golay, smooth};

/// Default spacing of the correction table, degrees.
pub const DEFAULT_RESOLUTION: f64 = 1.0;

/// Target accuracy of the five-point search on `(x_tip, y_tip)`, mm.
pub const FIVE_POINT_TOLERANCE: f64 = 0.5;

const GRID_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    pub commanded: (f64, f64),
    pub measured_tip: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationSource {
    DenseGrid,
    FivePoint,
}

impl fmt::Display for CalibrationSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CalibrationSource::DenseGrid => "dense_grid",
            CalibrationSource::FivePoint => "five_point",
        })
    }
}

impl std::str::FromStr for CalibrationSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense_grid" | "dense" => Ok(Self::DenseGrid),
            "five_point" | "five-point" => Ok(Self::FivePoint),
            other => Err(Error::Format(format!("unknown calibration source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    samples: Vec<CalibrationSample>,
    source: CalibrationSource,
    workspace: f64,
}

impl CalibrationSet {
    pub fn new(samples: Vec<CalibrationSample>, source: CalibrationSource, workspace: f64) -> Result<Self> {
        let set = Self { samples, source, workspace };
        set.validate()?;
        Ok(set)
    }

    pub fn samples(&self) -> &[CalibrationSample] {
        &self.samples
    }

    pub fn source(&self) -> CalibrationSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn validate(&self) -> Result<()> {
        for s in &self.samples {
            let (a, b) = s.commanded;
            if !(a.is_finite() && b.is_finite()) || a.abs() > self.workspace + GRID_EPS || b.abs() > self.workspace + GRID_EPS
            {
                return Err(Error::Domain(format!("sample ({a}, {b}) outside workspace ±{}", self.workspace)));
            }
            if !s.measured_tip.iter().all(|v| v.is_finite()) {
                return Err(Error::Domain("sample position is not finite".into()));
            }
        }
        let mut pairs: Vec<(f64, f64)> = self.samples.iter().map(|s| s.commanded).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        if pairs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain("duplicate commanded pairs in calibration set".into()));
        }
        match self.source {
            CalibrationSource::FivePoint if self.samples.len() != 5 => {
                Err(Error::Domain(format!("five-point set has {} samples", self.samples.len())))
            }
            CalibrationSource::DenseGrid => {
                let (xs, ys) = self.grid_axes();
                if xs.len() < 3 || ys.len() < 3 || xs.len() * ys.len() != self.samples.len() {
                    return Err(Error::Domain(format!(
                        "dense grid needs a complete raster of at least 3x3 nodes, got {} samples on {}x{} axes",
                        self.samples.len(),
                        xs.len(),
                        ys.len()
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn grid_axes(&self) -> (Vec<f64>, Vec<f64>) {
        let axis = |f: fn(&CalibrationSample) -> f64| {
            let mut v: Vec<f64> = self.samples.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        (axis(|s| s.commanded.0), axis(|s| s.commanded.1))
    }
}

/// Nodes `-bound, -bound + spacing, ..., bound`; `spacing` must divide `bound`.
pub fn grid_nodes(bound: f64, spacing: f64) -> Result<Vec<f64>> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::Domain(format!("grid spacing {spacing} must be positive")));
    }
    let steps = bound / spacing;
    if (steps - steps.round()).abs() > GRID_EPS * steps.max(1.0) {
        return Err(Error::Domain(format!("spacing {spacing}° does not divide the workspace ±{bound}°")));
    }
    let steps = steps.round() as usize;
    Ok((0..=2 * steps).map(|i| -bound + i as f64 * spacing).collect())
}

/// Rasters the knobs over the workspace and records the plant's noiseless tip positions.
pub fn collect_grid(plant: &PlantModel, spacing: f64) -> Result<CalibrationSet> {
    let bound = plant.params.workspace_bound;
    let nodes = grid_nodes(bound, spacing)?;
    let mut samples = Vec::with_capacity(nodes.len() * nodes.len());
    for &a in &nodes {
        for &b in &nodes {
            let pose = plant.plant_forward(&Config::new(a, b, 0.0, 0.0))?;
            samples.push(CalibrationSample { commanded: (a, b), measured_tip: pose.position });
        }
    }
    CalibrationSet::new(samples, CalibrationSource::DenseGrid, bound)
}

/// A five-point target: the straight pose or a 90° bend in one knob plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FivePointTarget {
    pub name: &'static str,
    pub xy: Vector2<f64>,
    pub initial: (f64, f64),
}

pub fn five_point_targets(p: &CatheterParams) -> [FivePointTarget; 5] {
    let reach = p.bend_length / std::f64::consts::FRAC_PI_2;
    let knob = (90.0 / p.knob_ratio()).min(p.workspace_bound);
    [
        FivePointTarget { name: "straight", xy: Vector2::new(0.0, 0.0), initial: (0.0, 0.0) },
        FivePointTarget { name: "anterior 90°", xy: Vector2::new(reach, 0.0), initial: (knob, 0.0) },
        FivePointTarget { name: "posterior 90°", xy: Vector2::new(-reach, 0.0), initial: (-knob, 0.0) },
        FivePointTarget { name: "right 90°", xy: Vector2::new(0.0, reach), initial: (0.0, knob) },
        FivePointTarget { name: "left 90°", xy: Vector2::new(0.0, -reach), initial: (0.0, -knob) },
    ]
}

/// Projected Gauss-Newton search for the knob pair whose real tip lands on `target`.
fn steer_to(plant: &PlantModel, target: &FivePointTarget) -> Result<((f64, f64), Vector3<f64>, f64)> {
    let bound = plant.params.workspace_bound;
    let clamp = |v: Vector2<f64>| Vector2::new(v.x.clamp(-bound, bound), v.y.clamp(-bound, bound));
    let tip = |k: &Vector2<f64>| plant.plant_forward(&Config::new(k.x, k.y, 0.0, 0.0)).map(|p| p.position);
    let residual = |pos: &Vector3<f64>| pos.xy() - target.xy;

    let mut knobs = Vector2::new(target.initial.0, target.initial.1);
    let mut pos = tip(&knobs)?;
    let mut err = residual(&pos).norm();
    for _ in 0..100 {
        if err < 1e-9 {
            break;
        }
        let h = 1e-4;
        let mut jac = Matrix2::zeros();
        for c in 0..2 {
            let mut probe = knobs;
            probe[c] += if probe[c] + h > bound { -h } else { h };
            let step = probe[c] - knobs[c];
            let d = (tip(&probe)?.xy() - pos.xy()) / step;
            jac.set_column(c, &d);
        }
        let Some(inv) = jac.try_inverse() else { break };
        let delta = -(inv * residual(&pos));
        let mut scale = 1.0;
        let mut improved = false;
        while scale > 1e-6 {
            let cand = clamp(knobs + delta * scale);
            let cand_pos = tip(&cand)?;
            let cand_err = residual(&cand_pos).norm();
            if cand_err < err {
                knobs = cand;
                pos = cand_pos;
                err = cand_err;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(((knobs.x, knobs.y), pos, err))
}

/// Finds the straight pose and the four 90° bends on the plant, the way an
/// operator would steer to them by eye.
pub fn collect_five_point(plant: &PlantModel) -> Result<CalibrationSet> {
    let mut samples = Vec::with_capacity(5);
    let mut unreached = Vec::new();
    for target in five_point_targets(&plant.params) {
        let (commanded, measured_tip, err) = steer_to(plant, &target)?;
        if err > FIVE_POINT_TOLERANCE {
            unreached.push(format!("{} (off by {err:.2} mm)", target.name));
        } else {
            samples.push(CalibrationSample { commanded, measured_tip });
        }
    }
    if !unreached.is_empty() {
        return Err(Error::Calibration { unreached });
    }
    CalibrationSet::new(samples, CalibrationSource::FivePoint, plant.params.workspace_bound)
}

/// Estimated real tip position as a function of the commanded knobs.
pub struct RealGeometry {
    surfaces: [Box<dyn Surface>; 3],
    dense: Option<[BicubicSpline; 3]>,
}

impl fmt::Debug for RealGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RealGeometry").field("gridded", &self.dense.is_some()).finish()
    }
}

impl RealGeometry {
    /// Bicubic splines for a dense raster, thin-plate splines otherwise.
    pub fn fit(set: &CalibrationSet) -> Result<Self> {
        let points: Vec<(f64, f64)> = set.samples.iter().map(|s| s.commanded).collect();
        if points.len() < 3 || !interp::spans_plane(&points) {
            return Err(Error::Fit(format!("need >= 3 non-collinear samples, got {}", points.len())));
        }
        match set.source {
            CalibrationSource::DenseGrid => {
                let (xs, ys) = set.grid_axes();
                if xs.len() < 4 || ys.len() < 4 {
                    return Err(Error::Fit(format!("bicubic fit needs at least 4x4 grid nodes, got {}x{}", xs.len(), ys.len())));
                }
                let mut values = [vec![0.0; xs.len() * ys.len()], vec![0.0; xs.len() * ys.len()], vec![0.0; xs.len() * ys.len()]];
                for s in &set.samples {
                    let i = xs.partition_point(|&v| v < s.commanded.0);
                    let j = ys.partition_point(|&v| v < s.commanded.1);
                    for c in 0..3 {
                        values[c][i * ys.len() + j] = s.measured_tip[c];
                    }
                }
                let splines: Vec<BicubicSpline> = values
                    .iter()
                    .map(|v| BicubicSpline::new(xs.clone(), ys.clone(), v))
                    .collect::<Result<_>>()?;
                let [a, b, c]: [BicubicSpline; 3] = splines.try_into().expect("three channels");
                Ok(Self {
                    surfaces: [Box::new(a.clone()), Box::new(b.clone()), Box::new(c.clone())],
                    dense: Some([a, b, c]),
                })
            }
            CalibrationSource::FivePoint => {
                let scale = set.workspace.max(1.0);
                let channel = |c: usize| -> Result<Box<dyn Surface>> {
                    let v: Vec<f64> = set.samples.iter().map(|s| s.measured_tip[c]).collect();
                    Ok(Box::new(ThinPlateSpline::new(&points, &v, scale)?))
                };
                Ok(Self { surfaces: [channel(0)?, channel(1)?, channel(2)?], dense: None })
            }
        }
    }

    pub fn position(&self, phi1: f64, phi2: f64) -> Vector3<f64> {
        Vector3::new(self.surfaces[0].eval(phi1, phi2), self.surfaces[1].eval(phi1, phi2), self.surfaces[2].eval(phi1, phi2))
    }

    /// Positions at every node of `nodes × nodes`, row-major in `phi1`.
    fn on_grid(&self, nodes: &[f64]) -> Vec<Vector3<f64>> {
        match &self.dense {
            Some(splines) => {
                let [x, y, z] = [0, 1, 2].map(|c| splines[c].eval_grid(nodes, nodes));
                (0..x.len()).map(|k| Vector3::new(x[k], y[k], z[k])).collect()
            }
            None => nodes
                .par_iter()
                .flat_map_iter(|&a| nodes.iter().map(move |&b| (a, b)))
                .map(|(a, b)| self.position(a, b))
                .collect(),
        }
    }
}

/// Correction table `F: (phi1, phi2) -> (phi1', phi2')` over the workspace grid.
#[derive(Debug)]
pub struct ElasticityMap {
    workspace: f64,
    resolution: f64,
    nodes: usize,
    source: CalibrationSource,
    corrected: Vec<(f64, f64)>,
    geometry: Option<RealGeometry>,
}

impl PartialEq for ElasticityMap {
    fn eq(&self, other: &Self) -> bool {
        self.workspace.to_bits() == other.workspace.to_bits()
            && self.resolution.to_bits() == other.resolution.to_bits()
            && self.source == other.source
            && self.corrected.len() == other.corrected.len()
            && self
                .corrected
                .iter()
                .zip(&other.corrected)
                .all(|(a, b)| a.0.to_bits() == b.0.to_bits() && a.1.to_bits() == b.1.to_bits())
    }
}

impl ElasticityMap {
    /// Builds a map from a raw table, row-major in `phi1`.
    pub fn from_table(
        workspace: f64,
        resolution: f64,
        source: CalibrationSource,
        corrected: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let nodes = grid_nodes(workspace, resolution)?.len();
        if corrected.len() != nodes * nodes {
            return Err(Error::Format(format!(
                "table has {} entries, expected {} for ±{workspace}° at {resolution}°",
                corrected.len(),
                nodes * nodes
            )));
        }
        if corrected.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::Format("table contains non-finite entries".into()));
        }
        Ok(Self { workspace, resolution, nodes, source, corrected, geometry: None })
    }

    /// Map that leaves every command unchanged.
    pub fn identity(workspace: f64, resolution: f64) -> Result<Self> {
        let axis = grid_nodes(workspace, resolution)?;
        let table = axis.iter().flat_map(|&a| axis.iter().map(move |&b| (a, b))).collect();
        Self::from_table(workspace, resolution, CalibrationSource::DenseGrid, table)
    }

    pub fn workspace(&self) -> f64 {
        self.workspace
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn source(&self) -> CalibrationSource {
        self.source
    }

    /// Number of grid nodes along each knob axis.
    pub fn nodes_per_axis(&self) -> usize {
        self.nodes
    }

    pub fn table(&self) -> &[(f64, f64)] {
        &self.corrected
    }

    /// Fitted real-geometry interpolants, present on freshly built maps.
    pub fn geometry(&self) -> Option<&RealGeometry> {
        self.geometry.as_ref()
    }

    pub fn node(&self, i: usize) -> (f64, f64) {
        let (a, b) = (i / self.nodes, i % self.nodes);
        (-self.workspace + a as f64 * self.resolution, -self.workspace + b as f64 * self.resolution)
    }

    /// Corrected knob pair at `(phi1, phi2)`, bilinear between grid nodes.
    pub fn apply(&self, phi1: f64, phi2: f64) -> Result<(f64, f64)> {
        let w = self.workspace;
        if !(phi1.abs() <= w + GRID_EPS && phi2.abs() <= w + GRID_EPS) {
            return Err(Error::Domain(format!("query ({phi1}, {phi2}) outside workspace ±{w}°")));
        }
        let cell = |v: f64| {
            let u = ((v + w) / self.resolution).clamp(0.0, (self.nodes - 1) as f64);
            let i = (u.floor() as usize).min(self.nodes - 2);
            (i, u - i as f64)
        };
        let (i, t) = cell(phi1);
        let (j, s) = cell(phi2);
        let at = |a: usize, b: usize| self.corrected[a * self.nodes + b];
        let (v00, v10, v01, v11) = (at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1));
        let blend = |f: fn((f64, f64)) -> f64| {
            (1.0 - t) * (1.0 - s) * f(v00) + t * (1.0 - s) * f(v10) + (1.0 - t) * s * f(v01) + t * s * f(v11)
        };
        Ok((blend(|v| v.0), blend(|v| v.1)))
    }

    /// Applies the correction to the knobs of a configuration.
    pub fn apply_config(&self, q: &Config) -> Result<Config> {
        let (a, b) = self.apply(q.phi1, q.phi2)?;
        Ok(Config { phi1: a, phi2: b, ..*q })
    }

    /// Largest per-node distance from the identity map, degrees.
    pub fn max_identity_deviation(&self) -> f64 {
        (0..self.corrected.len())
            .map(|k| {
                let (a, b) = self.node(k);
                let (c, d) = self.corrected[k];
                (a - c).abs().max((b - d).abs())
            })
            .fold(0.0, f64::max)
    }

    /// True when no two grid nodes share a corrected pair.
    pub fn is_injective(&self) -> bool {
        let mut sorted: Vec<(u64, u64)> = self.corrected.iter().map(|(a, b)| (a.to_bits(), b.to_bits())).collect();
        sorted.sort_unstable();
        sorted.windows(2).all(|w| w[0] != w[1])
    }

    /// Largest change of the corrected pair between neighbouring nodes, degrees.
    pub fn max_node_jump(&self) -> f64 {
        let n = self.nodes;
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                let here = self.corrected[a * n + b];
                for (da, db) in [(1, 0), (0, 1)] {
                    if a + da < n && b + db < n {
                        let there = self.corrected[(a + da) * n + b + db];
                        worst = worst.max((here.0 - there.0).abs().max((here.1 - there.1).abs()));
                    }
                }
            }
        }
        worst
    }
}

/// Registers the real geometry to the model geometry on the full workspace grid.
///
/// Step four is a brute-force nearest-neighbour search over all candidate real
/// positions (grid nodes plus the raw samples), O(N^2) in the node count, with
/// ties resolved toward the lexicographically smallest knob pair. The winning
/// node is then polished by a few Gauss-Newton steps on the interpolants so the
/// table is not quantized to its own resolution.
pub fn build_map(set: &CalibrationSet, p: &CatheterParams, resolution: f64) -> Result<ElasticityMap> {
    p.validate()?;
    let geometry = RealGeometry::fit(set)?;
    let bound = p.workspace_bound;
    let axis = grid_nodes(bound, resolution)?;
    let n = axis.len();

    let mut candidates: Vec<((f64, f64), Vector3<f64>)> = geometry
        .on_grid(&axis)
        .into_iter()
        .enumerate()
        .map(|(k, pos)| ((axis[k / n], axis[k % n]), pos))
        .collect();
    candidates.extend(set.samples.iter().map(|s| (s.commanded, s.measured_tip)));
    candidates.sort_by(|a, b| a.0 .0.total_cmp(&b.0 .0).then(a.0 .1.total_cmp(&b.0 .1)));

    let corrected: Vec<(f64, f64)> = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (a, b) = (axis[k / n], axis[k % n]);
            let target = kinematics::forward(&Config::new(a, b, 0.0, 0.0), p).position;
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (idx, (_, pos)) in candidates.iter().enumerate() {
                let d = (pos - target).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = idx;
                }
            }
            let start = candidates[best].0;
            if best_d.sqrt() <= 1e-9 {
                return start;
            }
            refine(&geometry, start, &target, bound, best_d)
        })
        .collect();

    Ok(ElasticityMap {
        workspace: bound,
        resolution,
        nodes: n,
        source: set.source,
        corrected,
        geometry: Some(geometry),
    })
}

/// Gauss-Newton on `|P*(k) - target|^2` inside the workspace box, only accepting improvements.
fn refine(g: &RealGeometry, start: (f64, f64), target: &Vector3<f64>, bound: f64, start_d2: f64) -> (f64, f64) {
    let clamp = |v: Vector2<f64>| Vector2::new(v.x.clamp(-bound, bound), v.y.clamp(-bound, bound));
    let mut k = Vector2::new(start.0, start.1);
    let mut r = g.position(k.x, k.y) - target;
    let mut d2 = start_d2;
    for _ in 0..8 {
        let h = 1e-3;
        let mut jac = nalgebra::Matrix3x2::zeros();
        for c in 0..2 {
            let mut probe = k;
            probe[c] += if probe[c] + h > bound { -h } else { h };
            let step = probe[c] - k[c];
            jac.set_column(c, &((g.position(probe.x, probe.y) - target - r) / step));
        }
        let normal = jac.transpose() * jac;
        let Some(inv) = normal.try_inverse() else { break };
        let delta = -(inv * (jac.transpose() * r));
        let mut accepted = false;
        let mut scale = 1.0;
        while scale > 1e-3 {
            let cand = clamp(k + delta * scale);
            let cr = g.position(cand.x, cand.y) - target;
            if cr.norm_squared() < d2 {
                k = cand;
                r = cr;
                d2 = cr.norm_squared();
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted || delta.norm() * scale < 1e-9 {
            break;
        }
    }
    (k.x, k.y)
}
