use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use icecath::compensation::{build_map, collect_five_point, collect_grid, ElasticityMap};
use icecath::gateway::{load_map, recover_bench as run_bench, save_map, BenchSpec, PlantConfig};
use icecath::kinematics::forward;
use icecath::plant::{CurvatureCondition, NoiseModel};
use icecath::trajectories::{run_and_score, spin_trajectory, RunMetrics, SpinSpec, Trajectory};
use icecath::Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compensation {
    None,
    FivePoint,
    Dense,
}

impl Compensation {
    fn label(&self) -> &'static str {
        match self {
            Compensation::None => "none",
            Compensation::FivePoint => "five-point",
            Compensation::Dense => "dense",
        }
    }
}

fn table_writer(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(io::BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn num(v: f64) -> String {
    v.to_string()
}

fn map_for(plant: &PlantConfig, dense: bool, spacing: f64, resolution: f64) -> Result<ElasticityMap> {
    let model = plant.build()?;
    let set = if dense { collect_grid(&model, spacing)? } else { collect_five_point(&model)? };
    Ok(build_map(&set, &model.params, resolution)?)
}

pub fn calibrate(plant: &PlantConfig, dense: bool, spacing: f64, resolution: f64, out: &Path) -> Result<()> {
    let map = map_for(plant, dense, spacing, resolution)?;
    save_map(&map, out).with_context(|| format!("writing {}", out.display()))?;
    eprintln!(
        "{} map: {} nodes per axis, max deviation from identity {:.3}°, written to {}",
        map.source(),
        map.nodes_per_axis(),
        map.max_identity_deviation(),
        out.display()
    );
    Ok(())
}

pub struct SpinJob {
    pub plant: PlantConfig,
    pub initial: Vec<(f64, f64)>,
    pub compensation: Vec<Compensation>,
    pub curvature: Vec<CurvatureCondition>,
    pub seed: u64,
    pub steps: usize,
    pub dense_map: Option<PathBuf>,
    pub five_point_map: Option<PathBuf>,
    pub spacing: f64,
    pub resolution: f64,
}

impl SpinJob {
    /// Maps come from files or from the straight, noiseless version of the plant.
    fn map(&self, kind: Compensation) -> Result<Option<ElasticityMap>> {
        let (file, dense) = match kind {
            Compensation::None => return Ok(None),
            Compensation::FivePoint => (&self.five_point_map, false),
            Compensation::Dense => (&self.dense_map, true),
        };
        if let Some(path) = file {
            return Ok(Some(load_map(path).with_context(|| format!("loading map {}", path.display()))?));
        }
        let mut straight = self.plant.clone();
        straight.curvature.condition = CurvatureCondition::Straight;
        straight.noise = NoiseModel::NONE;
        let map = map_for(&straight, dense, self.spacing, self.resolution)
            .with_context(|| format!("calibrating the {} map", kind.label()))?;
        Ok(Some(map))
    }
}

pub struct SpinRun {
    pub initial: (f64, f64),
    pub compensation: Compensation,
    pub curvature: CurvatureCondition,
    pub trajectory: Trajectory,
    pub metrics: RunMetrics,
}

pub fn run_spins(job: &SpinJob) -> Result<Vec<SpinRun>> {
    let maps: Vec<(Compensation, Option<ElasticityMap>)> =
        job.compensation.iter().map(|&c| Ok((c, job.map(c)?))).collect::<Result<_>>()?;
    let mut runs = Vec::new();
    for &curvature in &job.curvature {
        let mut cfg = job.plant.clone();
        cfg.curvature.condition = curvature;
        cfg.seed = job.seed;
        let plant = cfg.build()?;
        let p = plant.params;
        for &initial in &job.initial {
            let reference = forward(&Config::new(initial.0, initial.1, 0.0, 0.0), &p);
            for (compensation, map) in &maps {
                let spec = SpinSpec { compensation: map.as_ref(), ..SpinSpec::new(initial, job.steps) };
                let trajectory = spin_trajectory(&spec, &p)
                    .with_context(|| format!("spin from {initial:?} with {} compensation", compensation.label()))?;
                let metrics = run_and_score(&trajectory, &mut plant.clone(), &reference)?;
                runs.push(SpinRun { initial, compensation: *compensation, curvature, trajectory, metrics });
            }
        }
    }
    Ok(runs)
}

pub fn spin(job: &SpinJob, out: Option<&Path>, trace: Option<&Path>) -> Result<()> {
    let runs = run_spins(job)?;

    let mut w = table_writer(out)?;
    w.write_record([
        "initial_phi1",
        "initial_phi2",
        "compensation",
        "curvature",
        "steps",
        "seed",
        "position_rmse_mm",
        "orientation_rmse_deg",
        "max_position_error_mm",
    ])?;
    for r in &runs {
        w.write_record([
            num(r.initial.0),
            num(r.initial.1),
            r.compensation.label().into(),
            r.curvature.label().into(),
            job.steps.to_string(),
            job.seed.to_string(),
            num(r.metrics.position_rmse),
            num(r.metrics.orientation_rmse),
            num(r.metrics.max_position_error()),
        ])?;
    }
    w.flush()?;

    if let Some(path) = trace {
        let mut w = table_writer(Some(path))?;
        w.write_record([
            "initial_phi1",
            "initial_phi2",
            "compensation",
            "curvature",
            "step",
            "psi_deg",
            "phi1",
            "phi2",
            "phi3",
            "d4",
            "tip_x",
            "tip_y",
            "tip_z",
            "position_error_mm",
            "orientation_error_deg",
        ])?;
        for r in &runs {
            for (k, q) in r.trajectory.steps.iter().enumerate() {
                let tip = &r.metrics.measured[k].position;
                w.write_record([
                    num(r.initial.0),
                    num(r.initial.1),
                    r.compensation.label().into(),
                    r.curvature.label().into(),
                    k.to_string(),
                    num(r.trajectory.spin[k]),
                    num(q.phi1),
                    num(q.phi2),
                    num(q.phi3),
                    num(q.d4),
                    num(tip.x),
                    num(tip.y),
                    num(tip.z),
                    num(r.metrics.position_errors[k]),
                    num(r.metrics.orientation_errors[k]),
                ])?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

pub fn recover_bench(plant: &PlantConfig, spec: &BenchSpec, out: Option<&Path>, session_out: Option<&Path>) -> Result<()> {
    let report = run_bench(plant, spec)?;
    let mut w = table_writer(out)?;
    w.write_record(["view_id", "repeat", "waypoints", "exact", "tip_x", "tip_y", "tip_z", "distance_to_median_mm"])?;
    for v in &report.views {
        for (k, r) in v.runs.iter().enumerate() {
            let t = &r.tip.position;
            w.write_record([
                v.view_id.clone(),
                k.to_string(),
                r.waypoints.to_string(),
                r.exact.to_string(),
                num(t.x),
                num(t.y),
                num(t.z),
                num(v.spread.distances[k]),
            ])?;
        }
    }
    w.flush()?;

    for v in &report.views {
        let exact = v.runs.iter().filter(|r| r.exact).count();
        eprintln!(
            "{}: {exact}/{} exact, spread {:.3} ± {:.3} mm (median run {})",
            v.view_id,
            v.runs.len(),
            v.spread.mean,
            v.spread.sd,
            v.spread.median_index
        );
    }
    eprintln!("{} recoveries, pooled mean spread {:.3} mm", report.recoveries(), report.pooled_mean_spread());
    if let Some(path) = session_out {
        report.session.save(path).with_context(|| format!("saving session {}", path.display()))?;
    }
    Ok(())
}
