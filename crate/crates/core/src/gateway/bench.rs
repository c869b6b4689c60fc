//! Repeated view recovery through the control loop.
//!
//! The operator is simulated by a seeded random walk of small jogs, one per
//! tick, so every visited configuration lands in the roadmap. Views are saved
//! along the walk; each repeat wanders off again and recovers one view.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::PlantConfig;
use super::control::{Controller, Response};
use super::messages::{ControlMessage, JogDelta};
use super::session::{ControllerOptions, Session};
use crate::error::{Error, Result};
use crate::kinematics::{Config, TipPose};
use crate::plant::NoiseModel;
use crate::trajectories::{repeat_spread, SpreadReport};

/// Knob range the simulated operator stays inside, degrees.
const WANDER_BOUND: f64 = 60.0;
const MAX_RECOVERY_TICKS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSpec {
    pub views: usize,
    pub repeats: usize,
    /// Jogs between saved views and before each recovery.
    pub wander_steps: usize,
    pub noise: NoiseModel,
    /// Seeds both the operator walk and the tracker noise.
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self { views: 3, repeats: 7, wander_steps: 40, noise: NoiseModel::NONE, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryRun {
    pub start: Config,
    pub reached: Config,
    /// `reached` equals the saved configuration bit for bit.
    pub exact: bool,
    /// Tracker reading at the final waypoint.
    pub tip: TipPose,
    pub waypoints: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewBench {
    pub view_id: String,
    pub config: Config,
    pub runs: Vec<RecoveryRun>,
    pub spread: SpreadReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub views: Vec<ViewBench>,
    pub session: Session,
}

impl BenchReport {
    pub fn recoveries(&self) -> usize {
        self.views.iter().map(|v| v.runs.len()).sum()
    }

    pub fn all_exact(&self) -> bool {
        self.views.iter().all(|v| v.runs.iter().all(|r| r.exact))
    }

    /// Mean distance to the per-view median tip over every non-median run, mm.
    pub fn pooled_mean_spread(&self) -> f64 {
        let (sum, n) = self.views.iter().fold((0.0, 0usize), |(s, n), v| {
            let d: Vec<f64> =
                v.spread.distances.iter().enumerate().filter(|&(i, _)| i != v.spread.median_index).map(|(_, d)| *d).collect();
            (s + d.iter().sum::<f64>(), n + d.len())
        });
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

fn bits(q: &Config) -> [u64; 4] {
    q.as_array().map(f64::to_bits)
}

fn wander(ctl: &mut Controller, rng: &mut ChaCha8Rng, steps: usize) -> Result<()> {
    for _ in 0..steps {
        let q = ctl.commanded();
        let mut knob = |v: f64| {
            let d = rng.random_range(-0.4..0.4);
            if (v + d).abs() > WANDER_BOUND {
                -d
            } else {
                d
            }
        };
        let (phi1, phi2) = (knob(q.phi1), knob(q.phi2));
        let delta = JogDelta { phi1, phi2, phi3: rng.random_range(-0.3..0.3), d4: rng.random_range(-0.3..0.3) };
        ctl.handle(ControlMessage::Jog { delta })?;
        ctl.tick()?;
    }
    Ok(())
}

/// Runs `spec.views × spec.repeats` recoveries on the plant described by `plant`.
pub fn recover_bench(plant: &PlantConfig, spec: &BenchSpec) -> Result<BenchReport> {
    if spec.views == 0 || spec.repeats < 2 {
        return Err(Error::Domain(format!("bench needs ≥ 1 view and ≥ 2 repeats, got {spec:?}")));
    }
    let mut plant = plant.clone();
    plant.noise = spec.noise;
    plant.seed = spec.seed;
    let mut ctl = Controller::new(&format!("bench-{}", spec.seed), plant, ControllerOptions::default(), None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    ctl.tick()?;

    let mut saved = Vec::with_capacity(spec.views);
    for v in 0..spec.views {
        wander(&mut ctl, &mut rng, spec.wander_steps)?;
        let Response::Ack { view_id: Some(id) } = ctl.handle(ControlMessage::SaveView { label: format!("bench-{v}") })?
        else {
            return Err(Error::State("save_view did not return a view id".into()));
        };
        saved.push((id, ctl.actuated()));
    }

    let mut runs: Vec<Vec<RecoveryRun>> = vec![Vec::with_capacity(spec.repeats); spec.views];
    for _ in 0..spec.repeats {
        for (v, (id, config)) in saved.iter().enumerate() {
            wander(&mut ctl, &mut rng, spec.wander_steps)?;
            let start = ctl.actuated();
            ctl.handle(ControlMessage::Recover { view_id: id.clone() })?;
            let waypoints = ctl.snapshot().recovery.map_or(0, |r| r.total);
            ctl.run_recovery(MAX_RECOVERY_TICKS)?;
            let reached = ctl.actuated();
            runs[v].push(RecoveryRun {
                start,
                reached,
                exact: bits(&reached) == bits(config),
                tip: ctl.snapshot().tip.to_pose(),
                waypoints,
            });
        }
    }

    let views = saved
        .into_iter()
        .zip(runs)
        .map(|((view_id, config), runs)| {
            let tips: Vec<TipPose> = runs.iter().map(|r| r.tip).collect();
            Ok(ViewBench { view_id, config, spread: repeat_spread(&tips)?, runs })
        })
        .collect::<Result<_>>()?;
    Ok(BenchReport { views, session: ctl.into_session() })
}
