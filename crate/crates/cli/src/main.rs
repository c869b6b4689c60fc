//! `icecath`: batch experiments, calibration, session recording and the live service.

mod experiments;
mod sessions;

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use icecath::gateway::{load_map, Controller, ControllerOptions, PlantConfig};
use icecath::plant::CurvatureCondition;
use icecath_server::ServiceOptions;

#[derive(Parser)]
#[command(name = "icecath", version, about = "Simulated robotic ICE catheter controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an elasticity map from a calibration run.
    Calibrate {
        #[arg(long, value_enum)]
        mode: CalibrationMode,
        /// Plant configuration (TOML); defaults apply when omitted.
        #[arg(long)]
        plant: Option<PathBuf>,
        /// Dense grid spacing, degrees.
        #[arg(long, default_value_t = 10.0)]
        spacing: f64,
        /// Map table resolution, degrees.
        #[arg(long, default_value_t = 1.0)]
        resolution: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run image-spinning trajectories and score them against the tracker.
    Spin {
        /// Initial knob pairs as `phi1` or `phi1:phi2`, degrees; comma separated.
        #[arg(long, value_delimiter = ',', default_value = "60", value_parser = parse_initial)]
        initial: Vec<(f64, f64)>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "none")]
        compensation: Vec<CompensationArg>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "straight")]
        curvature: Vec<CurvatureArg>,
        /// Tracker noise seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 360)]
        steps: usize,
        #[arg(long)]
        plant: Option<PathBuf>,
        /// Precomputed dense map; calibrated on the straight plant otherwise.
        #[arg(long)]
        dense_map: Option<PathBuf>,
        /// Precomputed five-point map; calibrated on the straight plant otherwise.
        #[arg(long)]
        five_point_map: Option<PathBuf>,
        #[arg(long, default_value_t = 10.0)]
        spacing: f64,
        #[arg(long, default_value_t = 1.0)]
        resolution: f64,
        /// Metrics table; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-step trace table.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Drive the controller from a message script and save the session.
    Record {
        /// One JSON control message per line, or `tick N`; built-in demo when omitted.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        plant: Option<PathBuf>,
        /// Elasticity map enabling `set_compensation`.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Overrides the plant seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "session")]
        id: String,
        #[arg(long)]
        out: PathBuf,
        /// Also save the roadmap and view library.
        #[arg(long)]
        roadmap_out: Option<PathBuf>,
    },
    /// Re-run a recorded session and compare every event bit for bit.
    Replay {
        #[arg(long)]
        session: PathBuf,
        /// Map file; defaults to the one named in the session header.
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Save views, then recover each one repeatedly and report the tip spread.
    RecoverBench {
        #[arg(long, default_value_t = 3)]
        views: usize,
        #[arg(long, default_value_t = 7)]
        repeats: usize,
        /// Tracker position noise, 3-D RMS in mm.
        #[arg(long, default_value_t = 0.0)]
        noise_mm: f64,
        /// Tracker orientation noise, degrees.
        #[arg(long, default_value_t = 0.0)]
        noise_deg: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Operator jogs between views and before each recovery.
        #[arg(long, default_value_t = 40)]
        wander: usize,
        #[arg(long)]
        plant: Option<PathBuf>,
        /// Per-recovery table; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        session_out: Option<PathBuf>,
    },
    /// Start the websocket control service on `/ws`.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        plant: Option<PathBuf>,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long, default_value_t = icecath_server::DEFAULT_TICK_HZ)]
        tick_hz: f64,
        /// Save the session log here on shutdown.
        #[arg(long)]
        session_out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CalibrationMode {
    Dense,
    FivePoint,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CompensationArg {
    None,
    FivePoint,
    Dense,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CurvatureArg {
    Straight,
    Moderate,
    Steep,
    All,
}

fn parse_initial(s: &str) -> Result<(f64, f64), String> {
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}"));
    match s.split_once(':') {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => Ok((parse(s)?, 0.0)),
    }
}

fn compensations(args: &[CompensationArg]) -> Vec<experiments::Compensation> {
    use experiments::Compensation as C;
    let mut out = Vec::new();
    for a in args {
        let add: &[C] = match a {
            CompensationArg::None => &[C::None],
            CompensationArg::FivePoint => &[C::FivePoint],
            CompensationArg::Dense => &[C::Dense],
            CompensationArg::All => &[C::None, C::FivePoint, C::Dense],
        };
        for c in add {
            if !out.contains(c) {
                out.push(*c);
            }
        }
    }
    out
}

fn curvatures(args: &[CurvatureArg]) -> Vec<CurvatureCondition> {
    let mut out = Vec::new();
    for a in args {
        let add: &[CurvatureCondition] = match a {
            CurvatureArg::Straight => &[CurvatureCondition::Straight],
            CurvatureArg::Moderate => &[CurvatureCondition::Moderate],
            CurvatureArg::Steep => &[CurvatureCondition::Steep],
            CurvatureArg::All => &CurvatureCondition::ALL,
        };
        for c in add {
            if !out.contains(c) {
                out.push(*c);
            }
        }
    }
    out
}

fn plant_config(path: Option<&Path>) -> Result<PlantConfig> {
    match path {
        Some(p) => PlantConfig::load(p).with_context(|| format!("loading plant config {}", p.display())),
        None => Ok(PlantConfig::default()),
    }
}

fn serve(
    port: u16,
    host: IpAddr,
    plant: Option<&Path>,
    map: Option<&Path>,
    tick_hz: f64,
    session_out: Option<&Path>,
) -> Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let plant = plant_config(plant)?;
    let map = match map {
        Some(p) => Some((
            std::sync::Arc::new(load_map(p).with_context(|| format!("loading map {}", p.display()))?),
            p.display().to_string(),
        )),
        None => None,
    };
    let controller = Controller::new("live", plant, ControllerOptions::default(), map)?;
    let options = ServiceOptions { tick_hz, ..ServiceOptions::default() };
    let runtime = tokio::runtime::Runtime::new()?;
    let controller = runtime.block_on(icecath_server::serve(
        controller,
        options,
        SocketAddr::new(host, port),
        async {
            let _ = tokio::signal::ctrl_c().await;
        },
    ))?;
    if let Some(path) = session_out {
        controller.session().save(path).with_context(|| format!("saving session {}", path.display()))?;
        eprintln!("session saved to {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Calibrate { mode, plant, spacing, resolution, out } => {
            experiments::calibrate(&plant_config(plant.as_deref())?, mode == CalibrationMode::Dense, spacing, resolution, &out)?;
        }
        Command::Spin {
            initial,
            compensation,
            curvature,
            seed,
            steps,
            plant,
            dense_map,
            five_point_map,
            spacing,
            resolution,
            out,
            trace,
        } => {
            let job = experiments::SpinJob {
                plant: plant_config(plant.as_deref())?,
                initial,
                compensation: compensations(&compensation),
                curvature: curvatures(&curvature),
                seed,
                steps,
                dense_map,
                five_point_map,
                spacing,
                resolution,
            };
            experiments::spin(&job, out.as_deref(), trace.as_deref())?;
        }
        Command::Record { script, plant, map, seed, id, out, roadmap_out } => {
            let mut plant = plant_config(plant.as_deref())?;
            if let Some(seed) = seed {
                plant.seed = seed;
            }
            sessions::record(plant, script.as_deref(), map.as_deref(), &id, &out, roadmap_out.as_deref())?;
        }
        Command::Replay { session, map } => return sessions::replay(&session, map.as_deref()),
        Command::RecoverBench { views, repeats, noise_mm, noise_deg, seed, wander, plant, out, session_out } => {
            let spec = icecath::gateway::BenchSpec {
                views,
                repeats,
                wander_steps: wander,
                noise: icecath::plant::NoiseModel::from_rms(noise_mm, noise_deg),
                seed,
            };
            experiments::recover_bench(&plant_config(plant.as_deref())?, &spec, out.as_deref(), session_out.as_deref())?;
        }
        Command::Serve { port, host, plant, map, tick_hz, session_out } => {
            serve(port, host, plant.as_deref(), map.as_deref(), tick_hz, session_out.as_deref())?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
