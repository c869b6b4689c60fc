//! Python bindings: `import icecath`.

use std::sync::Arc;

use icecath::compensation::{build_map, collect_five_point, collect_grid};
use icecath::gateway::formats::{map_from_str, map_to_string, roadmap_from_str, roadmap_to_string};
use icecath::gateway::{self as gw, ControlMessage, ServerMessage};
use icecath::plant::{CurvatureCondition, NoiseModel};
use icecath::trajectories as tr;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(icecath, IcecathError, PyException, "Raised for every library error.");

fn err(e: icecath::Error) -> PyErr {
    IcecathError::new_err(e.to_string())
}

/// Joint configuration: knob angles `phi1`, `phi2`, roll `phi3` (degrees), translation `d4` (mm).
#[pyclass(name = "Config", module = "icecath", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyConfig {
    #[pyo3(get, set)]
    phi1: f64,
    #[pyo3(get, set)]
    phi2: f64,
    #[pyo3(get, set)]
    phi3: f64,
    #[pyo3(get, set)]
    d4: f64,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (phi1=0.0, phi2=0.0, phi3=0.0, d4=0.0))]
    fn new(phi1: f64, phi2: f64, phi3: f64, d4: f64) -> Self {
        Self { phi1, phi2, phi3, d4 }
    }

    fn to_tuple(&self) -> (f64, f64, f64, f64) {
        (self.phi1, self.phi2, self.phi3, self.d4)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.to_tuple() == other.to_tuple()
    }

    fn __repr__(&self) -> String {
        format!("Config(phi1={}, phi2={}, phi3={}, d4={})", self.phi1, self.phi2, self.phi3, self.d4)
    }
}

impl From<PyConfig> for icecath::Config {
    fn from(q: PyConfig) -> Self {
        icecath::Config::new(q.phi1, q.phi2, q.phi3, q.d4)
    }
}

impl From<icecath::Config> for PyConfig {
    fn from(q: icecath::Config) -> Self {
        Self { phi1: q.phi1, phi2: q.phi2, phi3: q.phi3, d4: q.d4 }
    }
}

/// Catheter geometry; the ultrasound offset is the identity.
#[pyclass(name = "CatheterParams", module = "icecath", from_py_object)]
#[derive(Clone)]
pub struct PyParams {
    #[pyo3(get, set)]
    bend_length: f64,
    #[pyo3(get, set)]
    knob_radius: f64,
    #[pyo3(get, set)]
    catheter_radius: f64,
    #[pyo3(get, set)]
    workspace_bound: f64,
}

#[pymethods]
impl PyParams {
    #[new]
    fn new() -> Self {
        icecath::CatheterParams::default().into()
    }

    fn __repr__(&self) -> String {
        format!(
            "CatheterParams(bend_length={}, knob_radius={}, catheter_radius={}, workspace_bound={})",
            self.bend_length, self.knob_radius, self.catheter_radius, self.workspace_bound
        )
    }
}

impl From<icecath::CatheterParams> for PyParams {
    fn from(p: icecath::CatheterParams) -> Self {
        Self {
            bend_length: p.bend_length,
            knob_radius: p.knob_radius,
            catheter_radius: p.catheter_radius,
            workspace_bound: p.workspace_bound,
        }
    }
}

fn params_of(p: Option<&PyParams>) -> PyResult<icecath::CatheterParams> {
    let mut out = icecath::CatheterParams::default();
    if let Some(p) = p {
        out.bend_length = p.bend_length;
        out.knob_radius = p.knob_radius;
        out.catheter_radius = p.catheter_radius;
        out.workspace_bound = p.workspace_bound;
    }
    out.validate().map_err(err)?;
    Ok(out)
}

/// Tip position (mm) and rotation; rotation column 0 is the image direction.
#[pyclass(name = "TipPose", module = "icecath", from_py_object)]
#[derive(Clone)]
pub struct PyTipPose {
    inner: icecath::TipPose,
}

#[pymethods]
impl PyTipPose {
    #[getter]
    fn position(&self) -> [f64; 3] {
        let p = &self.inner.position;
        [p.x, p.y, p.z]
    }

    /// Row-major rotation matrix.
    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        let r = &self.inner.rotation;
        std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]))
    }

    fn __repr__(&self) -> String {
        format!("TipPose(position={:?})", self.position())
    }
}

#[pyfunction]
#[pyo3(signature = (config, params=None))]
fn forward(config: PyConfig, params: Option<PyParams>) -> PyResult<PyTipPose> {
    let p = params_of(params.as_ref())?;
    Ok(PyTipPose { inner: icecath::kinematics::forward(&config.into(), &p) })
}

#[pyfunction]
#[pyo3(signature = (pose, params=None))]
fn inverse(pose: &PyTipPose, params: Option<PyParams>) -> PyResult<PyConfig> {
    let p = params_of(params.as_ref())?;
    icecath::kinematics::inverse(&pose.inner, &p).map(Into::into).map_err(err)
}

/// Rotation by `angle_deg` about `axis`, row-major.
#[pyfunction]
fn rodrigues(axis: [f64; 3], angle_deg: f64) -> PyResult<[[f64; 3]; 3]> {
    let r = icecath::kinematics::rodrigues(&axis.into(), angle_deg).map_err(err)?;
    Ok(std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])))
}

#[pyfunction]
#[pyo3(signature = (signal, window=11, order=2))]
fn savitzky_golay(signal: Vec<f64>, window: usize, order: usize) -> PyResult<Vec<f64>> {
    icecath::compensation::savitzky_golay(&signal, window, order).map_err(err)
}

/// Simulated catheter and tracker, configured from TOML text.
#[pyclass(name = "Plant", module = "icecath", from_py_object)]
#[derive(Clone)]
pub struct PyPlant {
    config: gw::PlantConfig,
    inner: icecath::plant::PlantModel,
}

#[pymethods]
impl PyPlant {
    #[new]
    #[pyo3(signature = (toml=None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let config = match toml {
            Some(t) => gw::PlantConfig::from_toml_str(t).map_err(err)?,
            None => gw::PlantConfig::default(),
        };
        let inner = config.build().map_err(err)?;
        Ok(Self { config, inner })
    }

    /// Copy of this plant under `straight`, `moderate` or `steep` access-path curvature.
    fn with_curvature(&self, condition: &str) -> PyResult<Self> {
        let mut config = self.config.clone();
        config.curvature.condition = condition.parse::<CurvatureCondition>().map_err(err)?;
        let inner = config.build().map_err(err)?;
        Ok(Self { config, inner })
    }

    #[getter]
    fn params(&self) -> PyParams {
        self.inner.params.into()
    }

    fn to_toml(&self) -> PyResult<String> {
        self.config.to_toml_string().map_err(err)
    }

    /// Noiseless pose of the real tip.
    fn forward(&self, config: PyConfig) -> PyResult<PyTipPose> {
        self.inner.plant_forward(&config.into()).map(|inner| PyTipPose { inner }).map_err(err)
    }

    /// Noisy tracker reading; advances the noise stream.
    fn measure(&mut self, config: PyConfig) -> PyResult<PyTipPose> {
        self.inner.measure(&config.into()).map(|s| PyTipPose { inner: s.measured_pose }).map_err(err)
    }
}

/// Knob correction table.
#[pyclass(name = "ElasticityMap", module = "icecath", skip_from_py_object)]
pub struct PyMap {
    inner: Arc<icecath::compensation::ElasticityMap>,
}

#[pymethods]
impl PyMap {
    #[staticmethod]
    #[pyo3(signature = (plant, spacing=10.0, resolution=1.0))]
    fn calibrate_dense(plant: &PyPlant, spacing: f64, resolution: f64) -> PyResult<Self> {
        let set = collect_grid(&plant.inner, spacing).map_err(err)?;
        let map = build_map(&set, &plant.inner.params, resolution).map_err(err)?;
        Ok(Self { inner: Arc::new(map) })
    }

    #[staticmethod]
    #[pyo3(signature = (plant, resolution=1.0))]
    fn calibrate_five_point(plant: &PyPlant, resolution: f64) -> PyResult<Self> {
        let set = collect_five_point(&plant.inner).map_err(err)?;
        let map = build_map(&set, &plant.inner.params, resolution).map_err(err)?;
        Ok(Self { inner: Arc::new(map) })
    }

    #[staticmethod]
    #[pyo3(signature = (workspace=90.0, resolution=1.0))]
    fn identity(workspace: f64, resolution: f64) -> PyResult<Self> {
        let map = icecath::compensation::ElasticityMap::identity(workspace, resolution).map_err(err)?;
        Ok(Self { inner: Arc::new(map) })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(map_from_str(text).map_err(err)?) })
    }

    fn to_text(&self) -> String {
        map_to_string(&self.inner)
    }

    fn apply(&self, phi1: f64, phi2: f64) -> PyResult<(f64, f64)> {
        self.inner.apply(phi1, phi2).map_err(err)
    }

    fn max_identity_deviation(&self) -> f64 {
        self.inner.max_identity_deviation()
    }

    #[getter]
    fn resolution(&self) -> f64 {
        self.inner.resolution()
    }

    #[getter]
    fn workspace(&self) -> f64 {
        self.inner.workspace()
    }

    #[getter]
    fn source(&self) -> String {
        self.inner.source().to_string()
    }
}

/// Image-spinning trajectory as a list of configurations.
#[pyfunction]
#[pyo3(signature = (initial, steps=360, map=None, roll=0.0, translation=0.0, params=None))]
fn spin_trajectory(
    initial: (f64, f64),
    steps: usize,
    map: Option<&PyMap>,
    roll: f64,
    translation: f64,
    params: Option<PyParams>,
) -> PyResult<Vec<PyConfig>> {
    let p = params_of(params.as_ref())?;
    let spec = tr::SpinSpec { roll, translation, compensation: map.map(|m| &*m.inner), ..tr::SpinSpec::new(initial, steps) };
    let traj = tr::spin_trajectory(&spec, &p).map_err(err)?;
    Ok(traj.steps.into_iter().map(Into::into).collect())
}

/// Runs a spin through `plant` and scores it against the model pose of `initial`.
#[pyfunction]
#[pyo3(signature = (plant, initial, steps=360, map=None))]
fn run_spin<'py>(
    py: Python<'py>,
    plant: &mut PyPlant,
    initial: (f64, f64),
    steps: usize,
    map: Option<&PyMap>,
) -> PyResult<Bound<'py, PyDict>> {
    let p = plant.inner.params;
    let spec = tr::SpinSpec { compensation: map.map(|m| &*m.inner), ..tr::SpinSpec::new(initial, steps) };
    let traj = tr::spin_trajectory(&spec, &p).map_err(err)?;
    let reference = icecath::kinematics::forward(&icecath::Config::new(initial.0, initial.1, 0.0, 0.0), &p);
    let m = tr::run_and_score(&traj, &mut plant.inner, &reference).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("position_rmse", m.position_rmse)?;
    out.set_item("orientation_rmse", m.orientation_rmse)?;
    out.set_item("position_errors", m.position_errors)?;
    out.set_item("orientation_errors", m.orientation_errors)?;
    Ok(out)
}

/// Roadmap of visited configurations plus saved views.
#[pyclass(name = "Planner", module = "icecath", skip_from_py_object)]
pub struct PyPlanner {
    roadmap: icecath::planner::Roadmap,
    views: icecath::planner::ViewLibrary,
}

#[pymethods]
impl PyPlanner {
    #[new]
    #[pyo3(signature = (epsilon=1.0))]
    fn new(epsilon: f64) -> PyResult<Self> {
        let roadmap = icecath::planner::Roadmap::new(epsilon, Default::default()).map_err(err)?;
        Ok(Self { roadmap, views: Default::default() })
    }

    fn observe(&mut self, config: PyConfig) -> PyResult<()> {
        self.roadmap.observe(&config.into()).map(|_| ()).map_err(err)
    }

    fn observe_all(&mut self, configs: Vec<PyConfig>) -> PyResult<()> {
        let trace: Vec<icecath::Config> = configs.into_iter().map(Into::into).collect();
        self.roadmap.observe_all(&trace).map_err(err)
    }

    #[pyo3(signature = (config, label=""))]
    fn save_view(&mut self, config: PyConfig, label: &str) -> PyResult<String> {
        self.views.save_view(&config.into(), label, &self.roadmap).map(|v| v.id.clone()).map_err(err)
    }

    /// Shortest recorded path to a view: `(waypoints, cost)`.
    fn query(&self, start: PyConfig, view_id: &str) -> PyResult<(Vec<PyConfig>, f64)> {
        let path = icecath::planner::query(&start.into(), view_id, &self.roadmap, &self.views).map_err(err)?;
        Ok((path.waypoints.into_iter().map(Into::into).collect(), path.total_cost))
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.roadmap.vertex_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.roadmap.edge_count()
    }

    fn to_text(&self) -> String {
        roadmap_to_string(&self.roadmap, &self.views)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let (roadmap, views) = roadmap_from_str(text).map_err(err)?;
        Ok(Self { roadmap, views })
    }
}

/// Single-writer control loop speaking the JSON message schema.
#[pyclass(name = "Controller", module = "icecath", skip_from_py_object)]
pub struct PyController {
    inner: gw::Controller,
}

#[pymethods]
impl PyController {
    #[new]
    #[pyo3(signature = (plant_toml=None, session_id="python", map=None))]
    fn new(plant_toml: Option<&str>, session_id: &str, map: Option<&PyMap>) -> PyResult<Self> {
        let plant = match plant_toml {
            Some(t) => gw::PlantConfig::from_toml_str(t).map_err(err)?,
            None => gw::PlantConfig::default(),
        };
        let map = map.map(|m| (m.inner.clone(), "python".to_string()));
        let inner = gw::Controller::new(session_id, plant, gw::ControllerOptions::default(), map).map_err(err)?;
        Ok(Self { inner })
    }

    /// Applies one JSON control message; returns the JSON reply frame.
    fn handle(&mut self, message: &str) -> String {
        let reply = match ControlMessage::from_json(message) {
            Ok(msg) => {
                let request = msg.name();
                match self.inner.handle(msg) {
                    Ok(gw::Response::Ack { view_id }) => ServerMessage::Ack { request: request.into(), view_id },
                    Ok(gw::Response::State(s)) => ServerMessage::Snapshot(*s),
                    Err(e) => ServerMessage::error(&e, Some(request)),
                }
            }
            Err(e) => ServerMessage::error(&e, None),
        };
        reply.to_json()
    }

    /// One control period; returns the JSON snapshot frame.
    fn tick(&mut self) -> PyResult<String> {
        self.inner.tick().map(|s| ServerMessage::Snapshot(s).to_json()).map_err(err)
    }

    #[pyo3(signature = (max_ticks=1_000_000))]
    fn run_recovery(&mut self, max_ticks: u64) -> PyResult<()> {
        self.inner.run_recovery(max_ticks).map_err(err)
    }

    #[getter]
    fn actuated(&self) -> PyConfig {
        self.inner.actuated().into()
    }

    #[getter]
    fn tick_count(&self) -> u64 {
        self.inner.tick_count()
    }

    fn session_jsonl(&self) -> String {
        self.inner.session().to_jsonl()
    }
}

/// Re-runs a recorded session; true when every event matches bit for bit.
#[pyfunction]
#[pyo3(signature = (jsonl, map=None))]
fn replay_session(jsonl: &str, map: Option<&PyMap>) -> PyResult<bool> {
    let session = gw::Session::parse(jsonl).map_err(err)?;
    let report = gw::replay(&session, map.map(|m| m.inner.clone())).map_err(err)?;
    Ok(report.is_identical())
}

/// Repeated view recovery; returns a summary dict.
#[pyfunction]
#[pyo3(signature = (views=3, repeats=7, noise_mm=0.0, noise_deg=0.0, seed=7, plant_toml=None))]
fn recover_bench<'py>(
    py: Python<'py>,
    views: usize,
    repeats: usize,
    noise_mm: f64,
    noise_deg: f64,
    seed: u64,
    plant_toml: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let plant = match plant_toml {
        Some(t) => gw::PlantConfig::from_toml_str(t).map_err(err)?,
        None => gw::PlantConfig::default(),
    };
    let spec = gw::BenchSpec { views, repeats, noise: NoiseModel::from_rms(noise_mm, noise_deg), seed, ..Default::default() };
    let report = gw::recover_bench(&plant, &spec).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("recoveries", report.recoveries())?;
    out.set_item("all_exact", report.all_exact())?;
    out.set_item("pooled_mean_spread", report.pooled_mean_spread())?;
    let per_view: Vec<(String, f64, f64)> =
        report.views.iter().map(|v| (v.view_id.clone(), v.spread.mean, v.spread.sd)).collect();
    out.set_item("views", per_view)?;
    Ok(out)
}

#[pymodule(name = "icecath")]
pub fn icecath_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("IcecathError", m.py().get_type::<IcecathError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyTipPose>()?;
    m.add_class::<PyPlant>()?;
    m.add_class::<PyMap>()?;
    m.add_class::<PyPlanner>()?;
    m.add_class::<PyController>()?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(inverse, m)?)?;
    m.add_function(wrap_pyfunction!(rodrigues, m)?)?;
    m.add_function(wrap_pyfunction!(savitzky_golay, m)?)?;
    m.add_function(wrap_pyfunction!(spin_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(run_spin, m)?)?;
    m.add_function(wrap_pyfunction!(replay_session, m)?)?;
    m.add_function(wrap_pyfunction!(recover_bench, m)?)?;
    Ok(())
}
