//! Single-writer control loop.
//!
//! [`Controller`] owns every piece of mutable state. Messages are applied with
//! [`Controller::handle`]; [`Controller::tick`] advances one control period: it
//! steps an active recovery, records the configuration in the roadmap, reads
//! the tracker and logs the sample.

use std::sync::Arc;

use super::config::PlantConfig;
use super::messages::{
    BendSnapshot, CompensationState, ControlMessage, JogDelta, Mode, RecoveryProgress, RoadmapSummary,
    Snapshot,
};
use super::session::{ControllerOptions, Event, Session};
use crate::compensation::ElasticityMap;
use crate::error::{Error, Result};
use crate::kinematics::{config_to_bend, CatheterParams, Config, TipPose};
use crate::planner::{query, PathExecution, Roadmap, ViewLibrary};
use crate::plant::PlantModel;

/// Outcome of a handled message.
#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Ack { view_id: Option<String> },
    State(Box<Snapshot>),
}

#[derive(Debug, Clone)]
struct Recovery {
    view_id: String,
    run: PathExecution,
}

#[derive(Debug, Clone)]
pub struct Controller {
    plant: PlantModel,
    params: CatheterParams,
    options: ControllerOptions,
    roadmap: Roadmap,
    views: ViewLibrary,
    commanded: Config,
    actuated: Config,
    map: Option<Arc<ElasticityMap>>,
    compensation: bool,
    recovery: Option<Recovery>,
    tick: u64,
    tip: TipPose,
    session: Session,
}

impl Controller {
    pub fn new(
        session_id: &str,
        plant_config: PlantConfig,
        options: ControllerOptions,
        map: Option<(Arc<ElasticityMap>, String)>,
    ) -> Result<Self> {
        let plant = plant_config.build()?;
        let params = plant.params;
        let tip = plant.plant_forward(&Config::STRAIGHT)?;
        let (map, map_name) = match map {
            Some((m, name)) => {
                if m.workspace() != params.workspace_bound {
                    return Err(Error::Domain(format!(
                        "map covers ±{}° but the catheter workspace is ±{}°",
                        m.workspace(),
                        params.workspace_bound
                    )));
                }
                (Some(m), Some(name))
            }
            None => (None, None),
        };
        Ok(Self {
            plant,
            params,
            options,
            roadmap: Roadmap::new(options.epsilon, options.metric)?,
            views: ViewLibrary::new(),
            commanded: Config::STRAIGHT,
            actuated: Config::STRAIGHT,
            map,
            compensation: false,
            recovery: None,
            tick: 0,
            tip,
            session: Session::new(session_id, plant_config, options, map_name),
        })
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn actuated(&self) -> Config {
        self.actuated
    }

    pub fn commanded(&self) -> Config {
        self.commanded
    }

    pub fn mode(&self) -> Mode {
        if self.recovery.is_some() {
            Mode::Recovering
        } else {
            Mode::Manual
        }
    }

    pub fn roadmap(&self) -> &Roadmap {
        &self.roadmap
    }

    pub fn views(&self) -> &ViewLibrary {
        &self.views
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn into_session(self) -> Session {
        self.session
    }

    pub fn params(&self) -> &CatheterParams {
        &self.params
    }

    /// Applies one message. Refused messages are logged with their error.
    pub fn handle(&mut self, msg: ControlMessage) -> Result<Response> {
        let result = self.apply(&msg);
        if !matches!(msg, ControlMessage::QueryState) {
            let error = result.as_ref().err().map(|e| e.to_string());
            self.log(Event::Command { tick: self.tick, message: msg, error });
        }
        result
    }

    fn apply(&mut self, msg: &ControlMessage) -> Result<Response> {
        let ack = Ok(Response::Ack { view_id: None });
        match msg {
            ControlMessage::QueryState => Ok(Response::State(Box::new(self.snapshot()))),
            ControlMessage::Jog { delta } => {
                self.ensure_manual()?;
                let q = self.jogged(delta)?;
                self.command(q)?;
                ack
            }
            ControlMessage::SetConfig { config } => {
                self.ensure_manual()?;
                self.command(*config)?;
                ack
            }
            ControlMessage::SetCompensation { enabled } => {
                self.ensure_manual()?;
                if *enabled && self.map.is_none() {
                    return Err(Error::State("no elasticity map loaded".into()));
                }
                let previous = self.compensation;
                self.compensation = *enabled;
                if let Err(e) = self.command(self.commanded) {
                    self.compensation = previous;
                    return Err(e);
                }
                ack
            }
            ControlMessage::SaveView { label } => {
                self.ensure_manual()?;
                self.roadmap.observe(&self.actuated)?;
                let view = self.views.save_view(&self.actuated, label, &self.roadmap)?.clone();
                self.log(Event::ViewSaved {
                    tick: self.tick,
                    view_id: view.id.clone(),
                    label: view.label,
                    config: view.config,
                });
                Ok(Response::Ack { view_id: Some(view.id) })
            }
            ControlMessage::Recover { view_id } => {
                if self.recovery.is_some() {
                    return Err(Error::State("a recovery is already running".into()));
                }
                if self.views.get(view_id).is_none() {
                    return Err(Error::Lookup(format!("unknown view '{view_id}'")));
                }
                self.roadmap.observe(&self.actuated)?;
                let path = query(&self.actuated, view_id, &self.roadmap, &self.views)?;
                self.log(Event::RecoveryRequested {
                    tick: self.tick,
                    view_id: view_id.clone(),
                    waypoints: path.waypoints.len(),
                    cost: path.total_cost,
                });
                self.recovery = Some(Recovery { view_id: view_id.clone(), run: PathExecution::new(path) });
                Ok(Response::Ack { view_id: Some(view_id.clone()) })
            }
            ControlMessage::Abort => {
                if let Some(mut r) = self.recovery.take() {
                    r.run.abort("aborted by operator");
                    self.finish(r);
                }
                ack
            }
        }
    }

    fn ensure_manual(&self) -> Result<()> {
        match &self.recovery {
            Some(r) => Err(Error::State(format!("recovery to '{}' in progress; send abort to take over", r.view_id))),
            None => Ok(()),
        }
    }

    fn jogged(&self, d: &JogDelta) -> Result<Config> {
        if !d.as_array().iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!("non-finite jog {d:?}")));
        }
        if d.max_abs() > self.options.jog_limit {
            return Err(Error::Domain(format!(
                "jog of {:.3} exceeds the per-step limit {}",
                d.max_abs(),
                self.options.jog_limit
            )));
        }
        let c = self.commanded;
        Ok(Config::new(c.phi1 + d.phi1, c.phi2 + d.phi2, c.phi3 + d.phi3, c.d4 + d.d4))
    }

    /// Sets the operator-space configuration and derives the motor command.
    fn command(&mut self, q: Config) -> Result<()> {
        q.validate(self.params.workspace_bound)?;
        let actuated = match (&self.map, self.compensation) {
            (Some(map), true) => map.apply_config(&q)?,
            _ => q,
        };
        self.commanded = q;
        self.actuated = actuated;
        Ok(())
    }

    fn finish(&mut self, r: Recovery) {
        let report = r.run.into_report();
        self.commanded = self.actuated;
        self.log(Event::PathExecuted { tick: self.tick, view_id: r.view_id, report });
    }

    /// One control period.
    pub fn tick(&mut self) -> Result<Snapshot> {
        if let Some(r) = &mut self.recovery {
            let bound = self.params.workspace_bound;
            let mut sink = |_: usize, q: &Config| q.validate(bound).map_err(|e| e.to_string());
            if let Some(q) = r.run.step(&mut sink) {
                self.actuated = q;
            }
            if r.run.is_finished() {
                let r = self.recovery.take().expect("checked above");
                self.finish(r);
            }
        }
        self.roadmap.observe(&self.actuated)?;
        let sample = self.plant.measure(&self.actuated)?;
        self.tip = sample.measured_pose;
        self.log(Event::EmSample { tick: self.tick, config: sample.config, pose: (&sample.measured_pose).into() });
        let snapshot = self.snapshot();
        self.tick += 1;
        Ok(snapshot)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            tick: self.tick,
            mode: self.mode(),
            config: self.actuated,
            commanded: self.commanded,
            bend: BendSnapshot::new(&config_to_bend(&self.actuated, &self.params), self.params.bend_length),
            tip: (&self.tip).into(),
            roadmap: RoadmapSummary {
                vertices: self.roadmap.vertex_count(),
                edges: self.roadmap.edge_count(),
                epsilon: self.roadmap.epsilon(),
            },
            views: self.views.views().to_vec(),
            recovery: self.recovery.as_ref().map(|r| RecoveryProgress {
                view_id: r.view_id.clone(),
                emitted: r.run.report().emitted,
                total: r.run.path().waypoints.len(),
            }),
            compensation: CompensationState { available: self.map.is_some(), enabled: self.compensation },
        }
    }

    fn log(&mut self, e: Event) {
        self.session.append(e).expect("controller ticks never decrease");
    }

    /// Ticks until the active recovery finishes, at most `max_ticks` times.
    pub fn run_recovery(&mut self, max_ticks: u64) -> Result<()> {
        for _ in 0..max_ticks {
            if self.recovery.is_none() {
                return Ok(());
            }
            self.tick()?;
        }
        if self.recovery.is_some() {
            return Err(Error::State(format!("recovery still running after {max_ticks} ticks")));
        }
        Ok(())
    }
}

/// Result of re-running a recorded session.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub events: usize,
    pub samples: usize,
    /// Index of the first event that differs from the recording.
    pub first_mismatch: Option<usize>,
    pub replayed: Session,
}

impl ReplayReport {
    pub fn is_identical(&self) -> bool {
        self.first_mismatch.is_none()
    }
}

/// Feeds the recorded commands back into a fresh controller at their ticks.
pub fn replay(recorded: &Session, map: Option<Arc<ElasticityMap>>) -> Result<ReplayReport> {
    let h = recorded.header();
    let map = match (map, &h.map) {
        (Some(m), Some(name)) => Some((m, name.clone())),
        (None, None) => None,
        (Some(m), None) => Some((m, String::new())),
        (None, Some(name)) => return Err(Error::State(format!("session was recorded with map '{name}'"))),
    };
    let mut ctl = Controller::new(h.id.as_str(), h.plant.clone(), h.options, map)?;
    let mut last_sample = None;
    for e in recorded.events() {
        match e {
            Event::Command { tick, message, .. } => {
                while ctl.tick < *tick {
                    ctl.tick()?;
                }
                let _ = ctl.handle(message.clone());
            }
            Event::EmSample { tick, .. } => last_sample = Some(*tick),
            _ => {}
        }
    }
    if let Some(t) = last_sample {
        while ctl.tick <= t {
            ctl.tick()?;
        }
    }
    let replayed = ctl.into_session();
    let n = recorded.events().len().max(replayed.events().len());
    let first_mismatch = (0..n).find(|&i| recorded.events().get(i) != replayed.events().get(i));
    Ok(ReplayReport { events: replayed.events().len(), samples: replayed.em_samples().count(), first_mismatch, replayed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::NoiseModel;

    fn controller() -> Controller {
        Controller::new("test", PlantConfig::default(), ControllerOptions::default(), None).unwrap()
    }

    fn jog(phi1: f64, phi2: f64) -> ControlMessage {
        ControlMessage::Jog { delta: JogDelta { phi1, phi2, ..JogDelta::default() } }
    }

    #[test]
    fn initial_state_is_straight_and_empty() {
        let mut c = controller();
        let Response::State(s) = c.handle(ControlMessage::QueryState).unwrap() else { panic!() };
        assert_eq!(s.config, Config::STRAIGHT);
        assert_eq!((s.roadmap.vertices, s.roadmap.edges), (0, 0));
        assert!(s.views.is_empty() && s.recovery.is_none());
        assert_eq!(s.bend.radius, None);
    }

    #[test]
    fn jog_save_recover_is_exact() {
        let mut c = controller();
        c.tick().unwrap();
        for _ in 0..20 {
            c.handle(jog(0.5, 0.25)).unwrap();
            c.tick().unwrap();
        }
        let Response::Ack { view_id: Some(id) } = c.handle(ControlMessage::SaveView { label: "a".into() }).unwrap()
        else {
            panic!()
        };
        let saved = c.views().get(&id).unwrap().config;
        for _ in 0..15 {
            c.handle(jog(-0.5, 0.5)).unwrap();
            c.tick().unwrap();
        }
        c.handle(ControlMessage::Recover { view_id: id.clone() }).unwrap();
        assert!(matches!(c.handle(jog(0.1, 0.0)), Err(Error::State(_))));
        c.run_recovery(1000).unwrap();
        assert_eq!(c.actuated(), saved);
        assert_eq!(c.mode(), Mode::Manual);
    }

    #[test]
    fn unknown_view_leaves_state_alone() {
        let mut c = controller();
        c.tick().unwrap();
        let before = c.snapshot();
        let err = c.handle(ControlMessage::Recover { view_id: "view-9".into() }).unwrap_err();
        assert!(err.to_string().contains("unknown view"));
        assert_eq!(c.snapshot(), before);
    }

    #[test]
    fn jog_limit_and_workspace_are_enforced() {
        let mut c = controller();
        assert!(matches!(c.handle(jog(5.5, 0.0)), Err(Error::Domain(_))));
        c.handle(ControlMessage::SetConfig { config: Config::new(88.0, 0.0, 0.0, 0.0) }).unwrap();
        assert!(c.handle(jog(4.0, 0.0)).is_err());
        assert_eq!(c.commanded().phi1, 88.0);
    }

    #[test]
    fn compensation_needs_a_map() {
        let mut c = controller();
        assert!(matches!(c.handle(ControlMessage::SetCompensation { enabled: true }), Err(Error::State(_))));
        let map = Arc::new(ElasticityMap::identity(90.0, 10.0).unwrap());
        let mut c =
            Controller::new("m", PlantConfig::default(), ControllerOptions::default(), Some((map, "id".into())))
                .unwrap();
        c.handle(ControlMessage::SetCompensation { enabled: true }).unwrap();
        c.handle(jog(3.0, -2.0)).unwrap();
        assert!(c.actuated().max_abs_diff(&c.commanded()) < 1e-12);
    }

    #[test]
    fn abort_returns_control() {
        let mut c = controller();
        c.tick().unwrap();
        let Response::Ack { view_id: Some(id) } = c.handle(ControlMessage::SaveView { label: String::new() }).unwrap()
        else {
            panic!()
        };
        for _ in 0..10 {
            c.handle(jog(1.0, 0.0)).unwrap();
            c.tick().unwrap();
        }
        c.handle(ControlMessage::Recover { view_id: id }).unwrap();
        c.tick().unwrap();
        c.handle(ControlMessage::Abort).unwrap();
        assert_eq!(c.mode(), Mode::Manual);
        c.handle(jog(1.0, 0.0)).unwrap();
    }

    #[test]
    fn replay_reproduces_noisy_samples() {
        let mut plant = PlantConfig::default();
        plant.noise = NoiseModel::from_rms(1.0, 0.5);
        plant.seed = 17;
        let mut c = Controller::new("r", plant, ControllerOptions::default(), None).unwrap();
        c.tick().unwrap();
        for k in 0..12 {
            c.handle(jog(0.5, if k % 2 == 0 { 0.5 } else { -0.25 })).unwrap();
            c.tick().unwrap();
            c.tick().unwrap();
        }
        let id = match c.handle(ControlMessage::SaveView { label: "x".into() }).unwrap() {
            Response::Ack { view_id } => view_id.unwrap(),
            _ => panic!(),
        };
        let _ = c.handle(jog(9.0, 0.0));
        c.handle(ControlMessage::SetConfig { config: Config::STRAIGHT }).unwrap();
        c.tick().unwrap();
        c.handle(ControlMessage::Recover { view_id: id }).unwrap();
        c.run_recovery(100).unwrap();
        let session = c.into_session();
        let report = replay(&session, None).unwrap();
        assert!(report.is_identical(), "first mismatch at {:?}", report.first_mismatch);
        assert_eq!(report.samples, session.em_samples().count());
    }
}
