//! Scripted recording and bitwise replay.
//!
//! Script format, one entry per line; blank lines and `#` comments are skipped:
//!
//! ```text
//! {"v":1,"kind":"jog","delta":{"phi1":0.5}}
//! tick 25
//! {"v":1,"kind":"recover","view_id":"view-1"}
//! ```
//!
//! Each message is followed by one control tick. An accepted `recover` ticks
//! until the path has been executed.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use icecath::gateway::{
    load_map, replay as replay_session, save_roadmap, ControlMessage, Controller, ControllerOptions, JogDelta,
    PlantConfig, Session,
};

const MAX_RECOVERY_TICKS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
enum Step {
    Send(ControlMessage),
    Tick(u64),
}

fn parse_script(text: &str) -> Result<Vec<Step>> {
    let mut steps = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let step = match line.strip_prefix("tick") {
            Some(count) => Step::Tick(count.trim().parse().with_context(|| format!("script line {}: tick count", n + 1))?),
            None => Step::Send(ControlMessage::from_json(line).with_context(|| format!("script line {}", n + 1))?),
        };
        steps.push(step);
    }
    Ok(steps)
}

/// Two views on an arc through the workspace, then a recovery to each.
fn demo_script() -> Vec<Step> {
    let jog = |phi1, phi2, phi3, d4| Step::Send(ControlMessage::Jog { delta: JogDelta { phi1, phi2, phi3, d4 } });
    let mut s = vec![Step::Tick(1)];
    s.extend((0..24).map(|_| jog(0.5, 0.0, 0.25, 0.0)));
    s.push(Step::Send(ControlMessage::SaveView { label: "four-chamber".into() }));
    s.extend((0..20).map(|_| jog(0.0, 0.5, 0.0, 0.3)));
    s.push(Step::Send(ControlMessage::SaveView { label: "septum".into() }));
    s.extend((0..16).map(|_| jog(-0.5, -0.25, -0.5, 0.0)));
    s.push(Step::Send(ControlMessage::Recover { view_id: "view-1".into() }));
    s.push(Step::Send(ControlMessage::Recover { view_id: "view-2".into() }));
    s.push(Step::Send(ControlMessage::QueryState));
    s
}

pub fn record(
    plant: PlantConfig,
    script: Option<&Path>,
    map: Option<&Path>,
    id: &str,
    out: &Path,
    roadmap_out: Option<&Path>,
) -> Result<()> {
    let steps = match script {
        Some(p) => parse_script(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => demo_script(),
    };
    let map = match map {
        Some(p) => Some((Arc::new(load_map(p).with_context(|| format!("loading map {}", p.display()))?), p.display().to_string())),
        None => None,
    };
    let mut ctl = Controller::new(id, plant, ControllerOptions::default(), map)?;
    for step in steps {
        match step {
            Step::Tick(n) => {
                for _ in 0..n {
                    ctl.tick()?;
                }
            }
            Step::Send(msg) => {
                let recover = matches!(msg, ControlMessage::Recover { .. });
                let name = msg.name();
                match ctl.handle(msg) {
                    Ok(_) if recover => ctl.run_recovery(MAX_RECOVERY_TICKS)?,
                    Ok(_) => {}
                    Err(e) => eprintln!("tick {}: {name} refused: {e}", ctl.tick_count()),
                }
                ctl.tick()?;
            }
        }
    }
    ctl.session().save(out).with_context(|| format!("saving session {}", out.display()))?;
    if let Some(path) = roadmap_out {
        save_roadmap(ctl.roadmap(), ctl.views(), path).with_context(|| format!("saving roadmap {}", path.display()))?;
    }
    let snap = ctl.snapshot();
    eprintln!(
        "{} events over {} ticks, {} roadmap vertices, {} views, written to {}",
        ctl.session().events().len(),
        snap.tick,
        snap.roadmap.vertices,
        snap.views.len(),
        out.display()
    );
    Ok(())
}

/// Returns whether the replay matched.
pub fn replay(path: &Path, map: Option<&Path>) -> Result<bool> {
    let session = Session::load(path).with_context(|| format!("loading session {}", path.display()))?;
    let map_path = match (map, &session.header().map) {
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(name)) if Path::new(name).exists() => Some(Path::new(name).to_path_buf()),
        (None, Some(name)) => Some(path.parent().unwrap_or(Path::new(".")).join(name)),
        (None, None) => None,
    };
    let map = match map_path {
        Some(p) => Some(Arc::new(load_map(&p).with_context(|| format!("loading map {}", p.display()))?)),
        None => None,
    };
    let report = replay_session(&session, map)?;
    println!("events {} samples {} identical {}", report.events, report.samples, report.is_identical());
    if let Some(i) = report.first_mismatch {
        println!("first mismatch at event {i}");
    }
    if report.events == 0 {
        bail!("session {} has no events", path.display());
    }
    Ok(report.is_identical())
}
