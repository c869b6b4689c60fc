//! View recovery over a roadmap of visited configurations.
//!
//! While the operator steers, every new configuration becomes a roadmap vertex
//! connected to all earlier vertices within `epsilon`. Saved views point at
//! vertices. Recovery is an A* search over the recorded edges, so the robot only
//! ever moves through configurations it has already visited.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::Config;

/// Default density parameter (1 mm ≡ 1°).
pub const DEFAULT_EPSILON: f64 = 1.0;

/// Configurations closer than this on every coordinate are the same vertex.
pub const QUANTUM: f64 = 0.01;

pub type VertexKey = [i64; 4];

pub fn quantize(q: &Config) -> VertexKey {
    q.as_array().map(|v| (v / QUANTUM).round() as i64)
}

/// Weighted Euclidean distance over `(phi1, phi2, phi3, d4)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub weights: [f64; 4],
}

impl Default for Metric {
    fn default() -> Self {
        Self { weights: [1.0; 4] }
    }
}

impl Metric {
    pub fn distance(&self, a: &Config, b: &Config) -> f64 {
        let (a, b) = (a.as_array(), b.as_array());
        (0..4).map(|i| (self.weights[i] * (a[i] - b[i])).powi(2)).sum::<f64>().sqrt()
    }
}

/// What a call to [`Roadmap::observe`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    /// Same configuration as the previous observation.
    Unchanged,
    /// Configuration already a vertex; reached again.
    Revisited(usize),
    /// New vertex with this many edges.
    Inserted { vertex: usize, edges: usize },
}

/// Undirected graph of visited configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct Roadmap {
    epsilon: f64,
    metric: Metric,
    vertices: Vec<Config>,
    keys: Vec<VertexKey>,
    index: HashMap<VertexKey, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
    edge_count: usize,
    cells: HashMap<[i64; 4], Vec<usize>>,
    last: Option<VertexKey>,
}

impl Default for Roadmap {
    fn default() -> Self {
        Self::new(DEFAULT_EPSILON, Metric::default()).expect("default epsilon is valid")
    }
}

impl Roadmap {
    pub fn new(epsilon: f64, metric: Metric) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Domain(format!("density parameter {epsilon} must be positive")));
        }
        if metric.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Domain(format!("metric weights {:?} must be positive", metric.weights)));
        }
        Ok(Self {
            epsilon,
            metric,
            vertices: Vec::new(),
            keys: Vec::new(),
            index: HashMap::new(),
            adjacency: Vec::new(),
            edge_count: 0,
            cells: HashMap::new(),
            last: None,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn vertices(&self) -> &[Config] {
        &self.vertices
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    /// Each undirected edge once, `(i, j, weight)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out: Vec<(usize, usize, f64)> = self
            .adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, adj)| adj.iter().filter(move |(j, _)| *j > i).map(move |&(j, w)| (i, j, w)))
            .collect();
        out.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        out
    }

    pub fn vertex_of(&self, q: &Config) -> Option<usize> {
        self.index.get(&quantize(q)).copied()
    }

    pub fn contains(&self, q: &Config) -> bool {
        self.vertex_of(q).is_some()
    }

    pub fn last_observed(&self) -> Option<VertexKey> {
        self.last
    }

    fn cell(&self, q: &Config) -> [i64; 4] {
        let a = q.as_array();
        std::array::from_fn(|i| (a[i] * self.metric.weights[i] / self.epsilon).floor() as i64)
    }

    /// Vertices within `epsilon` of `q` (excluding an exact key match), ascending.
    fn within_epsilon(&self, q: &Config, key: &VertexKey) -> Vec<(usize, f64)> {
        let c = self.cell(q);
        let mut found = Vec::new();
        for offset in 0..81usize {
            let mut o = offset;
            let probe: [i64; 4] = std::array::from_fn(|i| {
                let d = (o % 3) as i64 - 1;
                o /= 3;
                c[i] + d
            });
            if let Some(members) = self.cells.get(&probe) {
                for &v in members {
                    if &self.keys[v] == key {
                        continue;
                    }
                    let d = self.metric.distance(&self.vertices[v], q);
                    if d <= self.epsilon {
                        found.push((v, d));
                    }
                }
            }
        }
        found.sort_by_key(|&(v, _)| v);
        found
    }

    fn insert_edge(&mut self, a: usize, b: usize, w: f64) {
        for (from, to) in [(a, b), (b, a)] {
            let adj = &mut self.adjacency[from];
            match adj.binary_search_by_key(&to, |&(v, _)| v) {
                Ok(_) => return,
                Err(pos) => adj.insert(pos, (to, w)),
            }
        }
        self.edge_count += 1;
    }

    fn push_vertex(&mut self, q: Config, key: VertexKey) -> usize {
        let id = self.vertices.len();
        self.vertices.push(q);
        self.keys.push(key);
        self.index.insert(key, id);
        self.adjacency.push(Vec::new());
        let cell = self.cell(&q);
        self.cells.entry(cell).or_default().push(id);
        id
    }

    /// Records the current configuration.
    pub fn observe(&mut self, q: &Config) -> Result<Observation> {
        if !q.is_finite() {
            return Err(Error::Domain(format!("cannot observe non-finite configuration {q:?}")));
        }
        let key = quantize(q);
        if self.last == Some(key) {
            return Ok(Observation::Unchanged);
        }
        self.last = Some(key);
        if let Some(&v) = self.index.get(&key) {
            return Ok(Observation::Revisited(v));
        }
        let near = self.within_epsilon(q, &key);
        let id = self.push_vertex(*q, key);
        for &(v, d) in &near {
            self.insert_edge(v, id, d);
        }
        Ok(Observation::Inserted { vertex: id, edges: near.len() })
    }

    /// Observes every configuration in order.
    pub fn observe_all<'a>(&mut self, trace: impl IntoIterator<Item = &'a Config>) -> Result<()> {
        for q in trace {
            self.observe(q)?;
        }
        Ok(())
    }

    /// Rebuilds a roadmap from stored parts; every edge must respect `epsilon`.
    pub fn from_parts(
        epsilon: f64,
        metric: Metric,
        vertices: Vec<Config>,
        edges: &[(usize, usize, f64)],
        last: Option<VertexKey>,
    ) -> Result<Self> {
        let mut g = Self::new(epsilon, metric)?;
        for q in vertices {
            if !q.is_finite() {
                return Err(Error::Format(format!("non-finite vertex {q:?}")));
            }
            let key = quantize(&q);
            if g.index.contains_key(&key) {
                return Err(Error::Format(format!("duplicate vertex {q:?}")));
            }
            g.push_vertex(q, key);
        }
        for &(a, b, w) in edges {
            if a >= g.vertices.len() || b >= g.vertices.len() || a == b {
                return Err(Error::Format(format!("invalid edge ({a}, {b})")));
            }
            if !(w <= epsilon) {
                return Err(Error::Format(format!("edge ({a}, {b}) weight {w} exceeds epsilon {epsilon}")));
            }
            g.insert_edge(a, b, w);
        }
        g.last = last;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub id: String,
    pub config: Config,
    pub label: String,
}

/// Views saved by the operator, in save order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewLibrary {
    views: Vec<View>,
    next_id: u64,
}

impl ViewLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Rebuilds a library from stored views; `next_id` is the counter behind the last issued id.
    pub fn from_parts(views: Vec<View>, next_id: u64) -> Result<Self> {
        let mut ids: Vec<&str> = views.iter().map(|v| v.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Format("duplicate view ids".into()));
        }
        Ok(Self { views, next_id })
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn get(&self, id: &str) -> Option<&View> {
        self.views.iter().find(|v| v.id == id)
    }

    /// Saves the vertex at `q`. The stored configuration is the vertex's own.
    pub fn save_view(&mut self, q: &Config, label: &str, g: &Roadmap) -> Result<&View> {
        let v = g
            .vertex_of(q)
            .ok_or_else(|| Error::State(format!("configuration {q:?} has not been observed")))?;
        self.next_id += 1;
        self.views.push(View { id: format!("view-{}", self.next_id), config: g.vertices[v], label: label.to_string() });
        Ok(self.views.last().expect("just pushed"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<Config>,
    pub total_cost: f64,
}

#[derive(PartialEq)]
struct Frontier {
    f: f64,
    h: f64,
    key: VertexKey,
    vertex: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    // BinaryHeap is a max-heap: invert so the smallest f, then h, then key pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.key.cmp(&self.key))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest recorded path from `start` to the saved view `view_id`.
pub fn query(start: &Config, view_id: &str, g: &Roadmap, views: &ViewLibrary) -> Result<Path> {
    let view = views.get(view_id).ok_or_else(|| Error::Lookup(format!("unknown view '{view_id}'")))?;
    let s = g
        .vertex_of(start)
        .ok_or_else(|| Error::State(format!("start {start:?} is not a roadmap vertex")))?;
    let goal = g
        .vertex_of(&view.config)
        .ok_or_else(|| Error::State(format!("view '{view_id}' is not a roadmap vertex")))?;
    astar(g, s, goal)
}

/// A* between two vertices with the metric distance as heuristic.
pub fn astar(g: &Roadmap, start: usize, goal: usize) -> Result<Path> {
    let n = g.vertex_count();
    if start >= n || goal >= n {
        return Err(Error::Lookup(format!("vertex out of range ({start}, {goal}) for {n} vertices")));
    }
    let target = g.vertices[goal];
    let h = |v: usize| g.metric.distance(&g.vertices[v], &target);

    let mut cost = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    cost[start] = 0.0;
    open.push(Frontier { f: h(start), h: h(start), key: g.keys[start], vertex: start });

    while let Some(Frontier { vertex, .. }) = open.pop() {
        if closed[vertex] {
            continue;
        }
        if vertex == goal {
            let mut waypoints = vec![g.vertices[goal]];
            let mut v = goal;
            while v != start {
                v = parent[v];
                waypoints.push(g.vertices[v]);
            }
            waypoints.reverse();
            return Ok(Path { waypoints, total_cost: cost[goal] });
        }
        closed[vertex] = true;
        for &(next, w) in &g.adjacency[vertex] {
            if closed[next] {
                continue;
            }
            let c = cost[vertex] + w;
            if c < cost[next] {
                cost[next] = c;
                parent[next] = vertex;
                let hn = h(next);
                open.push(Frontier { f: c + hn, h: hn, key: g.keys[next], vertex: next });
            }
        }
    }
    Err(Error::Disconnected)
}

/// Receives waypoints during execution; an `Err` aborts the run.
pub trait WaypointSink {
    fn accept(&mut self, index: usize, q: &Config) -> std::result::Result<(), String>;
}

impl<F> WaypointSink for F
where
    F: FnMut(usize, &Config) -> std::result::Result<(), String>,
{
    fn accept(&mut self, index: usize, q: &Config) -> std::result::Result<(), String> {
        self(index, q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    /// Waypoints handed to the sink, including a rejected one.
    pub emitted: usize,
    pub accepted: usize,
    /// Last accepted waypoint.
    pub final_config: Option<Config>,
    pub aborted: bool,
    pub error: Option<String>,
}

/// Step-by-step execution of a path; the control loop advances it once per tick.
#[derive(Debug, Clone, PartialEq)]
pub struct PathExecution {
    path: Path,
    report: ExecutionReport,
}

impl PathExecution {
    pub fn new(path: Path) -> Self {
        Self { path, report: ExecutionReport { emitted: 0, accepted: 0, final_config: None, aborted: false, error: None } }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn report(&self) -> &ExecutionReport {
        &self.report
    }

    pub fn is_finished(&self) -> bool {
        self.report.aborted || self.report.emitted == self.path.waypoints.len()
    }

    /// Emits the next waypoint. Returns it when accepted, `None` once finished.
    pub fn step(&mut self, sink: &mut impl WaypointSink) -> Option<Config> {
        if self.is_finished() {
            return None;
        }
        let i = self.report.emitted;
        let q = self.path.waypoints[i];
        self.report.emitted += 1;
        match sink.accept(i, &q) {
            Ok(()) => {
                self.report.accepted += 1;
                self.report.final_config = Some(q);
                Some(q)
            }
            Err(e) => {
                self.report.aborted = true;
                self.report.error = Some(e);
                None
            }
        }
    }

    pub fn abort(&mut self, reason: &str) {
        if !self.is_finished() {
            self.report.aborted = true;
            self.report.error = Some(reason.to_string());
        }
    }

    pub fn into_report(self) -> ExecutionReport {
        self.report
    }
}

/// Streams `path` into `sink`, pausing `pacing` between waypoints when given.
pub fn execute(path: &Path, sink: &mut impl WaypointSink, pacing: Option<Duration>) -> ExecutionReport {
    let mut run = PathExecution::new(path.clone());
    while !run.is_finished() {
        run.step(sink);
        if let (Some(d), false) = (pacing, run.is_finished()) {
            std::thread::sleep(d);
        }
    }
    run.into_report()
}
