//! Versioned text files for correction maps and roadmaps.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! load/save cycle reproduces every `f64` bit for bit.
//!
//! Map file, row-major with `phi1` as the outer index:
//!
//! ```text
//! ICECATH-MAP 1
//! workspace 90
//! resolution 30
//! source dense_grid
//! nodes 7
//! -91.84 -89.02
//! ...                      (nodes * nodes lines of phi1' phi2')
//! ```
//!
//! Roadmap file:
//!
//! ```text
//! ICECATH-ROADMAP 1
//! epsilon 1
//! weights 1 1 1 1
//! vertices 2
//! 0 0 0 0
//! 0.5 0 0 0
//! edges 1
//! 0 1 0.5
//! last 50 0 0 0            (quantized key of the previous observation, or "last none")
//! views 1 1                (count, id counter)
//! view-1 0.5 0 0 0 "label" (id, config, JSON-quoted label)
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::str::{FromStr, SplitWhitespace};

use crate::compensation::{CalibrationSource, ElasticityMap};
use crate::error::{Error, Result};
use crate::kinematics::Config;
use crate::planner::{Metric, Roadmap, View, ViewLibrary};

pub const MAP_MAGIC: &str = "ICECATH-MAP";
pub const ROADMAP_MAGIC: &str = "ICECATH-ROADMAP";
pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Self { lines: text.lines().enumerate(), line: 0 }
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Format(format!("line {}: {msg}", self.line))
    }

    fn next_line(&mut self) -> Result<&'a str> {
        for (i, l) in self.lines.by_ref() {
            if !l.trim().is_empty() {
                self.line = i + 1;
                return Ok(l);
            }
        }
        Err(Error::Format("unexpected end of file".into()))
    }

    /// Next line, which must start with `key`; returns the remaining fields.
    fn keyed(&mut self, key: &str) -> Result<SplitWhitespace<'a>> {
        let line = self.next_line()?;
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some(k) if k == key => Ok(fields),
            other => Err(self.err(format!("expected '{key}', found '{}'", other.unwrap_or("")))),
        }
    }

    fn parse<T: FromStr>(&self, field: Option<&str>) -> Result<T> {
        let f = field.ok_or_else(|| self.err("missing field"))?;
        f.parse().map_err(|_| self.err(format!("cannot parse '{f}'")))
    }

    fn value<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let mut f = self.keyed(key)?;
        let v = self.parse(f.next())?;
        self.done(f)?;
        Ok(v)
    }

    fn floats<const N: usize>(&self, fields: &mut SplitWhitespace<'_>) -> Result<[f64; N]> {
        let mut out = [0.0; N];
        for v in &mut out {
            *v = self.parse(fields.next())?;
        }
        Ok(out)
    }

    fn done(&self, mut fields: SplitWhitespace<'_>) -> Result<()> {
        match fields.next() {
            None => Ok(()),
            Some(f) => Err(self.err(format!("unexpected trailing field '{f}'"))),
        }
    }

    fn header(&mut self, magic: &str) -> Result<()> {
        let mut f = self.keyed(magic).map_err(|_| Error::Format(format!("not a {magic} file")))?;
        let version: u32 = self.parse(f.next())?;
        if version != FORMAT_VERSION {
            return Err(self.err(format!("unsupported version {version}")));
        }
        self.done(f)
    }

    fn finish(&mut self) -> Result<()> {
        match self.next_line() {
            Err(_) => Ok(()),
            Ok(l) => Err(self.err(format!("unexpected content '{l}'"))),
        }
    }
}

pub fn map_to_string(map: &ElasticityMap) -> String {
    let mut out = String::new();
    writeln!(out, "{MAP_MAGIC} {FORMAT_VERSION}").unwrap();
    writeln!(out, "workspace {}", map.workspace()).unwrap();
    writeln!(out, "resolution {}", map.resolution()).unwrap();
    writeln!(out, "source {}", map.source()).unwrap();
    writeln!(out, "nodes {}", map.nodes_per_axis()).unwrap();
    for (a, b) in map.table() {
        writeln!(out, "{a} {b}").unwrap();
    }
    out
}

pub fn map_from_str(text: &str) -> Result<ElasticityMap> {
    let mut r = Reader::new(text);
    r.header(MAP_MAGIC)?;
    let workspace: f64 = r.value("workspace")?;
    let resolution: f64 = r.value("resolution")?;
    let source: CalibrationSource = r.value("source")?;
    let nodes: usize = r.value("nodes")?;
    let count = nodes.checked_mul(nodes).ok_or_else(|| r.err("node count overflows"))?;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let line = r.next_line()?;
        let mut f = line.split_whitespace();
        let [a, b] = r.floats::<2>(&mut f)?;
        r.done(f)?;
        table.push((a, b));
    }
    r.finish()?;
    let map = ElasticityMap::from_table(workspace, resolution, source, table)?;
    if map.nodes_per_axis() != nodes {
        return Err(Error::Format(format!("header says {nodes} nodes, grid has {}", map.nodes_per_axis())));
    }
    Ok(map)
}

pub fn roadmap_to_string(g: &Roadmap, views: &ViewLibrary) -> String {
    let mut out = String::new();
    let cfg = |q: &Config| format!("{} {} {} {}", q.phi1, q.phi2, q.phi3, q.d4);
    writeln!(out, "{ROADMAP_MAGIC} {FORMAT_VERSION}").unwrap();
    writeln!(out, "epsilon {}", g.epsilon()).unwrap();
    let w = g.metric().weights;
    writeln!(out, "weights {} {} {} {}", w[0], w[1], w[2], w[3]).unwrap();
    writeln!(out, "vertices {}", g.vertex_count()).unwrap();
    for q in g.vertices() {
        writeln!(out, "{}", cfg(q)).unwrap();
    }
    let edges = g.edges();
    writeln!(out, "edges {}", edges.len()).unwrap();
    for (a, b, w) in edges {
        writeln!(out, "{a} {b} {w}").unwrap();
    }
    match g.last_observed() {
        Some(k) => writeln!(out, "last {} {} {} {}", k[0], k[1], k[2], k[3]).unwrap(),
        None => writeln!(out, "last none").unwrap(),
    }
    writeln!(out, "views {} {}", views.len(), views.next_id()).unwrap();
    for v in views.views() {
        let label = serde_json::to_string(&v.label).expect("strings serialize");
        writeln!(out, "{} {} {label}", v.id, cfg(&v.config)).unwrap();
    }
    out
}

pub fn roadmap_from_str(text: &str) -> Result<(Roadmap, ViewLibrary)> {
    let mut r = Reader::new(text);
    r.header(ROADMAP_MAGIC)?;
    let epsilon: f64 = r.value("epsilon")?;
    let mut f = r.keyed("weights")?;
    let weights = r.floats::<4>(&mut f)?;
    r.done(f)?;

    let n: usize = r.value("vertices")?;
    let mut vertices = Vec::with_capacity(n);
    for _ in 0..n {
        let line = r.next_line()?;
        let mut f = line.split_whitespace();
        vertices.push(Config::from_array(r.floats::<4>(&mut f)?));
        r.done(f)?;
    }

    let m: usize = r.value("edges")?;
    let mut edges = Vec::with_capacity(m);
    for _ in 0..m {
        let line = r.next_line()?;
        let mut f = line.split_whitespace();
        let a: usize = r.parse(f.next())?;
        let b: usize = r.parse(f.next())?;
        let w: f64 = r.parse(f.next())?;
        r.done(f)?;
        edges.push((a, b, w));
    }

    let mut f = r.keyed("last")?;
    let last = match f.clone().next() {
        Some("none") => {
            f.next();
            None
        }
        _ => {
            let mut key = [0i64; 4];
            for k in &mut key {
                *k = r.parse(f.next())?;
            }
            Some(key)
        }
    };
    r.done(f)?;

    let mut f = r.keyed("views")?;
    let count: usize = r.parse(f.next())?;
    let next_id: u64 = r.parse(f.next())?;
    r.done(f)?;
    let mut views = Vec::with_capacity(count);
    for _ in 0..count {
        let line = r.next_line()?;
        let mut f = line.splitn(6, ' ');
        let id = f.next().filter(|s| !s.is_empty()).ok_or_else(|| r.err("missing view id"))?.to_string();
        let mut q = [0.0; 4];
        for v in &mut q {
            *v = r.parse(f.next())?;
        }
        let label: String = serde_json::from_str(f.next().ok_or_else(|| r.err("missing view label"))?)
            .map_err(|e| r.err(format!("view label: {e}")))?;
        views.push(View { id, config: Config::from_array(q), label });
    }
    r.finish()?;

    let g = Roadmap::from_parts(epsilon, Metric { weights }, vertices, &edges, last)?;
    if g.edge_count() != m {
        return Err(Error::Format(format!("{m} edges listed, {} distinct", g.edge_count())));
    }
    for v in &views {
        if !g.contains(&v.config) {
            return Err(Error::Format(format!("view '{}' is not a roadmap vertex", v.id)));
        }
    }
    Ok((g, ViewLibrary::from_parts(views, next_id)?))
}

pub fn save_map(map: &ElasticityMap, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, map_to_string(map))?;
    Ok(())
}

pub fn load_map(path: impl AsRef<Path>) -> Result<ElasticityMap> {
    map_from_str(&std::fs::read_to_string(path)?)
}

pub fn save_roadmap(g: &Roadmap, views: &ViewLibrary, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, roadmap_to_string(g, views))?;
    Ok(())
}

pub fn load_roadmap(path: impl AsRef<Path>) -> Result<(Roadmap, ViewLibrary)> {
    roadmap_from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_round_trip() {
        let map = ElasticityMap::from_table(
            90.0,
            90.0,
            CalibrationSource::FivePoint,
            (0..9).map(|i| (i as f64 * 0.1 - 90.0, 1.0 / (i as f64 + 3.0))).collect(),
        )
        .unwrap();
        let text = map_to_string(&map);
        let back = map_from_str(&text).unwrap();
        assert_eq!(back, map);
        assert_eq!(map_to_string(&back), text);
    }

    #[test]
    fn map_rejects_damage() {
        let text = map_to_string(&ElasticityMap::identity(90.0, 45.0).unwrap());
        assert!(map_from_str(&text.replace("ICECATH-MAP 1", "ICECATH-MAP 2")).is_err());
        assert!(map_from_str(&text.replace("nodes 5", "nodes 4")).is_err());
        let truncated: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(map_from_str(&truncated).is_err());
        assert!(map_from_str(&format!("{text}1 2\n")).is_err());
    }

    #[test]
    fn roadmap_round_trip() {
        let mut g = Roadmap::default();
        for i in 0..6 {
            g.observe(&Config::new(i as f64 * 0.3, 0.1 * i as f64, -0.2, 1.0 / 3.0)).unwrap();
        }
        let mut views = ViewLibrary::new();
        views.save_view(&Config::new(0.3, 0.1, -0.2, 1.0 / 3.0), "long axis \"LA\" view", &g).unwrap();
        views.save_view(&Config::new(1.5, 0.5, -0.2, 1.0 / 3.0), "", &g).unwrap();
        let text = roadmap_to_string(&g, &views);
        let (g2, v2) = roadmap_from_str(&text).unwrap();
        assert_eq!(g2, g);
        assert_eq!(v2, views);
        assert_eq!(roadmap_to_string(&g2, &v2), text);
    }

    #[test]
    fn empty_roadmap_round_trip() {
        let text = roadmap_to_string(&Roadmap::default(), &ViewLibrary::new());
        let (g, v) = roadmap_from_str(&text).unwrap();
        assert_eq!(g.vertex_count(), 0);
        assert!(v.is_empty());
        assert!(text.contains("last none"));
    }
}
