//! Plain-text mesh format.
//!
//! ```text
//! v x y z          vertex rest position
//! s i j k          spring between vertices i and j with stiffness k
//! f i              fixed vertex
//! m value          uniform vertex mass
//! mv i value       per-vertex mass (overrides the uniform value)
//! c id i j k       chamber face (triangle)
//! c id i j         chamber face (segment, planar meshes)
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. Spring rest lengths
//! come from the rest positions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::ElasticModel;
use crate::control::{Chamber, Face};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Mesh {
    pub model: ElasticModel,
    pub chambers: Vec<Chamber>,
}

impl Mesh {
    pub fn parse(text: &str) -> Result<Self> {
        let mut verts = Vec::new();
        let mut springs = Vec::new();
        let mut fixed = Vec::new();
        let mut uniform_mass = None;
        let mut vertex_mass = Vec::new();
        let mut chambers: BTreeMap<usize, Vec<Face>> = BTreeMap::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Format(format!("mesh line {}: {msg}: {raw:?}", lineno + 1));
            let mut it = line.split_whitespace();
            let tag = it.next().unwrap_or_default();
            let rest: Vec<&str> = it.collect();
            let float = |s: &str| s.parse::<f64>().map_err(|_| bad("expected a number"));
            let index = |s: &str| s.parse::<usize>().map_err(|_| bad("expected an index"));
            match (tag, rest.len()) {
                ("v", 3) => {
                    for s in &rest {
                        verts.push(float(s)?);
                    }
                }
                ("s", 3) => springs.push((index(rest[0])?, index(rest[1])?, float(rest[2])?)),
                ("f", 1) => fixed.push(index(rest[0])?),
                ("m", 1) => uniform_mass = Some(float(rest[0])?),
                ("mv", 2) => vertex_mass.push((index(rest[0])?, float(rest[1])?)),
                ("c", 4) => chambers.entry(index(rest[0])?).or_default().push(Face::Triangle([
                    index(rest[1])?,
                    index(rest[2])?,
                    index(rest[3])?,
                ])),
                ("c", 3) => chambers
                    .entry(index(rest[0])?)
                    .or_default()
                    .push(Face::Segment([index(rest[1])?, index(rest[2])?])),
                _ => return Err(bad("unrecognized record")),
            }
        }
        let n = verts.len() / 3;
        let mut masses = vec![uniform_mass.unwrap_or(1.0); n];
        for (i, m) in vertex_mass {
            if i >= n {
                return Err(Error::Format(format!("mass for vertex {i} out of range")));
            }
            masses[i] = m;
        }
        let model = ElasticModel::new(verts, &springs, masses, &fixed)?;
        let chambers = chambers
            .into_iter()
            .map(|(id, faces)| Chamber { id, faces })
            .collect::<Vec<_>>();
        for c in &chambers {
            for f in &c.faces {
                if f.vertices().iter().any(|&v| v >= n) {
                    return Err(Error::Format(format!("chamber {} references a vertex out of range", c.id)));
                }
            }
        }
        Ok(Self { model, chambers })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let rest = self.model.rest_positions();
        for v in rest.chunks(3) {
            let _ = writeln!(out, "v {:?} {:?} {:?}", v[0], v[1], v[2]);
        }
        for s in self.model.springs() {
            let _ = writeln!(out, "s {} {} {:?}", s.i, s.j, s.stiffness);
        }
        for f in self.model.fixed_vertices() {
            let _ = writeln!(out, "f {f}");
        }
        let masses = self.model.masses();
        if masses.iter().all(|&m| m == masses[0]) {
            let _ = writeln!(out, "m {:?}", masses[0]);
        } else {
            for (i, m) in masses.iter().enumerate() {
                let _ = writeln!(out, "mv {i} {m:?}");
            }
        }
        for c in &self.chambers {
            for f in &c.faces {
                match f {
                    Face::Triangle([a, b, d]) => {
                        let _ = writeln!(out, "c {} {a} {b} {d}", c.id);
                    }
                    Face::Segment([a, b]) => {
                        let _ = writeln!(out, "c {} {a} {b}", c.id);
                    }
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# two-vertex chain with one chamber
v 0 0 0
v 1 0 0
v 1 1 0
s 0 1 10
s 1 2 5.5
f 0
m 0.5
mv 2 2
c 0 0 1 2
c 1 1 2
";

    #[test]
    fn parses_all_records() {
        let mesh = Mesh::parse(SAMPLE).unwrap();
        assert_eq!(mesh.model.n_vertices(), 3);
        assert_eq!(mesh.model.springs().len(), 2);
        assert!((mesh.model.springs()[1].rest_length - 1.0).abs() < 1e-15);
        assert_eq!(mesh.model.fixed_vertices(), vec![0]);
        assert_eq!(mesh.model.masses(), &[0.5, 0.5, 2.0]);
        assert_eq!(mesh.chambers.len(), 2);
        assert_eq!(mesh.chambers[0].faces, vec![Face::Triangle([0, 1, 2])]);
        assert_eq!(mesh.chambers[1].faces, vec![Face::Segment([1, 2])]);
    }

    #[test]
    fn text_round_trip_is_stable() {
        let mesh = Mesh::parse(SAMPLE).unwrap();
        let a = mesh.to_text();
        let b = Mesh::parse(&a).unwrap().to_text();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Mesh::parse("v 0 0\n").is_err());
        assert!(Mesh::parse("v 0 0 0\nv 1 0 0\ns 0 1 x\n").is_err());
        assert!(Mesh::parse("v 0 0 0\nv 1 0 0\ns 0 1 1\nc 0 0 5\n").is_err());
        assert!(Mesh::parse("q 1\n").is_err());
    }
}
