//! TOML run configuration for data generation and control problems.
//!
//! ```toml
//! mesh = "finger.mesh"        # or builtin:strip, builtin:finger, builtin:chain, builtin:oscillator
//! h = 0.004
//! steps = 500
//! seed = 1
//!
//! [initial]
//! velocity = [0.0, 1.0, 0.0]
//! vertices = [10, 21, 32]     # empty: every free vertex
//! velocity_noise = 0.0
//! displacement_noise = 0.0
//!
//! [forcing]
//! gravity = [0.0, -9.81, 0.0]
//! impulses = [{ step = 0, vertex = 32, force = [0.0, 1.0, 0.0] }]
//! pressures = [{ start = 0, values = [5.0, 0.0, 2.0] }]
//!
//! [fit]
//! rank = { kind = "energy", target = 0.9999 }
//! clamp_unit_disk = true
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{chamber_forces, Chamber};
use crate::dmd::{FitOptions, SnapshotSet};
use crate::error::{Error, Result};
use crate::refsim::mesh::Mesh;
use crate::refsim::{simulate_trajectory, ElasticModel, FullState, NewtonOptions, SpringLaw};
use crate::scenarios::{self, StripSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: String,
    pub h: f64,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub initial: InitialCondition,
    #[serde(default)]
    pub forcing: ForcingSchedule,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCondition {
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub vertices: Vec<usize>,
    /// Uniform noise amplitude on every free velocity component.
    #[serde(default)]
    pub velocity_noise: f64,
    #[serde(default)]
    pub displacement_noise: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingSchedule {
    #[serde(default)]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub impulses: Vec<Impulse>,
    #[serde(default)]
    pub pressures: Vec<PressureSegment>,
}

/// Force (Newtons) on one vertex during a single step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Impulse {
    pub step: usize,
    pub vertex: usize,
    pub force: [f64; 3],
}

/// Chamber pressures held from step `start` until the next segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressureSegment {
    pub start: usize,
    pub values: Vec<f64>,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::Config(format!("h must be positive, got {}", self.h)));
        }
        if self.steps < 2 {
            return Err(Error::Config(format!("steps must be at least 2, got {}", self.steps)));
        }
        let starts: Vec<usize> = self.forcing.pressures.iter().map(|p| p.start).collect();
        if starts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("pressure segments must have increasing start steps".into()));
        }
        Ok(())
    }

    pub fn mesh(&self) -> Result<Mesh> {
        load_mesh(&self.mesh, &self.base_dir)
    }

    /// The configured body, with gravity applied.
    pub fn body(&self) -> Result<Mesh> {
        let mut mesh = self.mesh()?;
        mesh.model = mesh.model.with_gravity(self.forcing.gravity);
        Ok(mesh)
    }

    /// Initial state, deterministic in `seed`.
    pub fn initial_state(&self, model: &ElasticModel, seed: u64) -> Result<FullState> {
        let ic = &self.initial;
        let n = model.n_vertices();
        if let Some(&bad) = ic.vertices.iter().find(|&&v| v >= n) {
            return Err(Error::Config(format!("initial vertex {bad} out of range")));
        }
        let targets: Vec<usize> = if ic.vertices.is_empty() { (0..n).collect() } else { ic.vertices.clone() };
        let mut s = scenarios::impulse(model, &targets, ic.velocity);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in (0..n).filter(|&v| !model.is_fixed(v)) {
            for c in 0..3 {
                if ic.velocity_noise > 0.0 {
                    s.velocities[3 * v + c] += rng.gen_range(-ic.velocity_noise..=ic.velocity_noise);
                }
                if ic.displacement_noise > 0.0 {
                    s.positions[3 * v + c] += rng.gen_range(-ic.displacement_noise..=ic.displacement_noise);
                }
            }
        }
        Ok(s)
    }

    /// Runs the reference simulation described by the config.
    pub fn simulate(&self, seed: u64) -> Result<SnapshotSet> {
        let mesh = self.body()?;
        let s0 = self.initial_state(&mesh.model, seed)?;
        let n = mesh.model.n_vertices();
        if let Some(i) = self.forcing.impulses.iter().find(|i| i.vertex >= n) {
            return Err(Error::Config(format!("impulse vertex {} out of range", i.vertex)));
        }
        if let Some(p) = self.forcing.pressures.iter().find(|p| p.values.len() != mesh.chambers.len()) {
            return Err(Error::Config(format!(
                "pressure segment at step {} has {} values but the mesh has {} chambers",
                p.start,
                p.values.len(),
                mesh.chambers.len()
            )));
        }
        let model = &mesh.model;
        let chambers = &mesh.chambers;
        chamber_forces(model, model.rest_positions(), chambers)?;
        let schedule = &self.forcing;
        let mut forcing = |t: usize, s: &FullState, out: &mut [f64]| {
            out.iter_mut().for_each(|v| *v = 0.0);
            for imp in schedule.impulses.iter().filter(|i| i.step == t) {
                for c in 0..3 {
                    out[3 * imp.vertex + c] += imp.force[c];
                }
            }
            if let Some(seg) = schedule.pressures.iter().rev().find(|p| p.start <= t) {
                add_pressure_loads(model, chambers, &s.positions, &seg.values, out);
            }
        };
        let snaps = simulate_trajectory(model, &s0, self.h, self.steps, &mut forcing, &NewtonOptions::default())?;
        snaps.with_rest_positions(model.rest_positions().to_vec())
    }
}

/// Adds the follower loads of chamber pressures `c` at `positions` to `out`.
///
/// Panics if a chamber face references a vertex outside the model.
pub fn add_pressure_loads(model: &ElasticModel, chambers: &[Chamber], positions: &[f64], c: &[f64], out: &mut [f64]) {
    let unit = chamber_forces(model, positions, chambers).expect("chamber faces reference valid vertices");
    for (cj, fj) in c.iter().zip(&unit) {
        for (o, f) in out.iter_mut().zip(fj) {
            *o += cj * f;
        }
    }
}

/// Loads a mesh file, or a built-in body named `builtin:<name>`.
pub fn load_mesh(spec: &str, base_dir: &Path) -> Result<Mesh> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        let strip = StripSpec::default();
        return match name {
            "strip" => Ok(Mesh { model: scenarios::strip(&strip)?, chambers: vec![] }),
            "finger" => scenarios::finger(&strip, 3),
            "chain" => Ok(Mesh { model: scenarios::chain(10, 1.0, 1.0, 1.0, SpringLaw::Linear)?, chambers: vec![] }),
            "oscillator" => Ok(Mesh { model: scenarios::oscillator(1.0, 1.0, SpringLaw::Linear)?, chambers: vec![] }),
            _ => Err(Error::Config(format!("unknown builtin mesh {name:?}"))),
        };
    }
    let path = base_dir.join(spec);
    Mesh::load(&path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read mesh {}: {io}", path.display())),
        other => other,
    })
}

/// Goal of one vertex: its displacement from rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexTarget {
    pub vertex: usize,
    pub goal: [f64; 3],
}

/// Control problem file.
///
/// ```toml
/// mesh = "builtin:finger"
/// horizon = 150
/// iterations = 5
/// momentum_weight = 1.0
/// targets = [{ vertex = 21, goal = [0.0, 0.1, 0.0] }]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub mesh: String,
    pub horizon: u64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_momentum_weight")]
    pub momentum_weight: f64,
    #[serde(default)]
    pub targets: Vec<VertexTarget>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_iterations() -> usize {
    5
}

fn default_momentum_weight() -> f64 {
    1.0
}

impl ControlConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ControlConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn mesh(&self) -> Result<Mesh> {
        load_mesh(&self.mesh, &self.base_dir)
    }
}
