//! Full-space mass-spring reference simulator.
//!
//! A nonlinear spring network advanced with implicit Euler and a Newton solve
//! per step. It generates training snapshots and serves as the baseline the
//! reduced model is compared against.

mod integrator;
pub mod mesh;
mod trajectory;

pub use integrator::{implicit_euler_step, NewtonOptions};
pub use trajectory::{simulate_trajectory, ConstantForce, Forcing, NoForcing};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::statespace::LiftedState;

/// Spring force law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpringLaw {
    /// `f = -k (|d| - L) d / |d|`
    #[default]
    Nonlinear,
    /// `f = -k (d - d_rest)`; the one-step map is exactly linear.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spring {
    pub i: usize,
    pub j: usize,
    pub rest_length: f64,
    pub stiffness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticModel {
    rest: Vec<f64>,
    springs: Vec<Spring>,
    masses: Vec<f64>,
    fixed: Vec<bool>,
    gravity: [f64; 3],
    law: SpringLaw,
    /// `free_index[dof]` is the column of `dof` in the reduced Newton system.
    free_index: Vec<Option<usize>>,
    free_dofs: Vec<usize>,
}

impl ElasticModel {
    /// `rest_positions` is a flat `3n` vector. Springs are `(i, j, stiffness)`
    /// with rest lengths taken from the rest positions.
    pub fn new(
        rest_positions: Vec<f64>,
        springs: &[(usize, usize, f64)],
        masses: Vec<f64>,
        fixed: &[usize],
    ) -> Result<Self> {
        if rest_positions.is_empty() || rest_positions.len() % 3 != 0 {
            return Err(Error::InvalidModel("rest positions must be a nonempty 3n vector".into()));
        }
        let n = rest_positions.len() / 3;
        check_len(n, masses.len())?;
        if let Some(i) = masses.iter().position(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidModel(format!("vertex {i} has non-positive mass")));
        }
        let mut fixed_mask = vec![false; n];
        for &f in fixed {
            if f >= n {
                return Err(Error::InvalidModel(format!("fixed vertex {f} out of range")));
            }
            fixed_mask[f] = true;
        }
        let mut out = Vec::with_capacity(springs.len());
        for &(i, j, k) in springs {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidModel(format!("invalid spring endpoints ({i}, {j})")));
            }
            if !(k > 0.0) {
                return Err(Error::InvalidModel(format!("spring ({i}, {j}) has non-positive stiffness")));
            }
            let l = (0..3)
                .map(|c| (rest_positions[3 * i + c] - rest_positions[3 * j + c]).powi(2))
                .sum::<f64>()
                .sqrt();
            if !(l > 0.0) {
                return Err(Error::InvalidModel(format!("spring ({i}, {j}) has zero rest length")));
            }
            out.push(Spring { i, j, rest_length: l, stiffness: k });
        }
        let mut model = Self {
            rest: rest_positions,
            springs: out,
            masses,
            fixed: fixed_mask,
            gravity: [0.0; 3],
            law: SpringLaw::Nonlinear,
            free_index: Vec::new(),
            free_dofs: Vec::new(),
        };
        model.index_free_dofs();
        Ok(model)
    }

    fn index_free_dofs(&mut self) {
        self.free_index = vec![None; self.rest.len()];
        self.free_dofs.clear();
        for v in 0..self.n_vertices() {
            if !self.fixed[v] {
                for c in 0..3 {
                    self.free_index[3 * v + c] = Some(self.free_dofs.len());
                    self.free_dofs.push(3 * v + c);
                }
            }
        }
    }

    pub fn with_gravity(mut self, g: [f64; 3]) -> Self {
        self.gravity = g;
        self
    }

    pub fn with_law(mut self, law: SpringLaw) -> Self {
        self.law = law;
        self
    }

    pub fn n_vertices(&self) -> usize {
        self.masses.len()
    }

    pub fn rest_positions(&self) -> &[f64] {
        &self.rest
    }

    pub fn springs(&self) -> &[Spring] {
        &self.springs
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn gravity(&self) -> [f64; 3] {
        self.gravity
    }

    pub fn law(&self) -> SpringLaw {
        self.law
    }

    pub fn is_fixed(&self, v: usize) -> bool {
        self.fixed[v]
    }

    pub fn fixed_vertices(&self) -> Vec<usize> {
        (0..self.n_vertices()).filter(|&v| self.fixed[v]).collect()
    }

    pub(crate) fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    /// Elastic potential at positions `x`.
    pub fn potential(&self, x: &[f64]) -> f64 {
        let mut e = 0.0;
        for s in &self.springs {
            let d = diff(x, s.i, s.j);
            match self.law {
                SpringLaw::Nonlinear => {
                    let l = norm3(d);
                    e += 0.5 * s.stiffness * (l - s.rest_length).powi(2);
                }
                SpringLaw::Linear => {
                    let d0 = diff(&self.rest, s.i, s.j);
                    let r = [d[0] - d0[0], d[1] - d0[1], d[2] - d0[2]];
                    e += 0.5 * s.stiffness * (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
                }
            }
        }
        e
    }

    /// Adds the gradient of the elastic potential (minus the internal force) to `grad`.
    pub(crate) fn add_potential_gradient(&self, x: &[f64], grad: &mut [f64]) {
        for s in &self.springs {
            let d = diff(x, s.i, s.j);
            let g = match self.law {
                SpringLaw::Nonlinear => {
                    let l = norm3(d);
                    if l < 1e-12 {
                        continue;
                    }
                    let c = s.stiffness * (l - s.rest_length) / l;
                    [c * d[0], c * d[1], c * d[2]]
                }
                SpringLaw::Linear => {
                    let d0 = diff(&self.rest, s.i, s.j);
                    [
                        s.stiffness * (d[0] - d0[0]),
                        s.stiffness * (d[1] - d0[1]),
                        s.stiffness * (d[2] - d0[2]),
                    ]
                }
            };
            for c in 0..3 {
                grad[3 * s.i + c] += g[c];
                grad[3 * s.j + c] -= g[c];
            }
        }
    }

    /// Internal elastic forces at positions `x` (flat `3n`).
    pub fn internal_forces(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.add_potential_gradient(x, &mut g);
        g.iter_mut().for_each(|v| *v = -*v);
        g
    }

    /// Adds `scale * H` to the dense free-DOF matrix `out` (row-major, `nf x nf`).
    /// With `project`, the transverse term of compressed springs is clamped so
    /// every spring block is positive semidefinite.
    pub(crate) fn add_hessian(&self, x: &[f64], scale: f64, project: bool, out: &mut [f64]) {
        let nf = self.free_dofs.len();
        for s in &self.springs {
            let block = match self.law {
                SpringLaw::Linear => {
                    let k = s.stiffness;
                    [[k, 0.0, 0.0], [0.0, k, 0.0], [0.0, 0.0, k]]
                }
                SpringLaw::Nonlinear => {
                    let d = diff(x, s.i, s.j);
                    let l = norm3(d);
                    if l < 1e-12 {
                        continue;
                    }
                    let n = [d[0] / l, d[1] / l, d[2] / l];
                    let mut t = 1.0 - s.rest_length / l;
                    if project && t < 0.0 {
                        t = 0.0;
                    }
                    let k = s.stiffness;
                    let mut b = [[0.0; 3]; 3];
                    for (r, row) in b.iter_mut().enumerate() {
                        for (c, v) in row.iter_mut().enumerate() {
                            let id = if r == c { 1.0 } else { 0.0 };
                            *v = k * (n[r] * n[c] + t * (id - n[r] * n[c]));
                        }
                    }
                    b
                }
            };
            for (a, b, sign) in [(s.i, s.i, 1.0), (s.j, s.j, 1.0), (s.i, s.j, -1.0), (s.j, s.i, -1.0)] {
                for r in 0..3 {
                    let Some(row) = self.free_index[3 * a + r] else { continue };
                    for c in 0..3 {
                        let Some(col) = self.free_index[3 * b + c] else { continue };
                        out[row * nf + col] += scale * sign * block[r][c];
                    }
                }
            }
        }
    }

    /// Mass of the vertex owning each of the `3n` degrees of freedom.
    pub fn dof_masses(&self) -> Vec<f64> {
        self.masses.iter().flat_map(|&m| [m, m, m]).collect()
    }

    /// Per-DOF acceleration of `f_ext / m + g` with fixed vertices zeroed. This is
    /// the `f` the lifted forcing `[0; f h^2]` is built from.
    pub fn applied_acceleration(&self, f_ext: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.rest.len()];
        for v in 0..self.n_vertices() {
            if self.fixed[v] {
                continue;
            }
            for c in 0..3 {
                a[3 * v + c] = f_ext[3 * v + c] / self.masses[v] + self.gravity[c];
            }
        }
        a
    }
}

/// Positions and velocities of every vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub time: f64,
}

impl FullState {
    pub fn at_rest(model: &ElasticModel) -> Self {
        Self {
            positions: model.rest_positions().to_vec(),
            velocities: vec![0.0; model.rest_positions().len()],
            time: 0.0,
        }
    }

    pub fn displacement(&self, model: &ElasticModel) -> Vec<f64> {
        self.positions
            .iter()
            .zip(model.rest_positions())
            .map(|(x, r)| x - r)
            .collect()
    }

    /// Lifted state with the previous frame reconstructed as `x - h v`.
    pub fn lift(&self, model: &ElasticModel, h: f64) -> Result<LiftedState> {
        let u = self.displacement(model);
        let prev: Vec<f64> = u.iter().zip(&self.velocities).map(|(u, v)| u - h * v).collect();
        crate::statespace::lift(&u, &prev)
    }

    /// Inverse of [`FullState::lift`] for a state whose momentum encodes `h v`.
    pub fn from_lifted(model: &ElasticModel, x: &LiftedState, h: f64, time: f64) -> Result<Self> {
        check_len(model.rest_positions().len(), x.displacement().len())?;
        let positions = model
            .rest_positions()
            .iter()
            .zip(x.displacement())
            .map(|(r, u)| r + u)
            .collect();
        let velocities = x.momentum().iter().map(|m| m / h).collect();
        Ok(Self { positions, velocities, time })
    }
}

/// `1/2 sum_i m_i |momentum_i / h|^2`.
pub fn kinetic_energy(x: &LiftedState, masses: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("time step must be positive, got {h}")));
    }
    check_len(x.n_vertices(), masses.len())?;
    let mom = x.momentum();
    let mut ke = 0.0;
    for (v, &m) in masses.iter().enumerate() {
        let s: f64 = (0..3).map(|c| (mom[3 * v + c] / h).powi(2)).sum();
        ke += 0.5 * m * s;
    }
    Ok(ke)
}

#[inline]
fn diff(x: &[f64], i: usize, j: usize) -> [f64; 3] {
    [x[3 * i] - x[3 * j], x[3 * i + 1] - x[3 * j + 1], x[3 * i + 2] - x[3 * j + 2]]
}

#[inline]
fn norm3(d: [f64; 3]) -> f64 {
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}
