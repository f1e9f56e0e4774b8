use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::refsim::ElasticModel;
use crate::statespace::LiftedState;

/// Actuated surface element. Vertex order sets the outward normal: `(b - a) x (c - a)`
/// for triangles, `z x (b - a)` for segments of planar meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Face {
    Triangle([usize; 3]),
    Segment([usize; 2]),
}

impl Face {
    pub fn vertices(&self) -> &[usize] {
        match self {
            Face::Triangle(v) => v,
            Face::Segment(v) => v,
        }
    }

    /// Outward normal scaled by the face area (segment length for planar faces).
    pub fn area_normal(&self, positions: &[f64]) -> [f64; 3] {
        let p = |v: usize| [positions[3 * v], positions[3 * v + 1], positions[3 * v + 2]];
        let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        match *self {
            Face::Triangle([a, b, c]) => {
                let (e1, e2) = (sub(p(b), p(a)), sub(p(c), p(a)));
                [
                    0.5 * (e1[1] * e2[2] - e1[2] * e2[1]),
                    0.5 * (e1[2] * e2[0] - e1[0] * e2[2]),
                    0.5 * (e1[0] * e2[1] - e1[1] * e2[0]),
                ]
            }
            Face::Segment([a, b]) => {
                let e = sub(p(b), p(a));
                [-e[1], e[0], 0.0]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chamber {
    pub id: usize,
    pub faces: Vec<Face>,
}

/// Faces with area below this contribute no force.
pub const MIN_FACE_AREA: f64 = 1e-14;

/// `6n x k` map from chamber pressures to lifted force.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureForceMap {
    a: Mat<f64>,
}

impl PressureForceMap {
    /// Wraps an explicit matrix; the displacement block must be zero.
    pub fn from_matrix(a: Mat<f64>) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || d % 6 != 0 || a.ncols() == 0 {
            return Err(Error::Domain(format!("force map must be 6n x k, got {}x{}", d, a.ncols())));
        }
        for j in 0..a.ncols() {
            for i in 0..d {
                let v = a[(i, j)];
                if !v.is_finite() || (i < d / 2 && v != 0.0) {
                    return Err(Error::Domain("force map must be finite with a zero displacement block".into()));
                }
            }
        }
        Ok(Self { a })
    }

    pub fn matrix(&self) -> &Mat<f64> {
        &self.a
    }

    pub fn n_chambers(&self) -> usize {
        self.a.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// `A c` as a lifted force vector.
    pub fn apply(&self, c: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_chambers(), c.len())?;
        Ok((0..self.a.nrows())
            .map(|i| (0..c.len()).map(|j| self.a[(i, j)] * c[j]).sum())
            .collect())
    }
}

/// Per-DOF force (Newtons) produced by unit pressure in each chamber, in the
/// configuration `positions`. Each face's area-weighted normal is split
/// equally over its vertices.
pub fn chamber_forces(model: &ElasticModel, positions: &[f64], chambers: &[Chamber]) -> Result<Vec<Vec<f64>>> {
    let n = model.n_vertices();
    check_len(3 * n, positions.len())?;
    let mut out = Vec::with_capacity(chambers.len());
    for ch in chambers {
        let mut f = vec![0.0; 3 * n];
        for face in &ch.faces {
            let verts = face.vertices();
            if let Some(&bad) = verts.iter().find(|&&v| v >= n) {
                return Err(Error::Domain(format!("chamber {} face references vertex {bad}", ch.id)));
            }
            let an = face.area_normal(positions);
            let area = (an[0] * an[0] + an[1] * an[1] + an[2] * an[2]).sqrt();
            if area < MIN_FACE_AREA {
                continue;
            }
            let share = 1.0 / verts.len() as f64;
            for &v in verts {
                for c in 0..3 {
                    f[3 * v + c] += an[c] * share;
                }
            }
        }
        out.push(f);
    }
    Ok(out)
}

/// Chamber pressures to lifted force in the deformed configuration of `x`:
/// column `j` is `[0; f_j h^2]` with `f_j` the unit-pressure acceleration of chamber `j`.
pub fn pressure_force_map(
    model: &ElasticModel,
    x: &LiftedState,
    chambers: &[Chamber],
    h: f64,
) -> Result<PressureForceMap> {
    if chambers.is_empty() {
        return Err(Error::Domain("at least one chamber is required".into()));
    }
    if !(h > 0.0) {
        return Err(Error::Domain(format!("time step must be positive, got {h}")));
    }
    let n = model.n_vertices();
    check_len(6 * n, x.len())?;
    let positions: Vec<f64> = model.rest_positions().iter().zip(x.displacement()).map(|(r, u)| r + u).collect();
    let forces = chamber_forces(model, &positions, chambers)?;
    let masses = model.masses();
    let d = 6 * n;
    let a = Mat::from_fn(d, chambers.len(), |i, j| {
        if i < 3 * n {
            return 0.0;
        }
        let dof = i - 3 * n;
        let v = dof / 3;
        if model.is_fixed(v) {
            0.0
        } else {
            forces[j][dof] / masses[v] * h * h
        }
    });
    Ok(PressureForceMap { a })
}
