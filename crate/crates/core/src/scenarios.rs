//! Built-in desk-scale test bodies.

use serde::{Deserialize, Serialize};

use crate::control::{Chamber, Face};
use crate::error::{Error, Result};
use crate::refsim::mesh::Mesh;
use crate::refsim::{ElasticModel, FullState, SpringLaw};

/// Two vertices along x joined by one spring; vertex 0 is fixed.
pub fn oscillator(stiffness: f64, mass: f64, law: SpringLaw) -> Result<ElasticModel> {
    Ok(ElasticModel::new(vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0], &[(0, 1, stiffness)], vec![mass; 2], &[0])?.with_law(law))
}

/// `n` vertices spaced `spacing` apart along x, consecutive springs, vertex 0 fixed.
pub fn chain(n: usize, spacing: f64, stiffness: f64, mass: f64, law: SpringLaw) -> Result<ElasticModel> {
    if n < 2 {
        return Err(Error::Domain("a chain needs at least two vertices".into()));
    }
    let rest = (0..n).flat_map(|i| [i as f64 * spacing, 0.0, 0.0]).collect();
    let springs: Vec<_> = (1..n).map(|i| (i - 1, i, stiffness)).collect();
    Ok(ElasticModel::new(rest, &springs, vec![mass; n], &[0])?.with_law(law))
}

/// Planar grid of `nx x ny` vertices in the xy plane, clamped on its left column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripSpec {
    pub nx: usize,
    pub ny: usize,
    pub spacing: f64,
    /// Axial spring stiffness; diagonals use `shear_ratio` times this.
    pub stiffness: f64,
    pub shear_ratio: f64,
    /// Per-vertex mass.
    pub mass: f64,
    pub law: SpringLaw,
}

impl Default for StripSpec {
    fn default() -> Self {
        Self { nx: 11, ny: 3, spacing: 0.1, stiffness: 2000.0, shear_ratio: 0.5, mass: 0.01, law: SpringLaw::Nonlinear }
    }
}

impl StripSpec {
    pub fn vertex(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn n_vertices(&self) -> usize {
        self.nx * self.ny
    }

    /// Free vertex at the far end of the middle row.
    pub fn tip(&self) -> usize {
        self.vertex(self.nx - 1, self.ny / 2)
    }
}

pub fn strip(spec: &StripSpec) -> Result<ElasticModel> {
    if spec.nx < 2 || spec.ny < 2 {
        return Err(Error::Domain("a strip needs at least 2 x 2 vertices".into()));
    }
    let mut rest = Vec::with_capacity(3 * spec.n_vertices());
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            rest.extend([ix as f64 * spec.spacing, iy as f64 * spec.spacing, 0.0]);
        }
    }
    let k = spec.stiffness;
    let ks = k * spec.shear_ratio;
    let mut springs = Vec::new();
    for iy in 0..spec.ny {
        for ix in 0..spec.nx {
            let v = spec.vertex(ix, iy);
            if ix + 1 < spec.nx {
                springs.push((v, spec.vertex(ix + 1, iy), k));
            }
            if iy + 1 < spec.ny {
                springs.push((v, spec.vertex(ix, iy + 1), k));
            }
            if ix + 1 < spec.nx && iy + 1 < spec.ny {
                springs.push((v, spec.vertex(ix + 1, iy + 1), ks));
                springs.push((spec.vertex(ix + 1, iy), spec.vertex(ix, iy + 1), ks));
            }
        }
    }
    let fixed: Vec<usize> = (0..spec.ny).map(|iy| spec.vertex(0, iy)).collect();
    Ok(ElasticModel::new(rest, &springs, vec![spec.mass; spec.n_vertices()], &fixed)?.with_law(spec.law))
}

/// Strip actuated by `k` chambers that split its bottom edge into
/// contiguous runs of segments, each pushing in +y.
pub fn finger(spec: &StripSpec, k: usize) -> Result<Mesh> {
    let model = strip(spec)?;
    let segments = spec.nx - 1;
    if k == 0 || k > segments {
        return Err(Error::Domain(format!("cannot split {segments} bottom segments into {k} chambers")));
    }
    let chambers = (0..k)
        .map(|c| {
            let (lo, hi) = (c * segments / k, (c + 1) * segments / k);
            Chamber {
                id: c,
                faces: (lo..hi).map(|ix| Face::Segment([spec.vertex(ix, 0), spec.vertex(ix + 1, 0)])).collect(),
            }
        })
        .collect();
    Ok(Mesh { model, chambers })
}

/// Rest state with velocity `v` on the listed vertices.
pub fn impulse(model: &ElasticModel, vertices: &[usize], v: [f64; 3]) -> FullState {
    let mut s = FullState::at_rest(model);
    for &i in vertices {
        if !model.is_fixed(i) {
            s.velocities[3 * i..3 * i + 3].copy_from_slice(&v);
        }
    }
    s
}
