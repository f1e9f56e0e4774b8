//! Lifted Koopman observables: `[displacement; displacement - previous displacement]`.
//!
//! Storage is one contiguous `6n` vector with the displacement block first.
//! Momentum is kept as the raw per-step displacement difference; divide by the
//! step size to recover a physical velocity.

use std::ops::{Add, Mul};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedState {
    values: Vec<f64>,
    n_vertices: usize,
}

impl LiftedState {
    /// Wraps a `6n` vector. Fails if the length is not a positive multiple of six
    /// or if any entry is non-finite.
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() % 6 != 0 {
            return Err(Error::Domain(format!(
                "lifted state length {} is not a positive multiple of 6",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("lifted state has non-finite entries".into()));
        }
        let n_vertices = values.len() / 6;
        Ok(Self { values, n_vertices })
    }

    pub fn zeros(n_vertices: usize) -> Self {
        Self {
            values: vec![0.0; 6 * n_vertices],
            n_vertices,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn displacement(&self) -> &[f64] {
        &self.values[..3 * self.n_vertices]
    }

    pub fn momentum(&self) -> &[f64] {
        &self.values[3 * self.n_vertices..]
    }

    /// `self + F`; the force only touches the momentum block.
    pub fn add_force(&self, force: &ForceLift) -> Result<Self> {
        check_len(self.len(), force.values.len())?;
        let values = self
            .values
            .iter()
            .zip(&force.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            values,
            n_vertices: self.n_vertices,
        })
    }

    pub fn norm(&self) -> f64 {
        crate::linalg::norm2(&self.values)
    }
}

impl Add for &LiftedState {
    type Output = LiftedState;

    fn add(self, rhs: &LiftedState) -> LiftedState {
        assert_eq!(self.len(), rhs.len(), "lifted state length mismatch");
        LiftedState {
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect(),
            n_vertices: self.n_vertices,
        }
    }
}

impl Mul<f64> for &LiftedState {
    type Output = LiftedState;

    fn mul(self, s: f64) -> LiftedState {
        LiftedState {
            values: self.values.iter().map(|a| a * s).collect(),
            n_vertices: self.n_vertices,
        }
    }
}

/// Lifted external forcing `[0; f h^2]` for one step of size `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceLift {
    values: Vec<f64>,
    h: f64,
}

impl ForceLift {
    pub fn zeros(n_vertices: usize, h: f64) -> Result<Self> {
        lift_force(&vec![0.0; 3 * n_vertices], h)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn momentum(&self) -> &[f64] {
        &self.values[self.values.len() / 2..]
    }

    /// Builds a lift directly from a precomputed `6n` vector. The displacement
    /// block must be zero.
    pub fn from_lifted(values: Vec<f64>, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Domain(format!("time step must be positive, got {h}")));
        }
        if values.len() % 6 != 0 {
            return Err(Error::Domain("force lift length is not a multiple of 6".into()));
        }
        if values[..values.len() / 2].iter().any(|&v| v != 0.0) {
            return Err(Error::Domain("force lift has a nonzero displacement block".into()));
        }
        Ok(Self { values, h })
    }
}

/// `X = [u_curr; u_curr - u_prev]`.
pub fn lift(u_curr: &[f64], u_prev: &[f64]) -> Result<LiftedState> {
    check_len(u_curr.len(), u_prev.len())?;
    if u_curr.is_empty() || u_curr.len() % 3 != 0 {
        return Err(Error::Domain(format!(
            "displacement length {} is not a positive multiple of 3",
            u_curr.len()
        )));
    }
    let mut values = Vec::with_capacity(2 * u_curr.len());
    values.extend_from_slice(u_curr);
    values.extend(u_curr.iter().zip(u_prev).map(|(c, p)| c - p));
    LiftedState::from_vec(values)
}

/// Returns `(u_curr, u_prev)`.
pub fn unlift(x: &LiftedState) -> (Vec<f64>, Vec<f64>) {
    let u_curr = x.displacement().to_vec();
    let u_prev = x
        .displacement()
        .iter()
        .zip(x.momentum())
        .map(|(u, m)| u - m)
        .collect();
    (u_curr, u_prev)
}

/// `F = [0; f h^2]` where `f` is an acceleration (force per unit mass).
pub fn lift_force(f: &[f64], h: f64) -> Result<ForceLift> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Domain(format!("time step must be positive, got {h}")));
    }
    if f.len() % 3 != 0 {
        return Err(Error::Domain(format!("force length {} is not a multiple of 3", f.len())));
    }
    let h2 = h * h;
    let mut values = vec![0.0; 2 * f.len()];
    for (dst, src) in values[f.len()..].iter_mut().zip(f) {
        *dst = src * h2;
    }
    Ok(ForceLift { values, h })
}
