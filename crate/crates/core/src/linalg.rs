//! Small dense helpers on top of faer.

use faer::{c64, Mat, MatRef};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used by the least-squares solvers.
const RANK_RTOL: f64 = 1e-12;

pub(crate) fn ccolumn(v: &[f64]) -> Mat<c64> {
    Mat::from_fn(v.len(), 1, |i, _| c64::new(v[i], 0.0))
}

pub(crate) fn to_complex(m: MatRef<'_, f64>) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| c64::new(m[(i, j)], 0.0))
}

pub(crate) fn max_abs(m: MatRef<'_, f64>) -> f64 {
    let mut out = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out = out.max(m[(i, j)].abs());
        }
    }
    out
}

pub(crate) fn cmax_abs(m: MatRef<'_, c64>) -> f64 {
    let mut out = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out = out.max(m[(i, j)].norm());
        }
    }
    out
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Least-squares solver for a complex matrix backed by its thin SVD.
///
/// Singular values below `RANK_RTOL * sigma_max` are dropped, which yields the
/// minimum-norm solution for rank-deficient inputs.
#[derive(Debug, Clone)]
pub(crate) struct ComplexLstsq {
    left: Mat<c64>,
    inv_sigma: Vec<f64>,
    right: Mat<c64>,
    pub(crate) rank: usize,
    pub(crate) cond: f64,
}

impl ComplexLstsq {
    pub(crate) fn new(a: MatRef<'_, c64>) -> Result<Self> {
        let svd = a
            .thin_svd()
            .map_err(|e| Error::Eigen(format!("svd failed: {e:?}")))?;
        let s = svd.S().column_vector();
        let q = s.nrows();
        let smax = if q > 0 { s[0].re } else { 0.0 };
        let cut = smax * RANK_RTOL;
        let rank = (0..q).take_while(|&i| s[i].re > cut).count();
        let cond = if rank == 0 || rank < a.ncols() {
            f64::INFINITY
        } else {
            smax / s[rank - 1].re
        };
        Ok(Self {
            left: svd.U().subcols(0, rank).to_owned(),
            inv_sigma: (0..rank).map(|i| 1.0 / s[i].re).collect(),
            right: svd.V().subcols(0, rank).to_owned(),
            rank,
            cond,
        })
    }

    pub(crate) fn solve(&self, rhs: MatRef<'_, c64>) -> Mat<c64> {
        let mut tmp = self.left.adjoint() * rhs;
        for i in 0..tmp.nrows() {
            for j in 0..tmp.ncols() {
                tmp[(i, j)] *= self.inv_sigma[i];
            }
        }
        &self.right * &tmp
    }
}

/// Real counterpart of [`ComplexLstsq`].
#[derive(Debug, Clone)]
pub(crate) struct RealLstsq {
    left: Mat<f64>,
    inv_sigma: Vec<f64>,
    right: Mat<f64>,
    pub(crate) rank: usize,
}

impl RealLstsq {
    pub(crate) fn new(a: MatRef<'_, f64>) -> Result<Self> {
        let svd = a
            .thin_svd()
            .map_err(|e| Error::Eigen(format!("svd failed: {e:?}")))?;
        let s = svd.S().column_vector();
        let q = s.nrows();
        let smax = if q > 0 { s[0] } else { 0.0 };
        let cut = smax * RANK_RTOL;
        let rank = (0..q).take_while(|&i| s[i] > cut).count();
        Ok(Self {
            left: svd.U().subcols(0, rank).to_owned(),
            inv_sigma: (0..rank).map(|i| 1.0 / s[i]).collect(),
            right: svd.V().subcols(0, rank).to_owned(),
            rank,
        })
    }

    pub(crate) fn solve(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        let mut tmp = self.left.transpose() * rhs;
        for i in 0..tmp.nrows() {
            for j in 0..tmp.ncols() {
                tmp[(i, j)] *= self.inv_sigma[i];
            }
        }
        &self.right * &tmp
    }
}

/// In-place dense Cholesky solve of `a x = b` for a symmetric positive definite
/// row-major `a`. Returns false if `a` is not positive definite.
pub(crate) fn cholesky_solve(a: &mut [f64], n: usize, b: &mut [f64]) -> bool {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    true
}
