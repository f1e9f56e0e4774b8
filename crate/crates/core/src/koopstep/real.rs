use std::sync::Arc;

use faer::{c64, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::dmd::KoopmanModel;
use crate::error::{check_len, Error, Result};
use crate::linalg::{max_abs, norm2, RealLstsq};
use crate::statespace::{ForceLift, LiftedState};

/// Where the imaginary part of the lifted state is projected out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// `K_real = Phi_R^+ P Phi_R Lambda_R`: propagate, lift, drop the
    /// imaginary block, re-project.
    #[default]
    AfterPropagation,
    /// `K_real = Lambda_R Phi_R^+ P Phi_R`.
    BeforePropagation,
    /// `K_real = Lambda_R`; identical to complex stepping.
    Disabled,
}

/// Realified propagator acting on `[Re z; Im z]`.
#[derive(Debug, Clone)]
pub struct RealOperator {
    k_real: Mat<f64>,
    modes_re: Mat<f64>,
    modes_im: Mat<f64>,
    projection: Projection,
}

impl RealOperator {
    pub fn rank(&self) -> usize {
        self.modes_re.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.modes_re.nrows()
    }

    pub fn projection(&self) -> Projection {
        self.projection
    }

    /// The `2r x 2r` propagator.
    pub fn k_real(&self) -> MatRef<'_, f64> {
        self.k_real.as_ref()
    }

    /// `Phi_R = [A -B; B A]` with `Phi = A + iB`.
    pub fn modes_realified(&self) -> Mat<f64> {
        realified_modes(self.modes_re.as_ref(), self.modes_im.as_ref())
    }

    /// `[Re z; Im z]`.
    pub fn realify_coords(&self, z: &[c64]) -> Result<Vec<f64>> {
        check_len(self.rank(), z.len())?;
        Ok(z.iter().map(|v| v.re).chain(z.iter().map(|v| v.im)).collect())
    }

    /// `K_real^n zr` by repeated squaring.
    pub fn advance(&self, zr: &[f64], n: u64) -> Result<Vec<f64>> {
        check_len(2 * self.rank(), zr.len())?;
        let mut v = Mat::from_fn(zr.len(), 1, |i, _| zr[i]);
        let mut base = self.k_real.clone();
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                v = &base * &v;
            }
            n >>= 1;
            if n > 0 {
                base = &base * &base;
            }
        }
        Ok((0..v.nrows()).map(|i| v[(i, 0)]).collect())
    }

    /// Real part of `Phi z` and the norm of its imaginary part.
    pub fn lift(&self, zr: &[f64]) -> Result<(Vec<f64>, f64)> {
        let r = self.rank();
        check_len(2 * r, zr.len())?;
        let d = self.state_dim();
        let (mut re, mut im) = (vec![0.0; d], vec![0.0; d]);
        for j in 0..r {
            let (a, b) = (zr[j], zr[r + j]);
            let (ca, cb) = (self.modes_re.col(j), self.modes_im.col(j));
            for i in 0..d {
                re[i] += ca[i] * a - cb[i] * b;
                im[i] += cb[i] * a + ca[i] * b;
            }
        }
        Ok((re, norm2(&im)))
    }

    /// Largest eigenvalue modulus of `K_real`.
    pub fn spectral_radius(&self) -> Result<f64> {
        let evd = self.k_real.eigen().map_err(|e| Error::Eigen(format!("{e:?}")))?;
        let s = evd.S().column_vector();
        Ok((0..s.nrows()).map(|i| s[i].norm()).fold(0.0, f64::max))
    }
}

fn realified_modes(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let (d, r) = (a.nrows(), a.ncols());
    Mat::from_fn(2 * d, 2 * r, |i, j| {
        let (top, left) = (i < d, j < r);
        let (ii, jj) = (i % d, j % r);
        match (top, left) {
            (true, true) | (false, false) => a[(ii, jj)],
            (true, false) => -b[(ii, jj)],
            (false, true) => b[(ii, jj)],
        }
    })
}

/// `G = Phi_R^+ P Phi_R`, which depends on the modes only.
pub(crate) fn projected_identity(model: &KoopmanModel) -> Result<Mat<f64>> {
    let modes = model.modes();
    let a = Mat::from_fn(modes.nrows(), modes.ncols(), |i, j| modes[(i, j)].re);
    let b = Mat::from_fn(modes.nrows(), modes.ncols(), |i, j| modes[(i, j)].im);
    let phi_r = realified_modes(a.as_ref(), b.as_ref());
    let solver = RealLstsq::new(phi_r.as_ref())?;
    if solver.rank < phi_r.ncols() {
        log::warn!("realified modes are rank deficient ({} of {})", solver.rank, phi_r.ncols());
    }
    let d = modes.nrows();
    let r = modes.ncols();
    let p_phi = Mat::from_fn(2 * d, 2 * r, |i, j| if i < d { phi_r[(i, j)] } else { 0.0 });
    Ok(solver.solve(p_phi.as_ref()))
}

fn lambda_realified(eigs: &[c64]) -> Mat<f64> {
    let r = eigs.len();
    Mat::from_fn(2 * r, 2 * r, |i, j| {
        if i % r != j % r {
            return 0.0;
        }
        let l = eigs[i % r];
        match (i < r, j < r) {
            (true, true) | (false, false) => l.re,
            (true, false) => -l.im,
            (false, true) => l.im,
        }
    })
}

/// Builds the realified operator for `model`.
pub fn realify(model: &KoopmanModel, projection: Projection) -> Result<RealOperator> {
    let lam = lambda_realified(model.eigenvalues());
    let k_real = match projection {
        Projection::Disabled => lam,
        Projection::AfterPropagation => model.real_projector()? * &lam,
        Projection::BeforePropagation => &lam * model.real_projector()?,
    };
    if !(max_abs(k_real.as_ref()).is_finite()) {
        return Err(Error::InvalidModel("realified operator has non-finite entries".into()));
    }
    let modes = model.modes();
    Ok(RealOperator {
        k_real,
        modes_re: Mat::from_fn(modes.nrows(), modes.ncols(), |i, j| modes[(i, j)].re),
        modes_im: Mat::from_fn(modes.nrows(), modes.ncols(), |i, j| modes[(i, j)].im),
        projection,
    })
}

/// The default-projection operator, built once per model value.
pub fn real_operator(model: &KoopmanModel) -> Result<Arc<RealOperator>> {
    let cache = model.cached_real_op();
    if let Some(op) = cache.get() {
        return Ok(Arc::clone(op));
    }
    let op = Arc::new(realify(model, Projection::default())?);
    Ok(Arc::clone(cache.get_or_init(|| op)))
}

/// Projects `x`, applies `K_real^n`, and lifts the real part.
pub fn real_multi_step(op: &RealOperator, model: &KoopmanModel, x: &LiftedState, n: u64) -> Result<LiftedState> {
    Ok(real_multi_step_with_residue(op, model, x, n)?.0)
}

/// Realified forced update `K_real (x + F)`.
pub fn real_step_forced(op: &RealOperator, model: &KoopmanModel, x: &LiftedState, force: &ForceLift) -> Result<LiftedState> {
    super::check_h(model, force)?;
    real_multi_step(op, model, &x.add_force(force)?, 1)
}

/// As [`real_multi_step`], also returning `|Im(Phi z_n)|` before it is discarded.
pub fn real_multi_step_with_residue(
    op: &RealOperator,
    model: &KoopmanModel,
    x: &LiftedState,
    n: u64,
) -> Result<(LiftedState, f64)> {
    if op.rank() != model.rank() || op.state_dim() != model.state_dim() {
        return Err(Error::InvalidModel("real operator was built from a different model".into()));
    }
    let z = model.project_slice(x.as_slice())?;
    let zr = op.advance(&op.realify_coords(&z)?, n)?;
    let (re, residue) = op.lift(&zr)?;
    Ok((LiftedState::from_vec(re)?, residue))
}
