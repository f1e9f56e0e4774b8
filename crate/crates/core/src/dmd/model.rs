use std::sync::{Arc, OnceLock};

use faer::{c64, Mat, MatRef};

use crate::error::{check_len, Error, Result};
use crate::koopstep::RealOperator;
use crate::linalg::{ccolumn, cmax_abs, to_complex, ComplexLstsq};

/// Low-rank Koopman operator `K ~ Phi Lambda Phi^+` in factored form.
///
/// The full `d x d` operator is never formed. Values are immutable: damping
/// and time-step edits produce new models that share the modes and the
/// least-squares projector with their source.
#[derive(Debug, Clone)]
pub struct KoopmanModel {
    modes: Arc<Mat<c64>>,
    eigenvalues: Vec<c64>,
    h: f64,
    left_basis: Arc<Mat<f64>>,
    reduced_eigvecs: Arc<Mat<c64>>,
    projector: Arc<ComplexLstsq>,
    real_op: OnceLock<Arc<RealOperator>>,
    real_projector: Arc<OnceLock<Mat<f64>>>,
}

impl KoopmanModel {
    /// Builds a model from `U_r` and the reduced eigenpairs; the modes are
    /// `Phi = U_r phi`.
    pub fn from_reduced(
        left_basis: Mat<f64>,
        reduced_eigvecs: Mat<c64>,
        eigenvalues: Vec<c64>,
        h: f64,
    ) -> Result<Self> {
        let modes = to_complex(left_basis.as_ref()) * &reduced_eigvecs;
        Self::from_parts(modes, eigenvalues, h, left_basis, reduced_eigvecs)
    }

    /// Validates shapes and the `Phi = U_r phi` relation.
    pub fn from_parts(
        modes: Mat<c64>,
        eigenvalues: Vec<c64>,
        h: f64,
        left_basis: Mat<f64>,
        reduced_eigvecs: Mat<c64>,
    ) -> Result<Self> {
        let r = eigenvalues.len();
        if r == 0 {
            return Err(Error::InvalidModel("rank must be positive".into()));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidModel(format!("time step must be positive, got {h}")));
        }
        let d = modes.nrows();
        if modes.ncols() != r
            || left_basis.nrows() != d
            || left_basis.ncols() != r
            || reduced_eigvecs.nrows() != r
            || reduced_eigvecs.ncols() != r
        {
            return Err(Error::InvalidModel("inconsistent model shapes".into()));
        }
        if eigenvalues.iter().any(|l| !l.re.is_finite() || !l.im.is_finite()) {
            return Err(Error::InvalidModel("non-finite eigenvalue".into()));
        }
        let lifted = to_complex(left_basis.as_ref()) * &reduced_eigvecs;
        let gap = cmax_abs((&lifted - &modes).as_ref());
        if !(gap <= 1e-10 * (1.0 + cmax_abs(modes.as_ref()))) {
            return Err(Error::InvalidModel(format!("modes differ from U_r phi by {gap:e}")));
        }
        let projector = ComplexLstsq::new(modes.as_ref())?;
        if projector.rank < r {
            log::warn!(
                "mode matrix is rank deficient ({} of {r}); projections return minimum-norm coordinates",
                projector.rank
            );
        }
        Ok(Self {
            modes: Arc::new(modes),
            eigenvalues,
            h,
            left_basis: Arc::new(left_basis),
            reduced_eigvecs: Arc::new(reduced_eigvecs),
            projector: Arc::new(projector),
            real_op: OnceLock::new(),
            real_projector: Arc::new(OnceLock::new()),
        })
    }

    /// Same modes and projector, new spectrum and step size, empty caches.
    pub(crate) fn with_spectrum(&self, eigenvalues: Vec<c64>, h: f64) -> Self {
        debug_assert_eq!(eigenvalues.len(), self.rank());
        Self {
            modes: Arc::clone(&self.modes),
            eigenvalues,
            h,
            left_basis: Arc::clone(&self.left_basis),
            reduced_eigvecs: Arc::clone(&self.reduced_eigvecs),
            projector: Arc::clone(&self.projector),
            real_op: OnceLock::new(),
            real_projector: Arc::clone(&self.real_projector),
        }
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn state_dim(&self) -> usize {
        self.modes.nrows()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn eigenvalues(&self) -> &[c64] {
        &self.eigenvalues
    }

    pub fn modes(&self) -> MatRef<'_, c64> {
        Mat::as_ref(&self.modes)
    }

    pub fn left_basis(&self) -> MatRef<'_, f64> {
        Mat::as_ref(&self.left_basis)
    }

    pub fn reduced_eigvecs(&self) -> MatRef<'_, c64> {
        Mat::as_ref(&self.reduced_eigvecs)
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max)
    }

    /// Condition number of the mode matrix (infinite when rank deficient).
    pub fn mode_condition(&self) -> f64 {
        self.projector.cond
    }

    /// Reduced coordinates `z = argmin |Phi z - x|`.
    pub fn project_slice(&self, x: &[f64]) -> Result<Vec<c64>> {
        check_len(self.state_dim(), x.len())?;
        let z = self.projector.solve(ccolumn(x).as_ref());
        Ok((0..z.nrows()).map(|i| z[(i, 0)]).collect())
    }

    /// Column-wise projection of a real `d x m` block.
    pub(crate) fn project_block(&self, x: MatRef<'_, f64>) -> Mat<c64> {
        self.projector.solve(to_complex(x).as_ref())
    }

    /// `Phi z`, complex.
    pub fn lift_coords(&self, z: &[c64]) -> Result<Vec<c64>> {
        check_len(self.rank(), z.len())?;
        let d = self.state_dim();
        let mut out = vec![c64::new(0.0, 0.0); d];
        for (j, &zj) in z.iter().enumerate() {
            if zj == c64::new(0.0, 0.0) {
                continue;
            }
            let col = self.modes.col(j);
            for (i, o) in out.iter_mut().enumerate() {
                *o += col[i] * zj;
            }
        }
        Ok(out)
    }

    /// `Re(Phi z)`.
    pub fn lift_real(&self, z: &[c64]) -> Result<Vec<f64>> {
        Ok(self.lift_coords(z)?.into_iter().map(|v| v.re).collect())
    }

    pub(crate) fn cached_real_op(&self) -> &OnceLock<Arc<RealOperator>> {
        &self.real_op
    }

    /// `Phi_R^+ P Phi_R`, shared by every model with the same modes.
    pub(crate) fn real_projector(&self) -> Result<&Mat<f64>> {
        if let Some(g) = self.real_projector.get() {
            return Ok(g);
        }
        let g = crate::koopstep::projected_identity(self)?;
        Ok(self.real_projector.get_or_init(|| g))
    }
}
