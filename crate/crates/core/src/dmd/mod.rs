//! Koopman operator fitting by dynamic mode decomposition.
//!
//! Pipeline: shift pairs, truncated SVD of the input snapshots, the reduced
//! operator `K' = U_r^T X' V_r S_r^-1`, its eigenpairs, and modes `Phi = U_r phi`.

mod eigen;
mod model;

pub use eigen::{eigendecompose, MAX_EIGVEC_COND};
pub use model::KoopmanModel;

use faer::{c64, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::statespace::LiftedState;

/// Ordered lifted frames of one trajectory.
///
/// When per-step forcing is recorded, `forces[t]` is the lifted force applied
/// between frame `t` and frame `t + 1`; the fit then regresses
/// `X_{t+1}` on `X_t + F_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    states: Vec<LiftedState>,
    h: f64,
    rest_positions: Option<Vec<f64>>,
    forces: Option<Vec<Vec<f64>>>,
}

impl SnapshotSet {
    pub fn new(states: Vec<LiftedState>, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Domain(format!("time step must be positive, got {h}")));
        }
        if let Some(first) = states.first() {
            for s in &states {
                check_len(first.len(), s.len())?;
            }
        }
        Ok(Self { states, h, rest_positions: None, forces: None })
    }

    pub fn with_rest_positions(mut self, rest: Vec<f64>) -> Result<Self> {
        if let Some(first) = self.states.first() {
            check_len(first.len() / 2, rest.len())?;
        }
        self.rest_positions = Some(rest);
        Ok(self)
    }

    pub fn with_forces(mut self, forces: Vec<Vec<f64>>) -> Result<Self> {
        check_len(self.states.len().saturating_sub(1), forces.len())?;
        if let Some(first) = self.states.first() {
            for f in &forces {
                check_len(first.len(), f.len())?;
            }
        }
        self.forces = Some(forces);
        Ok(self)
    }

    pub fn states(&self) -> &[LiftedState] {
        &self.states
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_vertices(&self) -> usize {
        self.states.first().map_or(0, |s| s.n_vertices())
    }

    pub fn rest_positions(&self) -> Option<&[f64]> {
        self.rest_positions.as_deref()
    }

    pub fn forces(&self) -> Option<&[Vec<f64>]> {
        self.forces.as_deref()
    }

    /// Every `stride`-th frame; forcing cannot be subsampled and is dropped.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Domain("stride must be positive".into()));
        }
        Ok(Self {
            states: self.states.iter().step_by(stride).cloned().collect(),
            h: self.h * stride as f64,
            rest_positions: self.rest_positions.clone(),
            forces: None,
        })
    }
}

/// How many singular values to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RankPolicy {
    /// Smallest rank whose cumulative energy `sum sigma_i^2` reaches `target`
    /// of the total.
    Energy { target: f64 },
    /// Exactly this many (capped at the numerical rank).
    Fixed { rank: usize },
    /// Every singular value above the noise floor.
    Full,
}

impl Default for RankPolicy {
    fn default() -> Self {
        RankPolicy::Energy { target: 0.9999 }
    }
}

/// Singular values at or below `SIGMA_FLOOR * sigma_1` are always discarded.
pub const SIGMA_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    #[serde(default)]
    pub rank: RankPolicy,
    /// Rescale eigenvalues outside the unit disk onto it.
    #[serde(default = "default_clamp")]
    pub clamp_unit_disk: bool,
}

fn default_clamp() -> bool {
    true
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { rank: RankPolicy::default(), clamp_unit_disk: true }
    }
}

/// Machine-readable summary of a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub rank: usize,
    pub state_dim: usize,
    pub snapshots: usize,
    pub h: f64,
    pub singular_values: Vec<f64>,
    /// Cumulative energy fraction after each singular value.
    pub energy_profile: Vec<f64>,
    /// `|X - U_r S_r V_r^T|_F^2 / |X|_F^2`.
    pub discarded_energy: f64,
    /// `|X'_t - step(X_t)|` per shift pair.
    pub residuals: Vec<f64>,
    /// `|X' - step(X)|_F / |X'|_F`.
    pub relative_residual: f64,
    pub max_abs_eigenvalue: f64,
    pub max_abs_eigenvalue_unclamped: f64,
    pub clamped_modes: usize,
}

/// Input and output snapshot matrices. Columns of the input carry the
/// recorded forcing when present.
pub fn build_shift_pairs(snaps: &SnapshotSet) -> Result<(Mat<f64>, Mat<f64>)> {
    let cols: Vec<&[f64]> = snaps.states.iter().map(|s| s.as_slice()).collect();
    let forces: Option<Vec<&[f64]>> = snaps.forces.as_ref().map(|f| f.iter().map(|v| v.as_slice()).collect());
    shift_pairs_from_columns(&cols, forces.as_deref())
}

/// Shift pairs from raw column vectors of any dimension.
pub fn shift_pairs_from_columns(cols: &[&[f64]], forces: Option<&[&[f64]]>) -> Result<(Mat<f64>, Mat<f64>)> {
    if cols.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 snapshots, got {}", cols.len())));
    }
    let d = cols[0].len();
    for c in cols {
        check_len(d, c.len())?;
    }
    let t = cols.len() - 1;
    if let Some(f) = forces {
        check_len(t, f.len())?;
        for v in f {
            check_len(d, v.len())?;
        }
    }
    let x = Mat::from_fn(d, t, |i, j| cols[j][i] + forces.map_or(0.0, |f| f[j][i]));
    let x_next = Mat::from_fn(d, t, |i, j| cols[j + 1][i]);
    Ok((x, x_next))
}

#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: Mat<f64>,
    pub sigma: Vec<f64>,
    pub v: Mat<f64>,
    /// Every singular value of the input, retained or not.
    pub all_sigma: Vec<f64>,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }
}

pub fn truncated_svd(x: MatRef<'_, f64>, policy: RankPolicy) -> Result<TruncatedSvd> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::DegenerateData("empty snapshot matrix".into()));
    }
    let svd = x.thin_svd().map_err(|e| Error::DegenerateData(format!("svd failed: {e:?}")))?;
    let s = svd.S().column_vector();
    let all_sigma: Vec<f64> = (0..s.nrows()).map(|i| s[i]).collect();
    let s1 = all_sigma[0];
    if !(s1 > 0.0) {
        return Err(Error::DegenerateData("snapshot matrix is identically zero".into()));
    }
    let numerical = all_sigma.iter().take_while(|&&v| v > SIGMA_FLOOR * s1).count();
    let r = match policy {
        RankPolicy::Full => numerical,
        RankPolicy::Fixed { rank } => {
            if rank == 0 {
                return Err(Error::Domain("fixed rank must be positive".into()));
            }
            if rank > numerical {
                log::warn!("requested rank {rank} exceeds numerical rank {numerical}; using {numerical}");
            }
            rank.min(numerical)
        }
        RankPolicy::Energy { target } => {
            if !(target > 0.0 && target <= 1.0) {
                return Err(Error::Domain(format!("energy target must be in (0, 1], got {target}")));
            }
            let total: f64 = all_sigma.iter().map(|v| v * v).sum();
            let mut acc = 0.0;
            let mut r = all_sigma.len();
            for (i, v) in all_sigma.iter().enumerate() {
                acc += v * v;
                if acc >= target * total {
                    r = i + 1;
                    break;
                }
            }
            r.min(numerical)
        }
    };
    Ok(TruncatedSvd {
        u: svd.U().subcols(0, r).to_owned(),
        sigma: all_sigma[..r].to_vec(),
        v: svd.V().subcols(0, r).to_owned(),
        all_sigma,
    })
}

/// `K' = U_r^T X' V_r S_r^-1`.
pub fn reduced_operator(x_next: MatRef<'_, f64>, svd: &TruncatedSvd) -> Result<Mat<f64>> {
    check_len(svd.u.nrows(), x_next.nrows())?;
    check_len(svd.v.nrows(), x_next.ncols())?;
    let mut k = svd.u.transpose() * x_next * &svd.v;
    for j in 0..k.ncols() {
        let inv = 1.0 / svd.sigma[j];
        for i in 0..k.nrows() {
            k[(i, j)] *= inv;
        }
    }
    Ok(k)
}

/// Fits a model to a snapshot set.
pub fn fit(snaps: &SnapshotSet, opts: &FitOptions) -> Result<(KoopmanModel, FitReport)> {
    let (x, x_next) = build_shift_pairs(snaps)?;
    fit_matrices(x.as_ref(), x_next.as_ref(), snaps.h, opts)
}

/// Fits a model to explicit input/output snapshot matrices.
pub fn fit_matrices(
    x: MatRef<'_, f64>,
    x_next: MatRef<'_, f64>,
    h: f64,
    opts: &FitOptions,
) -> Result<(KoopmanModel, FitReport)> {
    check_len(x.nrows(), x_next.nrows())?;
    check_len(x.ncols(), x_next.ncols())?;
    let svd = truncated_svd(x, opts.rank)?;
    let k_red = reduced_operator(x_next, &svd)?;
    let (phi, mut lambda) = eigendecompose(k_red.as_ref())?;

    let max_raw = lambda.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let mut clamped = 0;
    if opts.clamp_unit_disk {
        for l in lambda.iter_mut() {
            let m = l.norm();
            if m > 1.0 {
                *l /= m;
                clamped += 1;
            }
        }
    }
    let model = KoopmanModel::from_reduced(svd.u.clone(), phi, lambda, h)?;

    // one-step residuals of the fitted factorization over all shift pairs
    let z = model.project_block(x);
    let mut zl = z;
    for i in 0..zl.nrows() {
        let l = model.eigenvalues()[i];
        for j in 0..zl.ncols() {
            zl[(i, j)] *= l;
        }
    }
    let pred = model.modes() * &zl;
    let mut residuals = Vec::with_capacity(x.ncols());
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..x.ncols() {
        let mut r2 = 0.0;
        for i in 0..x.nrows() {
            let e = x_next[(i, j)] - pred[(i, j)].re;
            r2 += e * e;
            den += x_next[(i, j)] * x_next[(i, j)];
        }
        num += r2;
        residuals.push(r2.sqrt());
    }

    let total: f64 = svd.all_sigma.iter().map(|v| v * v).sum();
    let mut acc = 0.0;
    let energy_profile: Vec<f64> = svd
        .all_sigma
        .iter()
        .map(|v| {
            acc += v * v;
            acc / total
        })
        .collect();
    let kept: f64 = svd.sigma.iter().map(|v| v * v).sum();
    let report = FitReport {
        rank: model.rank(),
        state_dim: model.state_dim(),
        snapshots: x.ncols() + 1,
        h,
        singular_values: svd.all_sigma.clone(),
        energy_profile,
        discarded_energy: ((total - kept) / total).max(0.0),
        residuals,
        relative_residual: if den > 0.0 { (num / den).sqrt() } else { num.sqrt() },
        max_abs_eigenvalue: model.spectral_radius(),
        max_abs_eigenvalue_unclamped: max_raw,
        clamped_modes: clamped,
    };
    Ok((model, report))
}

/// Reduced coordinates of `x`: the least-squares solution of `Phi z = x`.
pub fn project(model: &KoopmanModel, x: &LiftedState) -> Result<Vec<c64>> {
    model.project_slice(x.as_slice())
}

/// `Re(Phi project(x))` and the relative reconstruction error `|x - recon| / |x|`.
pub fn reconstruct(model: &KoopmanModel, x: &LiftedState) -> Result<(LiftedState, f64)> {
    let z = project(model, x)?;
    let recon = LiftedState::from_vec(model.lift_real(&z)?)?;
    let norm = x.norm();
    let err = crate::linalg::dist2(recon.as_slice(), x.as_slice());
    Ok((recon, if norm > 0.0 { err / norm } else { err }))
}
