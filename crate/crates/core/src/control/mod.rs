//! Quasi-static pressure control through the time-integrated propagator.
//!
//! A constant lifted force `F = A(X) C` held for `N` steps from rest reaches
//! `X_N = Phi (sum_{t=1}^N Lambda^t) Phi^+ F`. Pressures `C >= 0` are found by
//! NNLS on the selected goal DOFs plus a momentum penalty, refreshing `A(X)`
//! at the predicted final state a fixed number of times.

mod nnls;
mod pressure;

pub use nnls::{nnls, NnlsOptions, NnlsSolution};
pub use pressure::{chamber_forces, pressure_force_map, Chamber, Face, PressureForceMap, MIN_FACE_AREA};

use faer::{c64, Mat};
use serde::Serialize;

use crate::dmd::KoopmanModel;
use crate::error::{check_len, Error, Result};
use crate::koopstep::{multi_step, propagator_sum};
use crate::refsim::ElasticModel;
use crate::statespace::LiftedState;

/// Source of the pressure-to-force map.
#[derive(Debug, Clone)]
pub enum Actuation {
    /// Recomputed from the deformed chamber faces at each outer iteration.
    Chambers { mesh: ElasticModel, chambers: Vec<Chamber> },
    /// A fixed map, independent of the state.
    Constant(PressureForceMap),
}

impl Actuation {
    pub fn n_chambers(&self) -> usize {
        match self {
            Actuation::Chambers { chambers, .. } => chambers.len(),
            Actuation::Constant(a) => a.n_chambers(),
        }
    }

    pub fn map_at(&self, x: &LiftedState, h: f64) -> Result<PressureForceMap> {
        match self {
            Actuation::Chambers { mesh, chambers } => pressure_force_map(mesh, x, chambers, h),
            Actuation::Constant(a) => {
                check_len(a.state_dim(), x.len())?;
                Ok(a.clone())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub actuation: Actuation,
    /// Lifted-state indices constrained by the goal (rows of `S`).
    pub selection: Vec<usize>,
    pub goal: Vec<f64>,
    pub horizon: u64,
    pub iterations: usize,
    /// Weight of the zero-final-momentum penalty.
    pub momentum_weight: f64,
    pub nnls: NnlsOptions,
}

impl ControlProblem {
    pub fn new(actuation: Actuation, selection: Vec<usize>, goal: Vec<f64>, horizon: u64) -> Self {
        Self { actuation, selection, goal, horizon, iterations: 5, momentum_weight: 1.0, nnls: NnlsOptions::default() }
    }

    /// Goal on the displacement of chosen vertices, all three components each.
    pub fn vertex_goals(actuation: Actuation, targets: &[(usize, [f64; 3])], horizon: u64) -> Self {
        let mut selection = Vec::with_capacity(3 * targets.len());
        let mut goal = Vec::with_capacity(3 * targets.len());
        for (v, g) in targets {
            for c in 0..3 {
                selection.push(3 * v + c);
                goal.push(g[c]);
            }
        }
        Self::new(actuation, selection, goal, horizon)
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.actuation.n_chambers() == 0 {
            return Err(Error::Domain("at least one chamber is required".into()));
        }
        if self.selection.is_empty() {
            return Err(Error::Domain("selection is empty".into()));
        }
        check_len(self.selection.len(), self.goal.len())?;
        if let Some(&bad) = self.selection.iter().find(|&&i| i >= d) {
            return Err(Error::Domain(format!("selected index {bad} outside state of length {d}")));
        }
        if self.horizon == 0 {
            return Err(Error::Domain("horizon must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Domain("at least one iteration is required".into()));
        }
        if !(self.momentum_weight >= 0.0) {
            return Err(Error::Domain("momentum weight must be non-negative".into()));
        }
        if self.goal.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("goal has non-finite entries".into()));
        }
        Ok(())
    }
}

/// `Re(Phi diag(sum_{t=1}^N Lambda^t) Phi^+ A C)`.
pub fn predict_final(model: &KoopmanModel, a: &PressureForceMap, c: &[f64], n: u64) -> Result<LiftedState> {
    let f = a.apply(c)?;
    let sums = propagator_sum(model, n)?;
    let z = model.project_slice(&f)?;
    let z: Vec<c64> = z.iter().zip(&sums).map(|(zi, s)| zi * s).collect();
    LiftedState::from_vec(model.lift_real(&z)?)
}

/// `M = Re(Phi diag(Sigma) Phi^+ A)`, one column per chamber.
fn response_matrix(model: &KoopmanModel, a: &PressureForceMap, sums: &[c64]) -> Result<Mat<f64>> {
    let k = a.n_chambers();
    let d = model.state_dim();
    let mut m = Mat::<f64>::zeros(d, k);
    for j in 0..k {
        let col: Vec<f64> = (0..d).map(|i| a.matrix()[(i, j)]).collect();
        let z = model.project_slice(&col)?;
        let z: Vec<c64> = z.iter().zip(sums).map(|(zi, s)| zi * s).collect();
        for (i, v) in model.lift_real(&z)?.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlIterate {
    pub pressures: Vec<f64>,
    /// Predicted final lifted state.
    pub predicted: Vec<f64>,
    /// `|S X_final - X_goal|`.
    pub goal_error: f64,
    /// NNLS residual of the stacked system.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlSolution {
    pub pressures: Vec<f64>,
    pub trace: Vec<ControlIterate>,
}

impl ControlSolution {
    pub fn final_state(&self) -> &[f64] {
        &self.trace.last().expect("at least one iteration").predicted
    }
}

/// Non-negative chamber pressures steering the selected DOFs to the goal.
///
/// The final state is the free response `K^N x0` plus the forced response;
/// each outer iteration rebuilds `A` at the previous predicted final state.
pub fn solve_pressures(model: &KoopmanModel, problem: &ControlProblem, x0: &LiftedState) -> Result<ControlSolution> {
    let d = model.state_dim();
    check_len(d, x0.len())?;
    problem.validate(d)?;
    let k = problem.actuation.n_chambers();
    let sums = propagator_sum(model, problem.horizon)?;
    let free = multi_step(model, x0, problem.horizon)?;

    let sel = &problem.selection;
    let half = d / 2;
    let w = problem.momentum_weight.sqrt();
    let mom_rows = if w > 0.0 { half } else { 0 };
    let rows = sel.len() + mom_rows;

    let mut b = Vec::with_capacity(rows);
    for (i, &s) in sel.iter().enumerate() {
        b.push(problem.goal[i] - free.as_slice()[s]);
    }
    for i in 0..mom_rows {
        b.push(-w * free.as_slice()[half + i]);
    }

    let mut current = x0.clone();
    let mut trace = Vec::with_capacity(problem.iterations);
    for _ in 0..problem.iterations {
        let a = problem.actuation.map_at(&current, model.h())?;
        let m = response_matrix(model, &a, &sums)?;
        let mut stacked = Vec::with_capacity(rows * k);
        for &s in sel {
            stacked.extend((0..k).map(|j| m[(s, j)]));
        }
        for i in 0..mom_rows {
            stacked.extend((0..k).map(|j| w * m[(half + i, j)]));
        }
        let sol = nnls(&stacked, rows, k, &b, &problem.nnls)?;
        let forced: Vec<f64> = (0..d).map(|i| (0..k).map(|j| m[(i, j)] * sol.x[j]).sum::<f64>()).collect();
        let predicted: Vec<f64> = free.as_slice().iter().zip(&forced).map(|(a, b)| a + b).collect();
        let goal_error = sel
            .iter()
            .zip(&problem.goal)
            .map(|(&s, g)| (predicted[s] - g).powi(2))
            .sum::<f64>()
            .sqrt();
        current = LiftedState::from_vec(predicted.clone())?;
        trace.push(ControlIterate { pressures: sol.x, predicted, goal_error, residual: sol.residual });
    }
    Ok(ControlSolution { pressures: trace.last().map(|t| t.pressures.clone()).unwrap_or_default(), trace })
}

/// States along the controlled motion at the given step counts:
/// `K^t x0 + Phi diag(sum_{s=1}^t Lambda^s) Phi^+ A C`, with `A` the map the
/// final outer iteration solved against.
pub fn predicted_trajectory(
    model: &KoopmanModel,
    problem: &ControlProblem,
    x0: &LiftedState,
    solution: &ControlSolution,
    steps: &[u64],
) -> Result<Vec<LiftedState>> {
    let n = solution.trace.len();
    let at = if n >= 2 { LiftedState::from_vec(solution.trace[n - 2].predicted.clone())? } else { x0.clone() };
    let a = problem.actuation.map_at(&at, model.h())?;
    steps
        .iter()
        .map(|&t| {
            let free = multi_step(model, x0, t)?;
            if t == 0 {
                return Ok(free);
            }
            let forced = predict_final(model, &a, &solution.pressures, t)?;
            Ok(&free + &forced)
        })
        .collect()
}
