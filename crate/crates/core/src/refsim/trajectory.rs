use super::{implicit_euler_step, ElasticModel, FullState, NewtonOptions};
use crate::dmd::SnapshotSet;
use crate::error::{check_len, Error, Result};
use crate::statespace::{lift, lift_force};

/// External force schedule for [`simulate_trajectory`].
pub trait Forcing {
    /// Writes the per-DOF external force (Newtons) applied during `step`,
    /// given the state at the start of the step.
    fn force(&mut self, step: usize, state: &FullState, out: &mut [f64]);
}

pub struct NoForcing;

impl Forcing for NoForcing {
    fn force(&mut self, _step: usize, _state: &FullState, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

pub struct ConstantForce(pub Vec<f64>);

impl Forcing for ConstantForce {
    fn force(&mut self, _step: usize, _state: &FullState, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

impl<F: FnMut(usize, &FullState, &mut [f64])> Forcing for F {
    fn force(&mut self, step: usize, state: &FullState, out: &mut [f64]) {
        self(step, state, out)
    }
}

/// Runs `steps` implicit Euler steps and returns `steps + 1` lifted frames.
///
/// Displacements are relative to the rest positions; the first frame's
/// momentum is `h v0`. The applied forcing (external force over mass plus
/// gravity) is recorded per step in lifted form so the fit can separate it
/// from the autonomous dynamics. It is omitted when identically zero.
pub fn simulate_trajectory(
    model: &ElasticModel,
    s0: &FullState,
    h: f64,
    steps: usize,
    forcing: &mut dyn Forcing,
    opts: &NewtonOptions,
) -> Result<SnapshotSet> {
    if steps < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 steps, got {steps}")));
    }
    let ndof = model.rest_positions().len();
    check_len(ndof, s0.positions.len())?;

    let mut states = Vec::with_capacity(steps + 1);
    let mut forces = Vec::with_capacity(steps);
    let mut any_force = false;

    let mut state = s0.clone();
    let mut u_prev: Vec<f64> = state
        .displacement(model)
        .iter()
        .zip(&state.velocities)
        .map(|(u, v)| u - h * v)
        .collect();
    let mut u_curr = state.displacement(model);
    states.push(lift(&u_curr, &u_prev)?);

    let mut f_ext = vec![0.0; ndof];
    for step in 0..steps {
        forcing.force(step, &state, &mut f_ext);
        let accel = model.applied_acceleration(&f_ext);
        let lifted = lift_force(&accel, h)?;
        any_force |= lifted.as_slice().iter().any(|&v| v != 0.0);
        forces.push(lifted.into_vec());

        state = implicit_euler_step(model, &state, h, &f_ext, opts)
            .map_err(|e| Error::Step { step, source: Box::new(e) })?;
        u_prev = u_curr;
        u_curr = state.displacement(model);
        states.push(lift(&u_curr, &u_prev)?);
    }

    let mut snaps = SnapshotSet::new(states, h)?.with_rest_positions(model.rest_positions().to_vec())?;
    if any_force {
        snaps = snaps.with_forces(forces)?;
    }
    Ok(snaps)
}
