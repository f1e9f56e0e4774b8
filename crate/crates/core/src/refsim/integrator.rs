use super::{ElasticModel, FullState};
use crate::error::{check_len, Error, Result};
use crate::linalg::cholesky_solve;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Bound on `|M (v' - v) - h (F_int(x + h v') + f_ext + M g)|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 50 }
    }
}

/// One implicit Euler step: `x' = x + h v'`, `M (v' - v) = h (F_int(x') + f_ext + M g)`.
///
/// `f_ext` is a per-DOF external force (not acceleration). Fixed vertices keep
/// their rest positions and zero velocity.
pub fn implicit_euler_step(
    model: &ElasticModel,
    s: &FullState,
    h: f64,
    f_ext: &[f64],
    opts: &NewtonOptions,
) -> Result<FullState> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Domain(format!("time step must be positive, got {h}")));
    }
    let ndof = model.rest_positions().len();
    check_len(ndof, s.positions.len())?;
    check_len(ndof, s.velocities.len())?;
    check_len(ndof, f_ext.len())?;

    let free = model.free_dofs();
    let nf = free.len();
    let dof_mass = model.dof_masses();
    let g = model.gravity();
    let h2 = h * h;

    // per free DOF: mass, inertial target h*v, and the constant load h^2 (f_ext + m g)
    let mass: Vec<f64> = free.iter().map(|&d| dof_mass[d]).collect();
    let target: Vec<f64> = free.iter().map(|&d| h * s.velocities[d]).collect();
    let load: Vec<f64> = free
        .iter()
        .map(|&d| h2 * (f_ext[d] + dof_mass[d] * g[d % 3]))
        .collect();

    let mut x = s.positions.clone();
    for &v in &model.fixed_vertices() {
        for c in 0..3 {
            x[3 * v + c] = model.rest_positions()[3 * v + c];
        }
    }
    let base = x.clone();
    let mut delta = target.clone();
    let mut trial = base.clone();

    let apply = |delta: &[f64], out: &mut Vec<f64>| {
        out.copy_from_slice(&base);
        for (k, &d) in free.iter().enumerate() {
            out[d] += delta[k];
        }
    };

    // incremental potential whose stationarity is the implicit Euler system
    let energy = |delta: &[f64], xt: &[f64]| -> f64 {
        let mut e = 0.0;
        for k in 0..nf {
            let r = delta[k] - target[k];
            e += 0.5 * mass[k] * r * r - load[k] * delta[k];
        }
        e + h2 * model.potential(xt)
    };

    let gradient = |delta: &[f64], xt: &[f64], out: &mut Vec<f64>| {
        let mut full = vec![0.0; ndof];
        model.add_potential_gradient(xt, &mut full);
        for (k, &d) in free.iter().enumerate() {
            out[k] = mass[k] * (delta[k] - target[k]) + h2 * full[d] - load[k];
        }
    };

    let mut grad = vec![0.0; nf];
    apply(&delta, &mut trial);
    gradient(&delta, &trial, &mut grad);
    let mut residual = crate::linalg::norm2(&grad) / h;
    let mut e_cur = energy(&delta, &trial);
    let mut iterations = 0;
    let mut jac = vec![0.0; nf * nf];

    while residual > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::Convergence { iterations, residual });
        }
        iterations += 1;

        let mut step = grad.iter().map(|v| -v).collect::<Vec<_>>();
        let mut solved = false;
        for project in [false, true] {
            jac.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..nf {
                jac[k * nf + k] = mass[k];
            }
            model.add_hessian(&trial, h2, project, &mut jac);
            let mut rhs = step.clone();
            if cholesky_solve(&mut jac, nf, &mut rhs) {
                step = rhs;
                solved = true;
                break;
            }
        }
        if !solved {
            return Err(Error::Convergence { iterations, residual });
        }

        let slope: f64 = grad.iter().zip(&step).map(|(g, p)| g * p).sum();
        let mut alpha = 1.0;
        let mut next = vec![0.0; nf];
        let mut x_next = base.clone();
        loop {
            for k in 0..nf {
                next[k] = delta[k] + alpha * step[k];
            }
            apply(&next, &mut x_next);
            let e_next = energy(&next, &x_next);
            let slack = 1e-12 * e_cur.abs().max(1e-300);
            if e_next <= e_cur + 1e-4 * alpha * slope + slack || alpha < 1e-10 {
                e_cur = e_next;
                break;
            }
            alpha *= 0.5;
        }
        delta = next;
        trial = x_next;
        gradient(&delta, &trial, &mut grad);
        residual = crate::linalg::norm2(&grad) / h;
    }

    let mut velocities = vec![0.0; ndof];
    for (k, &d) in free.iter().enumerate() {
        velocities[d] = delta[k] / h;
    }
    Ok(FullState {
        positions: trial,
        velocities,
        time: s.time + h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refsim::SpringLaw;

    fn oscillator(law: SpringLaw) -> ElasticModel {
        ElasticModel::new(vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0], &[(0, 1, 1.0)], vec![1.0, 1.0], &[0])
            .unwrap()
            .with_law(law)
    }

    #[test]
    fn free_flight_advances_by_hv() {
        // no springs attached to vertex 1: place it far from vertex 0 with a weak spring
        // replaced by an unconnected vertex
        let model = ElasticModel::new(
            vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 5.0, 5.0, 5.0],
            &[(0, 1, 1.0)],
            vec![1.0, 1.0, 2.0],
            &[0, 1],
        )
        .unwrap();
        let mut s = FullState::at_rest(&model);
        s.velocities[6..9].copy_from_slice(&[1.0, -2.0, 0.5]);
        let h = 0.1;
        let out = implicit_euler_step(&model, &s, h, &[0.0; 9], &NewtonOptions::default()).unwrap();
        for c in 0..3 {
            assert!((out.positions[6 + c] - (s.positions[6 + c] + h * s.velocities[6 + c])).abs() < 1e-15);
        }
    }

    #[test]
    fn one_dof_closed_form() {
        let model = oscillator(SpringLaw::Linear);
        let mut s = FullState::at_rest(&model);
        s.positions[3] = 2.0; // displacement 1
        let out = implicit_euler_step(&model, &s, 1.0, &[0.0; 6], &NewtonOptions::default()).unwrap();
        assert!((out.positions[3] - 1.5).abs() < 1e-12);
        assert!((out.velocities[3] + 0.5).abs() < 1e-12);
        // the fixed vertex stays put
        assert_eq!(&out.positions[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&out.velocities[..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn nonlinear_spring_along_axis_matches_closed_form() {
        // along the spring axis the nonlinear force equals the linear one
        let model = oscillator(SpringLaw::Nonlinear);
        let mut s = FullState::at_rest(&model);
        s.positions[3] = 2.0;
        let out = implicit_euler_step(&model, &s, 1.0, &[0.0; 6], &NewtonOptions::default()).unwrap();
        assert!((out.positions[3] - 1.5).abs() < 1e-10);
    }

    #[test]
    fn tiny_step_is_continuous() {
        let model = oscillator(SpringLaw::Nonlinear).with_gravity([0.0, -9.81, 0.0]);
        let mut s = FullState::at_rest(&model);
        s.positions[3] = 1.3;
        s.positions[4] = 0.2;
        s.velocities[3..6].copy_from_slice(&[0.5, -1.0, 0.25]);
        let h = 1e-9;
        let out = implicit_euler_step(&model, &s, h, &[0.0; 6], &NewtonOptions::default()).unwrap();
        let vnorm = crate::linalg::norm2(&s.velocities);
        assert!(crate::linalg::dist2(&out.positions, &s.positions) <= 1e-6 * (vnorm + 1.0));
    }

    #[test]
    fn residual_satisfies_tolerance() {
        let model = ElasticModel::new(
            vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0],
            &[(0, 1, 50.0), (1, 2, 50.0)],
            vec![1.0, 0.5, 0.5],
            &[0],
        )
        .unwrap()
        .with_gravity([0.0, -9.81, 0.0]);
        let mut s = FullState::at_rest(&model);
        s.velocities[7] = 3.0;
        let h = 0.05;
        let f_ext = vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let out = implicit_euler_step(&model, &s, h, &f_ext, &NewtonOptions::default()).unwrap();
        let fint = model.internal_forces(&out.positions);
        let m = model.dof_masses();
        let g = model.gravity();
        let mut r2 = 0.0;
        for d in 3..9 {
            let r = m[d] * (out.velocities[d] - s.velocities[d]) - h * (fint[d] + f_ext[d] + m[d] * g[d % 3]);
            r2 += r * r;
        }
        assert!(r2.sqrt() <= 1e-9);
    }

    #[test]
    fn unconditionally_stable_on_linear_spring() {
        let model = oscillator(SpringLaw::Linear);
        for &(u, v, h) in &[(1.0, 0.0, 1.0), (0.3, -2.0, 0.1), (-1.0, 5.0, 3.0)] {
            let mut s = FullState::at_rest(&model);
            s.positions[3] = 1.0 + u;
            s.velocities[3] = v;
            let out = implicit_euler_step(&model, &s, h, &[0.0; 6], &NewtonOptions::default()).unwrap();
            let u2 = out.positions[3] - 1.0;
            let v2 = out.velocities[3];
            assert!(u2 * u2 + v2 * v2 <= u * u + v * v + 1e-12);
        }
    }

    #[test]
    fn linear_network_step_is_linear() {
        let rest = vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.3, 0.0, 1.0, 1.0, 0.0];
        let model = ElasticModel::new(
            rest.clone(),
            &[(0, 1, 10.0), (1, 2, 7.0), (2, 3, 4.0), (1, 3, 2.0)],
            vec![1.0, 0.7, 1.3, 0.9],
            &[0],
        )
        .unwrap()
        .with_law(SpringLaw::Linear);
        let h = 0.05;
        let zero = vec![0.0; 12];
        let step_rel = |u: &[f64], v: &[f64]| {
            let s = FullState {
                positions: rest.iter().zip(u).map(|(r, u)| r + u).collect(),
                velocities: v.to_vec(),
                time: 0.0,
            };
            let o = implicit_euler_step(&model, &s, h, &zero, &NewtonOptions::default()).unwrap();
            (o.displacement(&model), o.velocities)
        };
        let pat = |seed: usize| -> Vec<f64> {
            (0..12).map(|i| if i < 3 { 0.0 } else { (((i * 31 + seed * 17) % 11) as f64 - 5.0) * 0.01 }).collect()
        };
        let (u1, v1, u2, v2) = (pat(1), pat(2), pat(3), pat(4));
        let (a, b) = (0.7, -1.3);
        let comb = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(x, y)| a * x + b * y).collect() };
        let (ur1, vr1) = step_rel(&u1, &v1);
        let (ur2, vr2) = step_rel(&u2, &v2);
        let (uc, vc) = step_rel(&comb(&u1, &u2), &comb(&v1, &v2));
        assert!(crate::linalg::dist2(&uc, &comb(&ur1, &ur2)) < 1e-12);
        assert!(crate::linalg::dist2(&vc, &comb(&vr1, &vr2)) < 1e-11);
    }

    #[test]
    fn rejects_bad_step() {
        let model = oscillator(SpringLaw::Linear);
        let s = FullState::at_rest(&model);
        assert!(implicit_euler_step(&model, &s, 0.0, &[0.0; 6], &NewtonOptions::default()).is_err());
        assert!(implicit_euler_step(&model, &s, 0.1, &[0.0; 3], &NewtonOptions::default()).is_err());
    }

    #[test]
    fn convergence_error_reports_residual() {
        let model = oscillator(SpringLaw::Nonlinear);
        let mut s = FullState::at_rest(&model);
        s.positions[3] = 3.0;
        s.velocities[4] = 2.0;
        let opts = NewtonOptions { tol: 1e-30, max_iter: 2 };
        match implicit_euler_step(&model, &s, 0.5, &[0.0; 6], &opts) {
            Err(Error::Convergence { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual.is_finite());
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }
}
