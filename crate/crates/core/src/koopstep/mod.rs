//! Time stepping with a fitted model: single and forced steps, N-step jumps,
//! time-step rescaling, damping edits, and the geometric propagator sum.

mod real;

pub(crate) use real::projected_identity;
pub use real::{real_multi_step, real_multi_step_with_residue, real_step_forced, real_operator, realify, Projection, RealOperator};

use faer::c64;

use crate::dmd::KoopmanModel;
use crate::error::{check_len, Error, Result};
use crate::statespace::{ForceLift, LiftedState};

const ONE: c64 = c64 { re: 1.0, im: 0.0 };
const ZERO: c64 = c64 { re: 0.0, im: 0.0 };

/// Eigenvalues with modulus below this cannot be rescaled.
pub const SINGULAR_LOG_TOL: f64 = 1e-14;

/// `lambda^n` from the integer power of the modulus and `n` times the argument.
/// Real eigenvalues stay exactly real.
pub fn eigen_power(lambda: c64, n: u64) -> c64 {
    if n == 0 {
        return ONE;
    }
    if lambda.im == 0.0 {
        return c64::new(real_pow(lambda.re, n), 0.0);
    }
    let m = real_pow(lambda.norm(), n);
    c64::from_polar(m, lambda.arg() * n as f64)
}

fn real_pow(x: f64, n: u64) -> f64 {
    match i32::try_from(n) {
        Ok(k) => x.powi(k),
        Err(_) => {
            // beyond i32: split the exponent so powi stays exact in structure
            let hi = (n >> 31) as i32;
            let lo = (n & 0x7fff_ffff) as i32;
            x.powi(hi).powi(1 << 30).powi(2) * x.powi(lo)
        }
    }
}

/// `lambda^s = exp(s log lambda)` on the principal branch.
pub fn eigen_power_frac(lambda: c64, s: f64) -> c64 {
    if s == 0.0 {
        return ONE;
    }
    if lambda == ZERO {
        return ZERO;
    }
    if lambda.im == 0.0 && lambda.re > 0.0 {
        return c64::new(lambda.re.powf(s), 0.0);
    }
    (lambda.ln() * s).exp()
}

/// Reduced coordinates after `n` steps: `Lambda^n z`.
pub fn advance_coords(model: &KoopmanModel, z: &[c64], n: u64) -> Result<Vec<c64>> {
    check_len(model.rank(), z.len())?;
    Ok(z.iter().zip(model.eigenvalues()).map(|(zi, &l)| zi * eigen_power(l, n)).collect())
}

/// `Re(Phi Lambda Phi^+ x)`.
pub fn step(model: &KoopmanModel, x: &LiftedState) -> Result<LiftedState> {
    multi_step(model, x, 1)
}

/// One step of the forced update `K (x + F)`.
pub fn step_forced(model: &KoopmanModel, x: &LiftedState, force: &ForceLift) -> Result<LiftedState> {
    check_h(model, force)?;
    step(model, &x.add_force(force)?)
}

pub(crate) fn check_h(model: &KoopmanModel, force: &ForceLift) -> Result<()> {
    if (force.h() - model.h()).abs() > 1e-12 * model.h() {
        return Err(Error::StepSize { model: model.h(), force: force.h() });
    }
    Ok(())
}

/// `Re(Phi Lambda^n Phi^+ x)`; `n = 0` returns the projection of `x` onto the modes.
pub fn multi_step(model: &KoopmanModel, x: &LiftedState, n: u64) -> Result<LiftedState> {
    let z = model.project_slice(x.as_slice())?;
    let z = advance_coords(model, &z, n)?;
    LiftedState::from_vec(model.lift_real(&z)?)
}

/// Fractional horizon: `Re(Phi exp(s log Lambda) Phi^+ x)`.
pub fn multi_step_frac(model: &KoopmanModel, x: &LiftedState, s: f64) -> Result<LiftedState> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!("step count must be non-negative, got {s}")));
    }
    if s.fract() == 0.0 && s <= u64::MAX as f64 {
        return multi_step(model, x, s as u64);
    }
    let z = model.project_slice(x.as_slice())?;
    let z: Vec<c64> = z.iter().zip(model.eigenvalues()).map(|(zi, &l)| zi * eigen_power_frac(l, s)).collect();
    LiftedState::from_vec(model.lift_real(&z)?)
}

/// Same modes with `Lambda(h') = exp((h'/h) log Lambda(h))`.
///
/// Integer ratios use exact integer powers so that `rescale(2h)` agrees with
/// two steps of the source model.
pub fn rescale_timestep(model: &KoopmanModel, h_new: f64) -> Result<KoopmanModel> {
    if !(h_new > 0.0) || !h_new.is_finite() {
        return Err(Error::Domain(format!("time step must be positive, got {h_new}")));
    }
    for (i, l) in model.eigenvalues().iter().enumerate() {
        if l.norm() < SINGULAR_LOG_TOL {
            return Err(Error::SingularLog { mode: i, modulus: l.norm() });
        }
    }
    let ratio = h_new / model.h();
    if ratio == 1.0 {
        return Ok(model.with_spectrum(model.eigenvalues().to_vec(), h_new));
    }
    if h_new > model.h() {
        let aliased = model
            .eigenvalues()
            .iter()
            .filter(|l| l.arg().abs() > std::f64::consts::PI - 0.1)
            .count();
        if aliased > 0 {
            log::warn!("{aliased} eigenvalues lie near the negative real axis; rescaling to h = {h_new} may alias");
        }
    }
    let rounded = ratio.round();
    let integer = (ratio - rounded).abs() <= 1e-12 * ratio && rounded >= 1.0;
    let eigs = model
        .eigenvalues()
        .iter()
        .map(|&l| if integer { eigen_power(l, rounded as u64) } else { eigen_power_frac(l, ratio) })
        .collect();
    Ok(model.with_spectrum(eigs, h_new))
}

/// Every eigenvalue scaled by `1 - mu`.
pub fn apply_damping(model: &KoopmanModel, mu: f64) -> Result<KoopmanModel> {
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::Domain(format!("damping must lie in [0, 1), got {mu}")));
    }
    let eigs = model.eigenvalues().iter().map(|l| l * (1.0 - mu)).collect();
    Ok(model.with_spectrum(eigs, model.h()))
}

/// `sum_{t=1}^{n} lambda^t` per eigenvalue.
pub fn propagator_sum(model: &KoopmanModel, n: u64) -> Result<Vec<c64>> {
    if n == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    Ok(model.eigenvalues().iter().map(|&l| geometric_sum(l, n)).collect())
}

/// `sum_{t=1}^{n} lambda^t = lambda (lambda^n - 1) / (lambda - 1)`.
///
/// Evaluated as `e^l expm1(n l) / expm1(l)` with `l = log lambda`, which has
/// no cancellation as `lambda -> 1` and reduces to `n` there.
pub fn geometric_sum(lambda: c64, n: u64) -> c64 {
    if n == 0 || lambda == ZERO {
        return ZERO;
    }
    if lambda == ONE {
        return c64::new(n as f64, 0.0);
    }
    if lambda.im == 0.0 && lambda.re > 0.0 {
        let l = (lambda.re - 1.0).ln_1p();
        return c64::new(lambda.re * (n as f64 * l).exp_m1() / l.exp_m1(), 0.0);
    }
    if (lambda - ONE).norm() > 0.5 {
        // far from 1 the direct form has no cancellation either
        return lambda * (eigen_power(lambda, n) - ONE) / (lambda - ONE);
    }
    let l = ln_near_one(lambda);
    lambda * cexpm1(l * n as f64) / cexpm1(l)
}

/// Principal `log lambda` with full relative accuracy in `log |lambda|` near 1.
fn ln_near_one(lambda: c64) -> c64 {
    // re - 1 is exact here, so |lambda|^2 - 1 carries no cancellation
    let a = lambda.re - 1.0;
    let m2m1 = a * (2.0 + a) + lambda.im * lambda.im;
    c64::new(0.5 * m2m1.ln_1p(), lambda.im.atan2(lambda.re))
}

/// `exp(z) - 1` without cancellation for small `|z|`.
fn cexpm1(z: c64) -> c64 {
    let (s, c) = z.im.sin_cos();
    let half = (0.5 * z.im).sin();
    let em1 = z.re.exp_m1();
    c64::new(em1 * c - 2.0 * half * half, (em1 + 1.0) * s)
}
