//! Error and energy measures shared by the CLI, the service and the tests.

use crate::error::{check_len, Result};
use crate::refsim::kinetic_energy;
use crate::statespace::LiftedState;

/// `100 |pred - reference|^2 / |reference - rest|^2`.
///
/// Zero when both numerator and denominator vanish; infinite when only the
/// denominator does.
pub fn percentage_mse(pred: &[f64], reference: &[f64], rest: &[f64]) -> Result<f64> {
    check_len(reference.len(), pred.len())?;
    check_len(reference.len(), rest.len())?;
    let num: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum();
    let den: f64 = reference.iter().zip(rest).map(|(r, s)| (r - s) * (r - s)).sum();
    Ok(if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        100.0 * num / den
    })
}

/// Per-frame percentage MSE of lifted trajectories against the lifted rest
/// state (all zeros).
pub fn frame_mse(pred: &[LiftedState], reference: &[LiftedState]) -> Result<Vec<f64>> {
    check_len(reference.len(), pred.len())?;
    pred.iter()
        .zip(reference)
        .map(|(p, r)| percentage_mse(p.as_slice(), r.as_slice(), &vec![0.0; r.len()]))
        .collect()
}

/// Per-frame percentage MSE restricted to the displacement block.
pub fn displacement_mse(pred: &[LiftedState], reference: &[LiftedState]) -> Result<Vec<f64>> {
    check_len(reference.len(), pred.len())?;
    pred.iter()
        .zip(reference)
        .map(|(p, r)| percentage_mse(p.displacement(), r.displacement(), &vec![0.0; r.displacement().len()]))
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Kinetic energy of each frame; `h` is the step the momentum block encodes.
pub fn kinetic_energy_series(states: &[LiftedState], masses: &[f64], h: f64) -> Result<Vec<f64>> {
    states.iter().map(|s| kinetic_energy(s, masses, h)).collect()
}

/// First index after which the series never exceeds half its maximum.
///
/// `None` for an empty or all-zero series, or if the last value is still
/// above half the maximum.
pub fn half_life(series: &[f64]) -> Option<usize> {
    let max = series.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let last_above = series.iter().rposition(|&v| v > 0.5 * max)?;
    (last_above + 1 < series.len()).then_some(last_above + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_definition() {
        assert_eq!(percentage_mse(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!((percentage_mse(&[1.1, 0.0], &[1.0, 0.0], &[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((percentage_mse(&[2.0], &[3.0], &[1.0]).unwrap() - 25.0).abs() < 1e-12);
        assert_eq!(percentage_mse(&[0.0], &[0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(percentage_mse(&[1.0], &[0.0], &[0.0]).unwrap(), f64::INFINITY);
        assert!(percentage_mse(&[1.0], &[0.0, 1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn half_life_examples() {
        assert_eq!(half_life(&[4.0, 3.0, 2.0, 1.0]), Some(2));
        assert_eq!(half_life(&[1.0, 4.0, 1.0, 3.0, 1.0, 0.5]), Some(4));
        assert_eq!(half_life(&[1.0, 1.0]), None);
        assert_eq!(half_life(&[0.0, 0.0]), None);
    }
}
