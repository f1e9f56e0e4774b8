//! Eigendecomposition of the reduced operator with a canonical ordering.

use std::cmp::Ordering;

use faer::{c64, Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::{cmax_abs, max_abs, to_complex};

/// Condition number of the eigenvector matrix above which the spectrum is rejected.
pub const MAX_EIGVEC_COND: f64 = 1e12;

/// Eigenpairs of a real square matrix, `K phi = phi diag(lambda)`.
///
/// Ordering: descending modulus, ties broken by descending imaginary part,
/// with each conjugate pair adjacent (positive imaginary part first).
/// Conjugate partners are made exactly conjugate. Each eigenvector has unit
/// norm and its largest entry real and positive.
pub fn eigendecompose(k: MatRef<'_, f64>) -> Result<(Mat<c64>, Vec<c64>)> {
    let r = k.nrows();
    if r == 0 || k.ncols() != r {
        return Err(Error::Eigen(format!("expected a nonempty square matrix, got {}x{}", r, k.ncols())));
    }
    if (0..r).any(|i| (0..r).any(|j| !k[(i, j)].is_finite())) {
        return Err(Error::Eigen("matrix has non-finite entries".into()));
    }
    let evd = k.eigen().map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let raw_vals: Vec<c64> = (0..r).map(|i| evd.S().column_vector()[i]).collect();
    let raw_vecs = evd.U();

    let scale = raw_vals.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let is_real = |v: c64| v.im.abs() <= 1e-14 * scale;

    // group into real singletons and conjugate pairs
    let mut units: Vec<(c64, Vec<c64>, bool)> = Vec::new();
    let mut used = vec![false; r];
    for i in 0..r {
        if used[i] {
            continue;
        }
        let v = raw_vals[i];
        if is_real(v) {
            used[i] = true;
            let vec = normalize((0..r).map(|row| raw_vecs[(row, i)]).collect());
            units.push((c64::new(v.re, 0.0), vec, false));
            continue;
        }
        // pick the closest unused partner to conj(v)
        let target = v.conj();
        let partner = (0..r)
            .filter(|&j| j != i && !used[j] && !is_real(raw_vals[j]) && raw_vals[j].im * v.im < 0.0)
            .min_by(|&a, &b| {
                (raw_vals[a] - target)
                    .norm()
                    .partial_cmp(&(raw_vals[b] - target).norm())
                    .unwrap_or(Ordering::Equal)
            });
        let Some(j) = partner else {
            return Err(Error::Eigen(format!("complex eigenvalue {v} has no conjugate partner")));
        };
        used[i] = true;
        used[j] = true;
        let (lead, col) = if v.im > 0.0 { (v, i) } else { (raw_vals[j], j) };
        let vec = normalize((0..r).map(|row| raw_vecs[(row, col)]).collect());
        units.push((lead, vec, true));
    }

    // moduli are compared on a 1e-12 grid so rounding noise does not split ties
    let quantized = |v: c64| (v.norm() * 1e12).round();
    units.sort_by(|a, b| {
        quantized(b.0)
            .total_cmp(&quantized(a.0))
            .then(b.0.im.total_cmp(&a.0.im))
    });

    let mut vals = Vec::with_capacity(r);
    let mut vecs = Mat::<c64>::zeros(r, r);
    let mut col = 0;
    for (lead, v, pair) in units {
        vals.push(lead);
        for row in 0..r {
            vecs[(row, col)] = v[row];
        }
        col += 1;
        if pair {
            vals.push(lead.conj());
            for row in 0..r {
                vecs[(row, col)] = v[row].conj();
            }
            col += 1;
        }
    }

    let cond = condition_number(vecs.as_ref())?;
    if !(cond <= MAX_EIGVEC_COND) {
        return Err(Error::IllConditioned { cond });
    }

    let kc = to_complex(k);
    let mut resid = &kc * &vecs;
    for j in 0..r {
        for i in 0..r {
            resid[(i, j)] -= vecs[(i, j)] * vals[j];
        }
    }
    let err = cmax_abs(resid.as_ref());
    let knorm = max_abs(k).max(f64::MIN_POSITIVE);
    if err > 1e-8 * knorm * r as f64 {
        return Err(Error::Eigen(format!("eigenpair residual {err:e} exceeds tolerance")));
    }
    Ok((vecs, vals))
}

fn normalize(mut v: Vec<c64>) -> Vec<c64> {
    let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    let (mut best, mut best_abs) = (0, -1.0);
    for (i, x) in v.iter().enumerate() {
        // first index wins among near-ties so the phase choice is stable
        if x.norm() > best_abs * (1.0 + 1e-9) {
            best = i;
            best_abs = x.norm();
        }
    }
    let phase = v[best].conj() / v[best].norm();
    for x in v.iter_mut() {
        *x = *x * phase / norm;
    }
    v[best] = c64::new(v[best].re, 0.0);
    v
}

pub(crate) fn condition_number(m: MatRef<'_, c64>) -> Result<f64> {
    let s = m.singular_values().map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let max = s.first().copied().unwrap_or(0.0);
    let min = s.last().copied().unwrap_or(0.0);
    Ok(if min > 0.0 { max / min } else { f64::INFINITY })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn identity_gives_unit_spectrum_and_identity_basis() {
        let (phi, lam) = eigendecompose(Mat::<f64>::identity(3, 3).as_ref()).unwrap();
        for l in &lam {
            assert!((*l - c64::new(1.0, 0.0)).norm() < 1e-15);
        }
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((phi[(i, j)] - c64::new(e, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn rotation_by_quarter_pi() {
        // characteristic polynomial l^2 - 2 cos(t) l + 1 -> e^{+-i t}
        let (c, s) = (FRAC_PI_4.cos(), FRAC_PI_4.sin());
        let k = Mat::<f64>::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) | (1, 1) => c,
            (0, 1) => -s,
            _ => s,
        });
        let (phi, lam) = eigendecompose(k.as_ref()).unwrap();
        assert!((lam[0] - c64::new(c, s)).norm() < 1e-14);
        assert!((lam[1] - c64::new(c, -s)).norm() < 1e-14);
        assert_eq!(lam[1], lam[0].conj());
        assert_eq!(phi[(0, 1)], phi[(0, 0)].conj());
    }

    #[test]
    fn diagonal_sorted_by_modulus() {
        let k = Mat::<f64>::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => 0.5,
            (1, 1) => 0.9,
            _ => 0.0,
        });
        let (_, lam) = eigendecompose(k.as_ref()).unwrap();
        assert_eq!(lam, vec![c64::new(0.9, 0.0), c64::new(0.5, 0.0)]);
    }

    #[test]
    fn defective_matrix_is_rejected() {
        let k = Mat::<f64>::from_fn(2, 2, |i, j| if i == j || j == i + 1 { 1.0 } else { 0.0 });
        assert!(matches!(eigendecompose(k.as_ref()), Err(Error::IllConditioned { .. } | Error::Eigen(_))));
    }

    #[test]
    fn mixed_spectrum_keeps_pairs_adjacent() {
        // block diag(rotation-scaling 0.8 at 0.3 rad, 0.8 real, rotation-scaling 0.5)
        let mut k = Mat::<f64>::zeros(5, 5);
        let (a, b) = (0.8 * 0.3f64.cos(), 0.8 * 0.3f64.sin());
        k[(0, 0)] = a;
        k[(0, 1)] = -b;
        k[(1, 0)] = b;
        k[(1, 1)] = a;
        k[(2, 2)] = 0.8;
        k[(3, 3)] = 0.3;
        k[(3, 4)] = -0.4;
        k[(4, 3)] = 0.4;
        k[(4, 4)] = 0.3;
        let (_, lam) = eigendecompose(k.as_ref()).unwrap();
        assert!(lam[0].im > 0.0 && lam[1] == lam[0].conj());
        assert!(lam[2].im == 0.0 && (lam[2].re - 0.8).abs() < 1e-14);
        assert!(lam[3].im > 0.0 && lam[4] == lam[3].conj());
    }
}
