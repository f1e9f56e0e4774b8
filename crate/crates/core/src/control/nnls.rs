use faer::Mat;

use crate::error::{check_len, Error, Result};
use crate::linalg::RealLstsq;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnlsOptions {
    /// Stop once every inactive gradient component is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NnlsOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub x: Vec<f64>,
    /// `|M x - b|`.
    pub residual: f64,
    pub iterations: usize,
}

/// `min |M x - b|^2` subject to `x >= 0` by the Lawson-Hanson active-set method.
///
/// `m` is row-major `rows x k`.
pub fn nnls(m: &[f64], rows: usize, k: usize, b: &[f64], opts: &NnlsOptions) -> Result<NnlsSolution> {
    if rows == 0 || k == 0 {
        return Err(Error::Domain("nnls needs at least one row and one column".into()));
    }
    check_len(rows * k, m.len())?;
    check_len(rows, b.len())?;
    if m.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Domain("nnls input has non-finite entries".into()));
    }

    let mut x = vec![0.0; k];
    let mut passive = vec![false; k];
    let mut iterations = 0;

    loop {
        let w = gradient(m, rows, k, b, &x);
        // most violated inactive constraint; indices whose entry was immediately
        // rejected this round are skipped
        let mut skip = vec![false; k];
        let entering = loop {
            let cand = (0..k)
                .filter(|&j| !passive[j] && !skip[j] && w[j] > opts.tol)
                .max_by(|&a, &b| w[a].total_cmp(&w[b]));
            let Some(j) = cand else { break None };
            passive[j] = true;
            let s = solve_passive(m, rows, k, b, &passive)?;
            if s[j] > 0.0 {
                break Some(s);
            }
            passive[j] = false;
            skip[j] = true;
        };
        let Some(mut s) = entering else { break };

        loop {
            iterations += 1;
            if iterations > opts.max_iter {
                let residual = residual_norm(m, rows, k, b, &x);
                return Err(Error::Nnls { iterations: opts.max_iter, residual });
            }
            if (0..k).filter(|&i| passive[i]).all(|i| s[i] > 0.0) {
                x = s;
                break;
            }
            // step toward s until the first passive entry hits zero
            let mut alpha = f64::INFINITY;
            let mut blocking = None;
            for i in 0..k {
                if passive[i] && s[i] <= 0.0 {
                    let denom = x[i] - s[i];
                    let a = if denom > 0.0 { x[i] / denom } else { 0.0 };
                    if a < alpha {
                        alpha = a;
                        blocking = Some(i);
                    }
                }
            }
            for i in 0..k {
                if passive[i] {
                    x[i] += alpha * (s[i] - x[i]);
                }
            }
            if let Some(i) = blocking {
                x[i] = 0.0;
            }
            for i in 0..k {
                if passive[i] && x[i] <= 0.0 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
            s = solve_passive(m, rows, k, b, &passive)?;
        }
    }
    let residual = residual_norm(m, rows, k, b, &x);
    Ok(NnlsSolution { x, residual, iterations })
}

/// `M^T (b - M x)`.
pub(crate) fn gradient(m: &[f64], rows: usize, k: usize, b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; k];
    for i in 0..rows {
        let row = &m[i * k..(i + 1) * k];
        let r = b[i] - row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        for j in 0..k {
            w[j] += row[j] * r;
        }
    }
    w
}

fn residual_norm(m: &[f64], rows: usize, k: usize, b: &[f64], x: &[f64]) -> f64 {
    (0..rows)
        .map(|i| {
            let r = m[i * k..(i + 1) * k].iter().zip(x).map(|(a, v)| a * v).sum::<f64>() - b[i];
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// Unconstrained least squares on the passive columns; zero elsewhere.
fn solve_passive(m: &[f64], rows: usize, k: usize, b: &[f64], passive: &[bool]) -> Result<Vec<f64>> {
    let cols: Vec<usize> = (0..k).filter(|&j| passive[j]).collect();
    let sub = Mat::from_fn(rows, cols.len(), |i, c| m[i * k + cols[c]]);
    let rhs = Mat::from_fn(rows, 1, |i, _| b[i]);
    let sol = RealLstsq::new(sub.as_ref())?.solve(rhs.as_ref());
    let mut out = vec![0.0; k];
    for (c, &j) in cols.iter().enumerate() {
        out[j] = sol[(c, 0)];
    }
    Ok(out)
}
