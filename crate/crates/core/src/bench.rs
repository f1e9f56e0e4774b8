//! Wall-clock timing of the stepping paths against horizon length.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::dmd::KoopmanModel;
use crate::error::Result;
use crate::koopstep::{multi_step, real_multi_step, real_operator, step};
use crate::refsim::{implicit_euler_step, ElasticModel, Forcing, FullState, NewtonOptions};
use crate::statespace::LiftedState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    /// Realified jump by repeated squaring.
    Real,
    /// Complex jump through eigenvalue powers.
    Multistep,
    /// `N` single reduced steps.
    Sequential,
    /// `N` implicit Euler steps of the full model.
    Refsim,
}

impl BenchMode {
    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Real => "real",
            BenchMode::Multistep => "multistep",
            BenchMode::Sequential => "sequential",
            BenchMode::Refsim => "refsim",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BenchRow {
    pub mode: BenchMode,
    pub n: u64,
    /// Fastest of the timed repetitions.
    pub seconds: f64,
    pub reps: usize,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub ns: Vec<u64>,
    /// Repetitions for the jump modes; the minimum is reported.
    pub reps: usize,
    /// Repetitions for the step-by-step modes.
    pub sequential_reps: usize,
    /// Step-by-step modes are skipped above this horizon.
    pub sequential_cap: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { ns: vec![1, 1_000, 1_000_000], reps: 20, sequential_reps: 1, sequential_cap: 1_000_000 }
    }
}

fn min_time(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    // one untimed warmup run
    f()?;
    let mut best = f64::INFINITY;
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        f()?;
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// Times the reduced stepping paths from `x` for every horizon.
pub fn bench_model(model: &KoopmanModel, x: &LiftedState, opts: &BenchOptions, modes: &[BenchMode]) -> Result<Vec<BenchRow>> {
    let op = real_operator(model)?;
    let mut rows = Vec::new();
    for &n in &opts.ns {
        for &mode in modes {
            let (reps, seconds) = match mode {
                BenchMode::Real => (opts.reps, min_time(opts.reps, || real_multi_step(&op, model, x, n).map(drop))?),
                BenchMode::Multistep => (opts.reps, min_time(opts.reps, || multi_step(model, x, n).map(drop))?),
                BenchMode::Sequential if n <= opts.sequential_cap => {
                    let t = min_time(opts.sequential_reps, || {
                        let mut s = x.clone();
                        for _ in 0..n {
                            s = step(model, &s)?;
                        }
                        std::hint::black_box(&s);
                        Ok(())
                    })?;
                    (opts.sequential_reps, t)
                }
                _ => continue,
            };
            rows.push(BenchRow { mode, n, seconds, reps });
        }
    }
    Ok(rows)
}

/// Sinusoidal load along x on the last vertex, keeping the body in motion
/// so that every implicit Euler step needs Newton iterations.
pub fn periodic_drive(model: &ElasticModel, h: f64, amplitude: f64, omega: f64) -> impl FnMut(usize, &FullState, &mut [f64]) {
    let last = model.n_vertices() - 1;
    move |t, _, out| {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[3 * last] = amplitude * (omega * t as f64 * h).sin();
    }
}

/// Times implicit Euler stepping of the full model from `s0` under `forcing`.
pub fn bench_refsim(
    model: &ElasticModel,
    s0: &FullState,
    h: f64,
    forcing: &mut dyn Forcing,
    opts: &BenchOptions,
) -> Result<Vec<BenchRow>> {
    let mut f_ext = vec![0.0; model.rest_positions().len()];
    let newton = NewtonOptions::default();
    let mut rows = Vec::new();
    for &n in opts.ns.iter().filter(|&&n| n <= opts.sequential_cap) {
        let seconds = min_time(opts.sequential_reps, || {
            let mut s = s0.clone();
            for t in 0..n as usize {
                forcing.force(t, &s, &mut f_ext);
                s = implicit_euler_step(model, &s, h, &f_ext, &newton)?;
            }
            std::hint::black_box(&s);
            Ok(())
        })?;
        rows.push(BenchRow { mode: BenchMode::Refsim, n, seconds, reps: opts.sequential_reps });
    }
    Ok(rows)
}

/// `time(n_hi) / time(n_lo)` for one mode, if both were measured.
pub fn ratio(rows: &[BenchRow], mode: BenchMode, n_lo: u64, n_hi: u64) -> Option<f64> {
    let find = |n| rows.iter().find(|r| r.mode == mode && r.n == n).map(|r| r.seconds);
    Some(find(n_hi)? / find(n_lo)?)
}

pub fn write_csv(rows: &[BenchRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "mode,n,seconds,reps")?;
    for r in rows {
        writeln!(w, "{},{},{:e},{}", r.mode.name(), r.n, r.seconds, r.reps)?;
    }
    Ok(())
}
