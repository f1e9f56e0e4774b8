//! The command-line toolchain. Each command reads its inputs, writes its
//! outputs under an output directory and returns the paths it wrote.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bench::{self, BenchMode, BenchOptions};
use crate::control::{pressure_force_map, solve_pressures, Actuation, ControlIterate, ControlProblem};
use crate::dmd::{self, FitOptions, KoopmanModel, SnapshotSet};
use crate::error::{Error, Result};
use crate::io::{self, add_pressure_loads, ControlConfig, RunConfig};
use crate::koopstep::{apply_damping, multi_step, real_multi_step, real_operator, real_step_forced, rescale_timestep, step};
use crate::metrics::{frame_mse, kinetic_energy_series, mean};
use crate::refsim::mesh::Mesh;
use crate::refsim::{simulate_trajectory, FullState, NewtonOptions};
use crate::statespace::{ForceLift, LiftedState};

pub const SNAPSHOT_FILE: &str = "snapshots.kpss";
pub const MODEL_FILE: &str = "model.kpdm";
pub const FIT_REPORT_FILE: &str = "fit_report.json";
pub const ROLLOUT_FILE: &str = "rollout.kpss";
pub const KE_FILE: &str = "ke.csv";
pub const BENCH_FILE: &str = "bench.csv";
pub const CONTROL_FILE: &str = "control.json";
pub const CONTROL_REPLAY_FILE: &str = "control_replay.kpss";
pub const CONTROL_MSE_FILE: &str = "control_mse.csv";

fn out_path(dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    Ok(dir.join(name))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, value).map_err(|e| Error::Io(e.into()))
}

/// Simulates the configured run and writes the snapshot file.
pub fn gen_data(config: &RunConfig, seed: Option<u64>, out_dir: &Path) -> Result<PathBuf> {
    let seed = seed.unwrap_or(config.seed);
    let snaps = config.simulate(seed)?;
    let path = out_path(out_dir, SNAPSHOT_FILE)?;
    io::write_snapshots(&path, &snaps)?;
    log::info!("wrote {} frames of {} vertices to {}", snaps.len(), snaps.n_vertices(), path.display());
    Ok(path)
}

/// Fits a model to a snapshot file. Returns the model and report paths.
pub fn fit(snapshots: &Path, opts: &FitOptions, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let snaps = io::read_snapshots(snapshots)?;
    let (model, report) = dmd::fit(&snaps, opts)?;
    let model_path = out_path(out_dir, MODEL_FILE)?;
    io::write_model(&model_path, &model)?;
    let report_path = out_dir.join(FIT_REPORT_FILE);
    write_json(&report_path, &report)?;
    log::info!(
        "rank {} of {}, relative residual {:.3e}, max |lambda| {:.6}",
        report.rank,
        report.state_dim,
        report.relative_residual,
        report.max_abs_eigenvalue
    );
    Ok((model_path, report_path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RolloutMode {
    /// One complex eigenvalue jump per frame.
    Multistep,
    /// One reduced step per frame, chained.
    Sequential,
    /// Realified jump per frame.
    #[default]
    Real,
}

#[derive(Debug, Clone)]
pub struct RolloutArgs {
    pub model: PathBuf,
    pub initial: PathBuf,
    pub frame: usize,
    pub steps: u64,
    pub mode: RolloutMode,
    /// New step size.
    pub h: Option<f64>,
    pub damping: Option<f64>,
    /// Mesh providing vertex masses for the energy output; unit masses otherwise.
    pub mesh: Option<Mesh>,
}

/// The model after the optional step-size and damping edits, with the
/// step size its momentum block is expressed in.
pub fn edited_model(model: &KoopmanModel, h: Option<f64>, damping: Option<f64>) -> Result<KoopmanModel> {
    let mut m = match h {
        Some(h) => rescale_timestep(model, h)?,
        None => model.clone(),
    };
    if let Some(mu) = damping {
        m = apply_damping(&m, mu)?;
    }
    Ok(m)
}

/// Frames `0..=steps` of the edited model from one snapshot frame.
pub fn rollout_states(model: &KoopmanModel, x0: &LiftedState, steps: u64, mode: RolloutMode) -> Result<Vec<LiftedState>> {
    let mut frames = Vec::with_capacity(steps as usize + 1);
    frames.push(x0.clone());
    match mode {
        RolloutMode::Multistep => {
            for t in 1..=steps {
                frames.push(multi_step(model, x0, t)?);
            }
        }
        RolloutMode::Sequential => {
            for _ in 0..steps {
                let next = step(model, frames.last().unwrap())?;
                frames.push(next);
            }
        }
        RolloutMode::Real => {
            let op = real_operator(model)?;
            for t in 1..=steps {
                frames.push(real_multi_step(&op, model, x0, t)?);
            }
        }
    }
    Ok(frames)
}

/// Rolls a model out and writes the trajectory and its kinetic energy.
pub fn rollout(args: &RolloutArgs, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let base = io::read_model(&args.model)?;
    let snaps = io::read_snapshots(&args.initial)?;
    let x0 = snaps.states().get(args.frame).ok_or_else(|| {
        Error::Domain(format!("frame {} out of range for {} snapshot frames", args.frame, snaps.len()))
    })?;
    let model = edited_model(&base, args.h, args.damping)?;
    let frames = rollout_states(&model, x0, args.steps, args.mode)?;

    let n = x0.n_vertices();
    let masses = match &args.mesh {
        Some(m) if m.model.n_vertices() == n => m.model.masses().to_vec(),
        Some(m) => return Err(Error::dim(n, m.model.n_vertices())),
        None => vec![1.0; n],
    };
    let ke = kinetic_energy_series(&frames, &masses, base.h())?;

    let mut out = SnapshotSet::new(frames, model.h())?;
    if let Some(rest) = snaps.rest_positions() {
        out = out.with_rest_positions(rest.to_vec())?;
    }
    let traj_path = out_path(out_dir, ROLLOUT_FILE)?;
    io::write_snapshots(&traj_path, &out)?;
    let ke_path = out_dir.join(KE_FILE);
    io::write_energy_csv(BufWriter::new(File::create(&ke_path)?), &ke, model.h())?;
    Ok((traj_path, ke_path))
}

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub model: PathBuf,
    pub ns: Vec<u64>,
    pub reps: usize,
    /// Full-space body for the implicit Euler baseline.
    pub mesh: Option<Mesh>,
}

/// Times every stepping mode on a single thread and writes the table.
pub fn bench(args: &BenchArgs, out_dir: &Path) -> Result<PathBuf> {
    faer::set_global_parallelism(faer::Par::Seq);
    let model = io::read_model(&args.model)?;
    let n = model.state_dim() / 6;
    let opts = BenchOptions { ns: args.ns.clone(), reps: args.reps, ..BenchOptions::default() };

    // uniform displacement on every DOF so no mode starts at zero
    let x = LiftedState::from_vec((0..6 * n).map(|i| if i < 3 * n { 1e-2 } else { 0.0 }).collect())?;
    let mut rows = bench::bench_model(&model, &x, &opts, &[BenchMode::Real, BenchMode::Multistep, BenchMode::Sequential])?;
    if let Some(mesh) = &args.mesh {
        if mesh.model.n_vertices() != n {
            return Err(Error::dim(n, mesh.model.n_vertices()));
        }
        let s0 = FullState::at_rest(&mesh.model);
        let mut drive = bench::periodic_drive(&mesh.model, model.h(), 0.1, 1.0);
        rows.extend(bench::bench_refsim(&mesh.model, &s0, model.h(), &mut drive, &opts)?);
    }
    let path = out_path(out_dir, BENCH_FILE)?;
    bench::write_csv(&rows, BufWriter::new(File::create(&path)?))?;
    for r in &rows {
        log::info!("{:>10} N={:<8} {:.3e} s", r.mode.name(), r.n, r.seconds);
    }
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlOutput {
    pub pressures: Vec<f64>,
    pub horizon: u64,
    pub h: f64,
    pub goal_error: f64,
    pub iterations: Vec<ControlIterate>,
    /// Per-frame percentage MSE of the reduced replay against refsim.
    pub replay_mse: Vec<f64>,
    pub replay_mse_mean: f64,
    pub replay_mse_max: f64,
}

/// Solves for chamber pressures reaching the configured vertex goals, then
/// applies them to the reduced model and to refsim from rest and compares.
pub fn control(model_path: &Path, problem: &ControlConfig, out_dir: &Path) -> Result<PathBuf> {
    let model = io::read_model(model_path)?;
    let mesh = problem.mesh()?;
    let n = mesh.model.n_vertices();
    if model.state_dim() != 6 * n {
        return Err(Error::dim(6 * n, model.state_dim()));
    }
    if let Some(t) = problem.targets.iter().find(|t| t.vertex >= n) {
        return Err(Error::Domain(format!("target vertex {} out of range", t.vertex)));
    }
    let targets: Vec<(usize, [f64; 3])> = problem.targets.iter().map(|t| (t.vertex, t.goal)).collect();
    let actuation = Actuation::Chambers { mesh: mesh.model.clone(), chambers: mesh.chambers.clone() };
    let mut cp = ControlProblem::vertex_goals(actuation, &targets, problem.horizon);
    cp.iterations = problem.iterations;
    cp.momentum_weight = problem.momentum_weight;
    if problem.horizon < 2 {
        return Err(Error::Domain("control horizon must be at least 2 steps".into()));
    }
    let x0 = LiftedState::zeros(n);
    let sol = solve_pressures(&model, &cp, &x0)?;

    let h = model.h();
    let steps = problem.horizon as usize;
    let (body, chambers, c) = (&mesh.model, &mesh.chambers, &sol.pressures);
    let mut loads = |_t: usize, s: &FullState, out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        add_pressure_loads(body, chambers, &s.positions, c, out);
    };
    let replay = simulate_trajectory(body, &FullState::at_rest(body), h, steps, &mut loads, &NewtonOptions::default())?;

    let op = real_operator(&model)?;
    let mut x = x0;
    let mut reduced = vec![x.clone()];
    for _ in 0..steps {
        let a = pressure_force_map(body, &x, chambers, h)?;
        let f = ForceLift::from_lifted(a.apply(c)?, h)?;
        x = real_step_forced(&op, &model, &x, &f)?;
        reduced.push(x.clone());
    }
    let mse = frame_mse(&reduced, replay.states())?;

    let replay_path = out_path(out_dir, CONTROL_REPLAY_FILE)?;
    io::write_snapshots(&replay_path, &replay.with_rest_positions(body.rest_positions().to_vec())?)?;
    let mse_path = out_dir.join(CONTROL_MSE_FILE);
    {
        use std::io::Write;
        let mut w = BufWriter::new(File::create(&mse_path)?);
        writeln!(w, "step,time,mse_percent")?;
        for (i, m) in mse.iter().enumerate() {
            writeln!(w, "{i},{:e},{m:e}", i as f64 * h)?;
        }
    }
    let output = ControlOutput {
        goal_error: sol.trace.last().map_or(0.0, |t| t.goal_error),
        pressures: sol.pressures.clone(),
        horizon: problem.horizon,
        h,
        iterations: sol.trace,
        replay_mse_mean: mean(&mse),
        replay_mse_max: mse.iter().cloned().fold(0.0, f64::max),
        replay_mse: mse,
    };
    let path = out_dir.join(CONTROL_FILE);
    write_json(&path, &output)?;
    log::info!("pressures {:?}, replay MSE max {:.3}%", output.pressures, output.replay_mse_max);
    Ok(path)
}
