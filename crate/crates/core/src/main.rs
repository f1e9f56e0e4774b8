use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{ArgGroup, Args, Parser, Subcommand};

use koopsim::commands::{self, BenchArgs, RolloutArgs, RolloutMode};
use koopsim::dmd::{FitOptions, RankPolicy};
use koopsim::io::{load_mesh, read_model, ControlConfig, RunConfig, VertexTarget};
use koopsim::service::{self, Session};
use koopsim::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

/// Koopman reduced-order deformable dynamics toolchain.
#[derive(Parser)]
#[command(name = "koopsim", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    output: PathBuf,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured run with the reference integrator.
    GenData,
    /// Fit a Koopman model to a snapshot file.
    Fit(FitArgs),
    /// Roll a model out from a snapshot frame.
    Rollout(RolloutCli),
    /// Time the stepping paths against horizon length.
    Bench(BenchCli),
    /// Solve for chamber pressures and validate them against refsim.
    Control(ControlCli),
    /// Serve interactive sessions over TCP.
    Serve(ServeCli),
}

#[derive(Args)]
#[command(group(ArgGroup::new("policy").args(["rank", "energy", "full_rank"])))]
struct FitArgs {
    snapshots: PathBuf,
    /// Keep exactly this many singular values.
    #[arg(long)]
    rank: Option<usize>,
    /// Keep singular values up to this cumulative energy fraction.
    #[arg(long)]
    energy: Option<f64>,
    /// Keep every singular value above the noise floor.
    #[arg(long)]
    full_rank: bool,
    /// Leave eigenvalues outside the unit disk as fitted.
    #[arg(long)]
    no_clamp: bool,
}

#[derive(Args)]
#[command(group(ArgGroup::new("mode").args(["multistep", "sequential", "real"])))]
struct RolloutCli {
    model: PathBuf,
    /// Snapshot file holding the initial state.
    #[arg(long)]
    initial: PathBuf,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Number of steps.
    #[arg(short = 'n', long)]
    steps: u64,
    /// Complex eigenvalue jump per frame.
    #[arg(long)]
    multistep: bool,
    /// Chained single steps.
    #[arg(long)]
    sequential: bool,
    /// Realified jump per frame (default).
    #[arg(long)]
    real: bool,
    /// Step size to rescale the model to.
    #[arg(long)]
    h_rescale: Option<f64>,
    /// Damping fraction per step, in [0, 1).
    #[arg(long)]
    damping: Option<f64>,
    /// Mesh for vertex masses in the energy output.
    #[arg(long)]
    mesh: Option<String>,
}

#[derive(Args)]
struct BenchCli {
    model: PathBuf,
    /// Horizons to time.
    #[arg(long = "n", value_delimiter = ',', default_values_t = [1u64, 1_000, 1_000_000])]
    ns: Vec<u64>,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Full-space mesh for the implicit Euler baseline.
    #[arg(long)]
    mesh: Option<String>,
}

#[derive(Args)]
struct ControlCli {
    model: PathBuf,
    /// Control problem (TOML); defaults to --config.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Replaces the problem's targets: `vertex:x,y,z`, repeatable.
    #[arg(long = "goal", value_parser = parse_target)]
    goals: Vec<VertexTarget>,
    #[arg(long)]
    horizon: Option<u64>,
}

#[derive(Args)]
struct ServeCli {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    mesh: Option<String>,
    #[arg(long, default_value_t = 7878)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

fn parse_target(s: &str) -> Result<VertexTarget, String> {
    let (v, g) = s.split_once(':').ok_or("expected vertex:x,y,z")?;
    let vertex = v.trim().parse().map_err(|e| format!("bad vertex: {e}"))?;
    let parts: Vec<f64> = g
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("bad goal: {e}"))?;
    let goal: [f64; 3] = parts.try_into().map_err(|_| "goal needs three components".to_string())?;
    Ok(VertexTarget { vertex, goal })
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { EXIT_DATA } else { EXIT_NUMERICAL })
        }
    }
}

fn mesh_arg(spec: &Option<String>) -> Result<Option<koopsim::refsim::mesh::Mesh>, Error> {
    spec.as_deref().map(|s| load_mesh(s, Path::new("."))).transpose()
}

fn run(cli: Cli) -> Result<(), Failure> {
    let out = &cli.output;
    match cli.command {
        Command::GenData => {
            let path = cli.config.as_ref().ok_or_else(|| Failure::Usage("gen-data requires --config".into()))?;
            let config = RunConfig::load(path)?;
            let written = commands::gen_data(&config, cli.seed, out)?;
            println!("{}", written.display());
        }
        Command::Fit(a) => {
            let mut opts = match &cli.config {
                Some(path) => RunConfig::load(path)?.fit,
                None => FitOptions::default(),
            };
            if let Some(rank) = a.rank {
                opts.rank = RankPolicy::Fixed { rank };
            } else if let Some(target) = a.energy {
                opts.rank = RankPolicy::Energy { target };
            } else if a.full_rank {
                opts.rank = RankPolicy::Full;
            }
            if a.no_clamp {
                opts.clamp_unit_disk = false;
            }
            let (model, report) = commands::fit(&a.snapshots, &opts, out)?;
            println!("{}\n{}", model.display(), report.display());
        }
        Command::Rollout(a) => {
            let mode = if a.multistep {
                RolloutMode::Multistep
            } else if a.sequential {
                RolloutMode::Sequential
            } else {
                RolloutMode::Real
            };
            let args = RolloutArgs {
                model: a.model,
                initial: a.initial,
                frame: a.frame,
                steps: a.steps,
                mode,
                h: a.h_rescale,
                damping: a.damping,
                mesh: mesh_arg(&a.mesh)?,
            };
            let (traj, ke) = commands::rollout(&args, out)?;
            println!("{}\n{}", traj.display(), ke.display());
        }
        Command::Bench(a) => {
            if a.ns.is_empty() {
                return Err(Failure::Usage("bench needs at least one horizon".into()));
            }
            let args = BenchArgs { model: a.model, ns: a.ns, reps: a.reps, mesh: mesh_arg(&a.mesh)? };
            println!("{}", commands::bench(&args, out)?.display());
        }
        Command::Control(a) => {
            let path = a
                .problem
                .as_ref()
                .or(cli.config.as_ref())
                .ok_or_else(|| Failure::Usage("control requires --problem or --config".into()))?;
            let mut problem = ControlConfig::load(path)?;
            if !a.goals.is_empty() {
                problem.targets = a.goals;
            }
            if let Some(h) = a.horizon {
                problem.horizon = h;
            }
            if problem.targets.is_empty() {
                return Err(Failure::Usage("control problem has no targets".into()));
            }
            println!("{}", commands::control(&a.model, &problem, out)?.display());
        }
        Command::Serve(a) => serve(a)?,
    }
    Ok(())
}

fn serve(a: ServeCli) -> Result<(), Error> {
    let mesh = mesh_arg(&a.mesh)?;
    let model = a.model.as_deref().map(read_model).transpose()?;
    if let Some(m) = &model {
        // surface dimension mismatches before accepting connections
        Session::with_model(m.clone(), mesh.clone()).map_err(|r| Error::Config(r.to_json()))?;
    }
    let listener = TcpListener::bind((a.host.as_str(), a.port))?;
    log::warn!("listening on {}", listener.local_addr()?);
    let make = Arc::new(move || match &model {
        Some(m) => match Session::with_model(m.clone(), mesh.clone()) {
            Ok((s, greeting)) => (s, Some(greeting)),
            Err(reply) => (Session::new(mesh.clone()), Some(reply)),
        },
        None => (Session::new(mesh.clone()), None),
    });
    service::serve(listener, make)?;
    Ok(())
}
