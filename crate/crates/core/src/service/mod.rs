//! Interactive session engine and its JSON message protocol.
//!
//! Requests:
//!
//! ```text
//! {"type":"load","model":"<path>","mesh":"<path>"?,"display":[i, ...]?}
//! {"type":"force","vertex":i,"vec":[x,y,z]}
//! {"type":"set_h","h":h}
//! {"type":"set_damping","mu":mu}
//! {"type":"step","n":n}
//! {"type":"control","targets":[{"vertex":i,"goal":[x,y,z]} | [i,[x,y,z]], ...],"horizon":N}
//! {"type":"reset"}
//! ```
//!
//! Replies are `state` broadcasts, `ok` acknowledgements, `control`
//! results and `error` messages; see [`Reply`].

mod server;

pub use server::{read_frame, serve, serve_connection, write_frame, MAX_FRAME_LEN};

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::control::{predicted_trajectory, solve_pressures, Actuation, ControlProblem};
use crate::dmd::KoopmanModel;
use crate::error::Error;
use crate::io::{load_mesh, read_model};
use crate::koopstep::{apply_damping, real_multi_step, real_operator, real_step_forced, rescale_timestep, RealOperator};
use crate::refsim::mesh::Mesh;
use crate::statespace::{lift_force, LiftedState};

/// Number of predicted states returned with a control reply.
pub const CONTROL_KEYFRAMES: u64 = 10;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Load {
        model: String,
        #[serde(default)]
        mesh: Option<String>,
        #[serde(default)]
        display: Option<Vec<usize>>,
    },
    Force {
        vertex: usize,
        vec: [f64; 3],
    },
    SetH {
        h: f64,
    },
    SetDamping {
        mu: f64,
    },
    Step {
        n: u64,
    },
    Control {
        targets: Vec<Target>,
        horizon: u64,
    },
    Reset,
}

const REQUEST_TYPES: [&str; 7] = ["load", "force", "set_h", "set_damping", "step", "control", "reset"];

/// Goal displacement of one vertex, as an object or a `[vertex, [x, y, z]]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Named { vertex: usize, goal: [f64; 3] },
    Pair(usize, [f64; 3]),
}

impl Target {
    fn parts(self) -> (usize, [f64; 3]) {
        match self {
            Target::Named { vertex, goal } | Target::Pair(vertex, goal) => (vertex, goal),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not valid JSON or missing/ill-typed fields.
    BadRequest,
    UnknownType,
    /// The request needs a loaded model.
    NoModel,
    /// The request needs a mesh (with chambers, for control).
    NoMesh,
    Dimension,
    Domain,
    Io,
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Keyframe {
    pub step: u64,
    pub positions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reply {
    State { version: u64, positions: Vec<f64> },
    Ok { request: &'static str, h: f64, mu: f64 },
    Control { pressures: Vec<f64>, goal_error: f64, keyframes: Vec<Keyframe> },
    Error { code: ErrorCode, detail: String },
}

impl Reply {
    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        Reply::Error { code, detail: detail.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("replies serialize")
    }
}

fn error_reply(e: &Error) -> Reply {
    let code = match e {
        Error::Dimension { .. } => ErrorCode::Dimension,
        Error::Domain(_) | Error::StepSize { .. } | Error::SingularLog { .. } => ErrorCode::Domain,
        Error::Io(_) | Error::Format(_) | Error::InvalidModel(_) | Error::Config(_) => ErrorCode::Io,
        _ => ErrorCode::Numerical,
    };
    Reply::error(code, e.to_string())
}

struct Loaded {
    /// The model as read from disk; `h` and damping edits start from here.
    pristine: KoopmanModel,
    active: KoopmanModel,
    op: Arc<RealOperator>,
}

/// One client's simulation. Messages are handled strictly in order.
pub struct Session {
    loaded: Option<Loaded>,
    mesh: Option<Mesh>,
    display: Option<Vec<usize>>,
    current: LiftedState,
    h_active: f64,
    mu_active: f64,
    /// Per-unit-mass force per DOF, applied on the next step.
    pending: Option<Vec<f64>>,
    version: u64,
    clock: Option<Instant>,
}

impl Default for Session {
    fn default() -> Self {
        Self::new(None)
    }
}

impl Session {
    /// Empty session; `mesh` is used for display positions and control
    /// unless a load request names another.
    pub fn new(mesh: Option<Mesh>) -> Self {
        Self {
            loaded: None,
            mesh,
            display: None,
            current: LiftedState::zeros(1),
            h_active: 1.0,
            mu_active: 0.0,
            pending: None,
            version: 0,
            clock: None,
        }
    }

    /// Session with `model` already loaded. Returns the initial broadcast.
    pub fn with_model(model: KoopmanModel, mesh: Option<Mesh>) -> Result<(Self, Reply), Reply> {
        let mut s = Self::new(mesh);
        let reply = s.install(model, None).map_err(|e| error_reply(&e))?;
        Ok((s, reply))
    }

    pub fn model(&self) -> Option<&KoopmanModel> {
        self.loaded.as_ref().map(|l| &l.active)
    }

    pub fn state(&self) -> &LiftedState {
        &self.current
    }

    pub fn h_active(&self) -> f64 {
        self.h_active
    }

    pub fn mu_active(&self) -> f64 {
        self.mu_active
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Time of the last step, if any.
    pub fn last_step(&self) -> Option<Instant> {
        self.clock
    }

    /// Parses and handles one wire message.
    pub fn handle_text(&mut self, text: &str) -> Vec<Reply> {
        let value: serde_json::Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return vec![Reply::error(ErrorCode::BadRequest, format!("invalid JSON: {e}"))],
        };
        match value.get("type").and_then(|t| t.as_str()) {
            None => return vec![Reply::error(ErrorCode::BadRequest, "missing string field \"type\"")],
            Some(t) if !REQUEST_TYPES.contains(&t) => {
                return vec![Reply::error(ErrorCode::UnknownType, format!("unknown message type {t:?}"))]
            }
            Some(_) => {}
        }
        match serde_json::from_value::<Request>(value) {
            Ok(req) => self.handle(req),
            Err(e) => vec![Reply::error(ErrorCode::BadRequest, e.to_string())],
        }
    }

    pub fn handle(&mut self, req: Request) -> Vec<Reply> {
        let result = match req {
            Request::Load { model, mesh, display } => self.load(&model, mesh.as_deref(), display),
            Request::Reset => self.reset(),
            other => {
                if self.loaded.is_none() {
                    return vec![Reply::error(ErrorCode::NoModel, "no model loaded")];
                }
                match other {
                    Request::Force { vertex, vec } => self.force(vertex, vec),
                    Request::SetH { h } => self.set_edit(Some(h), None, "set_h"),
                    Request::SetDamping { mu } => self.set_edit(None, Some(mu), "set_damping"),
                    Request::Step { n } => self.step(n),
                    Request::Control { targets, horizon } => self.control(&targets, horizon),
                    Request::Load { .. } | Request::Reset => unreachable!(),
                }
            }
        };
        match result {
            Ok(r) => vec![r],
            Err(r) => vec![r],
        }
    }

    fn load(&mut self, path: &str, mesh: Option<&str>, display: Option<Vec<usize>>) -> Result<Reply, Reply> {
        let model = read_model(Path::new(path)).map_err(|e| error_reply(&e))?;
        if let Some(m) = mesh {
            self.mesh = Some(load_mesh(m, Path::new(".")).map_err(|e| error_reply(&e))?);
        }
        self.install(model, display).map_err(|e| error_reply(&e))
    }

    fn install(&mut self, model: KoopmanModel, display: Option<Vec<usize>>) -> crate::Result<Reply> {
        let n = model.state_dim() / 6;
        if let Some(mesh) = &self.mesh {
            if mesh.model.n_vertices() != n {
                return Err(Error::dim(6 * mesh.model.n_vertices(), model.state_dim()));
            }
        }
        if let Some(&bad) = display.iter().flatten().find(|&&v| v >= n) {
            return Err(Error::Domain(format!("display vertex {bad} out of range")));
        }
        let op = real_operator(&model)?;
        self.h_active = model.h();
        self.mu_active = 0.0;
        self.current = LiftedState::zeros(n);
        self.pending = None;
        self.display = display;
        self.loaded = Some(Loaded { pristine: model.clone(), active: model, op });
        Ok(self.broadcast())
    }

    fn reset(&mut self) -> Result<Reply, Reply> {
        if self.loaded.is_none() {
            return Err(Reply::error(ErrorCode::NoModel, "no model loaded"));
        }
        self.current = LiftedState::zeros(self.current.n_vertices());
        self.pending = None;
        Ok(self.broadcast())
    }

    fn force(&mut self, vertex: usize, vec: [f64; 3]) -> Result<Reply, Reply> {
        let n = self.current.n_vertices();
        if vertex >= n {
            return Err(error_reply(&Error::Domain(format!("vertex {vertex} out of range for {n} vertices"))));
        }
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(error_reply(&Error::Domain("force has non-finite components".into())));
        }
        let fixed = self.mesh.as_ref().is_some_and(|m| m.model.is_fixed(vertex));
        let pending = self.pending.get_or_insert_with(|| vec![0.0; 3 * n]);
        if !fixed {
            for c in 0..3 {
                pending[3 * vertex + c] += vec[c];
            }
        }
        Ok(Reply::Ok { request: "force", h: self.h_active, mu: self.mu_active })
    }

    /// Rebuilds the active model from the pristine one so edits are absolute.
    fn set_edit(&mut self, h: Option<f64>, mu: Option<f64>, request: &'static str) -> Result<Reply, Reply> {
        let h = h.unwrap_or(self.h_active);
        let mu = mu.unwrap_or(self.mu_active);
        let loaded = self.loaded.as_mut().expect("checked by caller");
        let rescaled = rescale_timestep(&loaded.pristine, h).map_err(|e| error_reply(&e))?;
        let active = apply_damping(&rescaled, mu).map_err(|e| error_reply(&e))?;
        let op = real_operator(&active).map_err(|e| error_reply(&e))?;
        *loaded = Loaded { pristine: loaded.pristine.clone(), active, op };
        self.h_active = h;
        self.mu_active = mu;
        Ok(Reply::Ok { request, h, mu })
    }

    fn step(&mut self, n: u64) -> Result<Reply, Reply> {
        if n == 0 {
            return Ok(self.broadcast());
        }
        let loaded = self.loaded.as_ref().expect("checked by caller");
        let (model, op) = (&loaded.active, &loaded.op);
        let mut x = self.current.clone();
        let mut remaining = n;
        if let Some(f) = self.pending.take() {
            let force = lift_force(&f, self.h_active).map_err(|e| error_reply(&e))?;
            x = real_step_forced(op, model, &x, &force).map_err(|e| error_reply(&e))?;
            remaining -= 1;
        }
        if remaining > 0 {
            x = real_multi_step(op, model, &x, remaining).map_err(|e| error_reply(&e))?;
        }
        self.current = x;
        self.clock = Some(Instant::now());
        Ok(self.broadcast())
    }

    fn control(&mut self, targets: &[Target], horizon: u64) -> Result<Reply, Reply> {
        let mesh = match &self.mesh {
            Some(m) if !m.chambers.is_empty() => m,
            _ => return Err(Reply::error(ErrorCode::NoMesh, "control needs a mesh with chambers")),
        };
        if targets.is_empty() {
            return Err(Reply::error(ErrorCode::BadRequest, "control needs at least one target"));
        }
        let n = mesh.model.n_vertices();
        let targets: Vec<(usize, [f64; 3])> = targets.iter().map(|t| t.parts()).collect();
        if let Some((bad, _)) = targets.iter().find(|(v, _)| *v >= n) {
            return Err(error_reply(&Error::Domain(format!("target vertex {bad} out of range"))));
        }
        let model = &self.loaded.as_ref().expect("checked by caller").active;
        let actuation = Actuation::Chambers { mesh: mesh.model.clone(), chambers: mesh.chambers.clone() };
        let problem = ControlProblem::vertex_goals(actuation, &targets, horizon);
        let sol = solve_pressures(model, &problem, &self.current).map_err(|e| error_reply(&e))?;
        let k = CONTROL_KEYFRAMES.min(horizon);
        let steps: Vec<u64> = (1..=k).map(|i| i * horizon / k).collect();
        let states = predicted_trajectory(model, &problem, &self.current, &sol, &steps).map_err(|e| error_reply(&e))?;
        let keyframes = steps
            .iter()
            .zip(&states)
            .map(|(&step, x)| Keyframe { step, positions: self.positions(x) })
            .collect();
        let goal_error = sol.trace.last().map_or(0.0, |t| t.goal_error);
        Ok(Reply::Control { pressures: sol.pressures, goal_error, keyframes })
    }

    fn positions(&self, x: &LiftedState) -> Vec<f64> {
        let u = x.displacement();
        let pos = |v: usize, c: usize| {
            self.mesh.as_ref().map_or(0.0, |m| m.model.rest_positions()[3 * v + c]) + u[3 * v + c]
        };
        match &self.display {
            Some(sel) => sel.iter().flat_map(|&v| (0..3).map(move |c| pos(v, c))).collect(),
            None => (0..u.len() / 3).flat_map(|v| (0..3).map(move |c| pos(v, c))).collect(),
        }
    }

    fn broadcast(&mut self) -> Reply {
        self.version += 1;
        Reply::State { version: self.version, positions: self.positions(&self.current) }
    }
}
