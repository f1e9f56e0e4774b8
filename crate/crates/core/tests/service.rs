use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::thread;
use std::time::Instant;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use koopsim::control::{solve_pressures, Actuation, ControlProblem};
use koopsim::dmd::{fit, FitOptions, KoopmanModel, RankPolicy};
use koopsim::io::{load_mesh, write_model, RunConfig};
use koopsim::koopstep::{apply_damping, real_multi_step, real_operator, real_step_forced, rescale_timestep};
use koopsim::refsim::mesh::Mesh;
use koopsim::service::{read_frame, serve, write_frame, Reply, Session};
use koopsim::statespace::{lift_force, LiftedState};

const TIP: usize = 21;

struct Fixture {
    _dir: tempfile::TempDir,
    path: PathBuf,
    model: KoopmanModel,
}

/// Finger model fitted from a pressure-driven run, saved to disk.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = RunConfig::parse(
            r#"
            mesh = "builtin:finger"
            h = 0.02
            steps = 240
            [forcing]
            pressures = [
                { start = 0, values = [4.0, 0.0, 2.0] },
                { start = 60, values = [0.0, 5.0, 1.0] },
                { start = 120, values = [3.0, 3.0, 0.0] },
                { start = 180, values = [0.0, 0.0, 0.0] },
            ]
            "#,
            Path::new("."),
        )
        .unwrap();
        let snaps = cfg.simulate(0).unwrap();
        let opts = FitOptions { rank: RankPolicy::Energy { target: 0.999999 }, clamp_unit_disk: true };
        let model = fit(&snaps, &opts).unwrap().0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("finger.kpdm");
        write_model(&path, &model).unwrap();
        Fixture { _dir: dir, path, model }
    })
}

fn finger() -> Mesh {
    load_mesh("builtin:finger", Path::new(".")).unwrap()
}

fn send(s: &mut Session, msg: Value) -> Value {
    let replies = s.handle_text(&msg.to_string());
    assert_eq!(replies.len(), 1);
    serde_json::from_str(&replies[0].to_json()).unwrap()
}

fn load_msg() -> Value {
    json!({"type": "load", "model": fixture().path, "mesh": "builtin:finger"})
}

fn loaded() -> Session {
    let mut s = Session::new(None);
    assert_eq!(send(&mut s, load_msg())["type"], "state");
    s
}

fn floats(v: &Value) -> Vec<f64> {
    serde_json::from_value(v.clone()).unwrap()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    let err = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(err <= tol, "max difference {err:e}");
}

#[test]
fn load_broadcasts_rest_positions() {
    let mut s = Session::new(None);
    let r = send(&mut s, load_msg());
    assert_eq!(r["type"], "state");
    assert_eq!(r["version"], 1);
    assert_eq!(floats(&r["positions"]), finger().model.rest_positions());

    let mut d = Session::new(None);
    let msg = json!({"type": "load", "model": fixture().path, "mesh": "builtin:finger", "display": [0, TIP]});
    let r = send(&mut d, msg);
    let rest = finger().model.rest_positions().to_vec();
    let want: Vec<f64> = [0, TIP].iter().flat_map(|&v| rest[3 * v..3 * v + 3].to_vec()).collect();
    assert_eq!(floats(&r["positions"]), want);
}

#[test]
fn damping_edits_are_not_cumulative() {
    let mut s = loaded();
    for _ in 0..3 {
        let r = send(&mut s, json!({"type": "set_damping", "mu": 0.1}));
        assert_eq!(r["type"], "ok");
        assert_eq!(r["mu"], 0.1);
    }
    let want = apply_damping(&fixture().model, 0.1).unwrap();
    assert_eq!(s.model().unwrap().eigenvalues(), want.eigenvalues());

    send(&mut s, json!({"type": "set_h", "h": 0.04}));
    send(&mut s, json!({"type": "set_damping", "mu": 0.05}));
    let want = apply_damping(&rescale_timestep(&fixture().model, 0.04).unwrap(), 0.05).unwrap();
    assert_eq!(s.model().unwrap().eigenvalues(), want.eigenvalues());
    assert_eq!((s.h_active(), s.mu_active()), (0.04, 0.05));
}

#[test]
fn force_applies_on_the_next_step() {
    let mut s = loaded();
    send(&mut s, json!({"type": "force", "vertex": TIP, "vec": [0.0, 30.0, 0.0]}));
    send(&mut s, json!({"type": "force", "vertex": TIP, "vec": [5.0, 10.0, 0.0]}));
    // vertex 0 is clamped
    send(&mut s, json!({"type": "force", "vertex": 0, "vec": [100.0, 0.0, 0.0]}));
    let r = send(&mut s, json!({"type": "step", "n": 7}));

    let model = &fixture().model;
    let op = real_operator(model).unwrap();
    let mut f = vec![0.0; model.state_dim() / 2];
    f[3 * TIP] = 5.0;
    f[3 * TIP + 1] = 40.0;
    let x0 = LiftedState::zeros(model.state_dim() / 6);
    let x1 = real_step_forced(&op, model, &x0, &lift_force(&f, model.h()).unwrap()).unwrap();
    let want = real_multi_step(&op, model, &x1, 6).unwrap();
    assert_close(s.state().as_slice(), want.as_slice(), 1e-12);

    let rest = finger().model.rest_positions().to_vec();
    let pos: Vec<f64> = rest.iter().zip(want.displacement()).map(|(r, u)| r + u).collect();
    assert_close(&floats(&r["positions"]), &pos, 1e-12);

    // consumed: the next step is free motion
    let before = s.state().clone();
    send(&mut s, json!({"type": "step", "n": 3}));
    assert_close(s.state().as_slice(), real_multi_step(&op, model, &before, 3).unwrap().as_slice(), 1e-12);
}

#[test]
fn step_zero_rebroadcasts_and_reset_returns_to_rest() {
    let mut s = loaded();
    send(&mut s, json!({"type": "force", "vertex": TIP, "vec": [0.0, 10.0, 0.0]}));
    let a = send(&mut s, json!({"type": "step", "n": 4}));
    let b = send(&mut s, json!({"type": "step", "n": 0}));
    assert_eq!(a["positions"], b["positions"]);
    assert_eq!(b["version"].as_u64().unwrap(), a["version"].as_u64().unwrap() + 1);
    let r = send(&mut s, json!({"type": "reset"}));
    assert_eq!(floats(&r["positions"]), finger().model.rest_positions());
}

#[test]
fn errors_carry_codes() {
    let mut s = Session::new(None);
    assert_eq!(send(&mut s, json!({"type": "step", "n": 1}))["code"], "no_model");
    assert_eq!(send(&mut s, json!({"type": "reset"}))["code"], "no_model");
    assert_eq!(send(&mut s, json!({"type": "teleport"}))["code"], "unknown_type");
    assert_eq!(send(&mut s, json!({"n": 1}))["code"], "bad_request");
    assert_eq!(send(&mut s, json!({"type": 3}))["code"], "bad_request");
    let missing = json!({"type": "load", "model": "/nonexistent/model.kpdm"});
    assert_eq!(send(&mut s, missing)["code"], "io");
    let garbage = s.handle_text("{not json");
    assert!(matches!(&garbage[..], [Reply::Error { .. }]));
    let wrong_mesh = json!({"type": "load", "model": fixture().path, "mesh": "builtin:chain"});
    assert_eq!(send(&mut s, wrong_mesh)["code"], "dimension");

    let mut s = loaded();
    assert_eq!(send(&mut s, json!({"type": "step"}))["code"], "bad_request");
    assert_eq!(send(&mut s, json!({"type": "force", "vertex": 999, "vec": [0, 0, 0]}))["code"], "domain");
    assert_eq!(send(&mut s, json!({"type": "set_damping", "mu": 1.5}))["code"], "domain");
    assert_eq!(send(&mut s, json!({"type": "set_h", "h": -0.1}))["code"], "domain");
    assert_eq!(send(&mut s, json!({"type": "control", "targets": [], "horizon": 10}))["code"], "bad_request");
    // a failed edit leaves the previous one in place
    assert_eq!(s.mu_active(), 0.0);

    let (mut bare, _) = Session::with_model(fixture().model.clone(), None).unwrap();
    let r = send(&mut bare, json!({"type": "control", "targets": [[TIP, [0.0, 0.1, 0.0]]], "horizon": 10}));
    assert_eq!(r["code"], "no_mesh");
}

#[test]
fn version_is_monotonic_across_loads() {
    let mut s = Session::new(None);
    let mut last = 0;
    for msg in [
        load_msg(),
        json!({"type": "step", "n": 2}),
        load_msg(),
        json!({"type": "reset"}),
        json!({"type": "step", "n": 0}),
        load_msg(),
    ] {
        let v = send(&mut s, msg)["version"].as_u64().unwrap();
        assert!(v > last);
        last = v;
    }
}

#[test]
fn control_reply_matches_direct_solve() {
    let mut s = loaded();
    let goal = [0.0, 0.05, 0.0];
    let r = send(&mut s, json!({"type": "control", "targets": [{"vertex": TIP, "goal": goal}], "horizon": 60}));
    assert_eq!(r["type"], "control");
    let pressures = floats(&r["pressures"]);
    assert!(pressures.iter().all(|&p| p >= 0.0));
    let keyframes = r["keyframes"].as_array().unwrap();
    assert_eq!(keyframes.len(), 10);
    assert_eq!(keyframes.last().unwrap()["step"], 60);

    let mesh = finger();
    let actuation = Actuation::Chambers { mesh: mesh.model.clone(), chambers: mesh.chambers.clone() };
    let problem = ControlProblem::vertex_goals(actuation, &[(TIP, goal)], 60);
    let x0 = LiftedState::zeros(mesh.model.n_vertices());
    let sol = solve_pressures(&fixture().model, &problem, &x0).unwrap();
    assert_close(&pressures, &sol.pressures, 1e-10);
    let tip_y = floats(&keyframes.last().unwrap()["positions"])[3 * TIP + 1];
    let want = mesh.model.rest_positions()[3 * TIP + 1] + sol.final_state()[3 * TIP + 1];
    assert!((tip_y - want).abs() <= 1e-12);
}

/// Load, 50 drag ticks, a damping edit, free steps and a control sketch,
/// checked against the same calls made directly on the library.
#[test]
fn scripted_interaction_matches_library_replay() {
    let model = &fixture().model;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let drags: Vec<(usize, [f64; 3])> = (0..50)
        .map(|_| (rng.gen_range(1..33), [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), 0.0]))
        .collect();

    let mut s = Session::new(None);
    send(&mut s, load_msg());
    for (v, f) in &drags {
        send(&mut s, json!({"type": "force", "vertex": v, "vec": f}));
        send(&mut s, json!({"type": "step", "n": 1}));
    }
    send(&mut s, json!({"type": "set_damping", "mu": 0.02}));
    let last = send(&mut s, json!({"type": "step", "n": 25}));
    let control = send(&mut s, json!({"type": "control", "targets": [[TIP, [0.0, 0.04, 0.0]]], "horizon": 40}));

    let mesh = finger();
    let op = real_operator(model).unwrap();
    let mut x = LiftedState::zeros(model.state_dim() / 6);
    for (v, f) in &drags {
        let mut acc = vec![0.0; model.state_dim() / 2];
        if !mesh.model.is_fixed(*v) {
            acc[3 * v..3 * v + 3].copy_from_slice(f);
        }
        x = real_step_forced(&op, model, &x, &lift_force(&acc, model.h()).unwrap()).unwrap();
    }
    let damped = apply_damping(model, 0.02).unwrap();
    x = real_multi_step(&real_operator(&damped).unwrap(), &damped, &x, 25).unwrap();
    let want: Vec<f64> = mesh.model.rest_positions().iter().zip(x.displacement()).map(|(r, u)| r + u).collect();
    assert_close(&floats(&last["positions"]), &want, 1e-12);

    let actuation = Actuation::Chambers { mesh: mesh.model.clone(), chambers: mesh.chambers.clone() };
    let problem = ControlProblem::vertex_goals(actuation, &[(TIP, [0.0, 0.04, 0.0])], 40);
    let sol = solve_pressures(&damped, &problem, &x).unwrap();
    assert_close(&floats(&control["pressures"]), &sol.pressures, 1e-10);
}

#[test]
fn tcp_session_greets_and_answers_in_order() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let model = fixture().model.clone();
    let make = Arc::new(move || {
        let (s, greeting) = Session::with_model(model.clone(), Some(finger())).unwrap();
        (s, Some(greeting))
    });
    thread::spawn(move || serve(listener, make));

    let mut stream = TcpStream::connect(addr).unwrap();
    let recv = |s: &mut TcpStream| -> Value { serde_json::from_slice(&read_frame(s).unwrap().unwrap()).unwrap() };
    let greeting = recv(&mut stream);
    assert_eq!(greeting["type"], "state");
    assert_eq!(greeting["version"], 1);
    for msg in [json!({"type": "set_damping", "mu": 0.1}), json!({"type": "step", "n": 3}), json!({"type": "nope"})] {
        write_frame(&mut stream, msg.to_string().as_bytes()).unwrap();
    }
    assert_eq!(recv(&mut stream)["type"], "ok");
    assert_eq!(recv(&mut stream)["version"], 2);
    assert_eq!(recv(&mut stream)["code"], "unknown_type");

    // a second client gets its own session
    let mut other = TcpStream::connect(addr).unwrap();
    assert_eq!(recv(&mut other)["version"], 1);
}

#[test]
fn interactive_step_latency() {
    // 3000 vertices, 64 modes
    let (n, r) = (3000, 64);
    let d = 6 * n;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let raw = Mat::from_fn(d, r, |_, _| rng.gen_range(-1.0..1.0));
    let u = raw.thin_svd().unwrap().U().to_owned();
    let mut k = Mat::<f64>::zeros(r, r);
    for b in 0..r / 2 {
        let (rad, th) = (0.999 - 0.005 * b as f64, 0.03 * (b + 1) as f64);
        k[(2 * b, 2 * b)] = rad * th.cos();
        k[(2 * b, 2 * b + 1)] = -rad * th.sin();
        k[(2 * b + 1, 2 * b)] = rad * th.sin();
        k[(2 * b + 1, 2 * b + 1)] = rad * th.cos();
    }
    let (phi, lam) = koopsim::dmd::eigendecompose(k.as_ref()).unwrap();
    let model = KoopmanModel::from_reduced(u, phi, lam, 0.01).unwrap();
    let (mut s, _) = Session::with_model(model, None).unwrap();

    let mut best = f64::INFINITY;
    for i in 0..10 {
        let t = Instant::now();
        send(&mut s, json!({"type": "force", "vertex": 100 + i, "vec": [0.0, 1.0, 0.0]}));
        send(&mut s, json!({"type": "step", "n": 1}));
        best = best.min(t.elapsed().as_secs_f64());
    }
    assert!(best < 0.016, "{:.1} ms per interactive step", 1e3 * best);
}
