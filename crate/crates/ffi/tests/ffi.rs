use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use koopsim::dmd::{fit, FitOptions, KoopmanModel};
use koopsim::io::write_model;
use koopsim::koopstep::{apply_damping, real_multi_step, real_operator, real_step_forced, rescale_timestep};
use koopsim::refsim::{simulate_trajectory, FullState, NewtonOptions, NoForcing, SpringLaw};
use koopsim::scenarios;
use koopsim::statespace::{lift_force, LiftedState};
use koopsim_ffi::*;

fn chain_model() -> KoopmanModel {
    let body = scenarios::chain(6, 1.0, 1.0, 1.0, SpringLaw::Linear).unwrap();
    let mut s0 = FullState::at_rest(&body);
    for (i, v) in s0.velocities.iter_mut().enumerate().skip(3) {
        *v = 0.01 * ((i * 7 % 5) as f64 - 2.0);
    }
    let snaps = simulate_trajectory(&body, &s0, 0.1, 120, &mut NoForcing, &NewtonOptions::default()).unwrap();
    fit(&snaps, &FitOptions::default()).unwrap().0
}

fn saved(dir: &Path, model: &KoopmanModel) -> CString {
    let path = dir.join("model.kpdm");
    write_model(&path, model).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn load(path: &CString) -> *mut KsModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { ks_model_load(path.as_ptr(), &mut m) }, KsStatus::Ok);
    assert!(!m.is_null());
    m
}

fn sample_state(d: usize) -> Vec<f64> {
    (0..d).map(|i| if i >= 3 && i < d / 2 { 0.01 * ((i % 4) as f64 - 1.5) } else { 0.0 }).collect()
}

fn last_error() -> String {
    let p = ks_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn step_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let model = chain_model();
    let m = load(&saved(dir.path(), &model));
    let d = unsafe { ks_model_state_dim(m) };
    assert_eq!(d, model.state_dim());
    assert_eq!(unsafe { ks_model_rank(m) }, model.rank());
    assert_eq!(unsafe { ks_model_h(m) }, model.h());

    let x = sample_state(d);
    let mut out = vec![0.0; d];
    assert_eq!(unsafe { ks_model_step(m, x.as_ptr(), d, 250, out.as_mut_ptr()) }, KsStatus::Ok);
    let op = real_operator(&model).unwrap();
    let expect = real_multi_step(&op, &model, &LiftedState::from_vec(x.clone()).unwrap(), 250).unwrap();
    assert_eq!(out, expect.as_slice());

    // in-place stepping
    let mut y = x.clone();
    assert_eq!(unsafe { ks_model_step(m, y.as_ptr(), d, 250, y.as_mut_ptr()) }, KsStatus::Ok);
    assert_eq!(y, out);
    unsafe { ks_model_free(m) };
}

#[test]
fn forced_step_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let model = chain_model();
    let m = load(&saved(dir.path(), &model));
    let d = model.state_dim();
    let x = sample_state(d);
    let f: Vec<f64> = (0..d / 2).map(|i| if i == d / 2 - 2 { 0.5 } else { 0.0 }).collect();
    let mut out = vec![0.0; d];
    let status = unsafe { ks_model_step_forced(m, x.as_ptr(), d, f.as_ptr(), f.len(), out.as_mut_ptr()) };
    assert_eq!(status, KsStatus::Ok);
    let op = real_operator(&model).unwrap();
    let expect = real_step_forced(
        &op,
        &model,
        &LiftedState::from_vec(x).unwrap(),
        &lift_force(&f, model.h()).unwrap(),
    )
    .unwrap();
    assert_eq!(out, expect.as_slice());
    unsafe { ks_model_free(m) };
}

#[test]
fn edits_are_absolute() {
    let dir = tempfile::tempdir().unwrap();
    let model = chain_model();
    let m = load(&saved(dir.path(), &model));
    let r = model.rank();
    unsafe {
        assert_eq!(ks_model_set_damping(m, 0.02), KsStatus::Ok);
        assert_eq!(ks_model_set_damping(m, 0.02), KsStatus::Ok);
        assert_eq!(ks_model_set_h(m, 0.3), KsStatus::Ok);
    }
    assert_eq!(unsafe { ks_model_h(m) }, 0.3);
    assert_eq!(unsafe { ks_model_training_h(m) }, 0.1);
    let expect = apply_damping(&rescale_timestep(&model, 0.3).unwrap(), 0.02).unwrap();
    let (mut re, mut im) = (vec![0.0; r], vec![0.0; r]);
    assert_eq!(unsafe { ks_model_eigenvalues(m, re.as_mut_ptr(), im.as_mut_ptr(), r) }, KsStatus::Ok);
    for (i, l) in expect.eigenvalues().iter().enumerate() {
        assert_eq!((re[i], im[i]), (l.re, l.im));
    }
    unsafe { ks_model_free(m) };
}

#[test]
fn errors_set_status_and_message() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved(dir.path(), &chain_model());
    let m = load(&path);
    let d = unsafe { ks_model_state_dim(m) };
    let x = vec![0.0; d];
    let mut out = vec![0.0; d];
    unsafe {
        assert_eq!(ks_model_step(m, x.as_ptr(), d - 6, 1, out.as_mut_ptr()), KsStatus::Dimension);
        assert!(last_error().contains("dimension"));
        assert_eq!(ks_model_step(m, ptr::null(), d, 1, out.as_mut_ptr()), KsStatus::NullPointer);
        assert_eq!(ks_model_step(ptr::null(), x.as_ptr(), d, 1, out.as_mut_ptr()), KsStatus::NullPointer);
        assert_eq!(ks_model_set_damping(m, 1.0), KsStatus::InvalidArgument);
        assert_eq!(ks_model_set_h(m, -1.0), KsStatus::InvalidArgument);
        assert_eq!(ks_model_rank(ptr::null()), 0);
        assert!(ks_model_h(ptr::null()).is_nan());
        ks_model_free(m);
        ks_model_free(ptr::null_mut());

        let missing = CString::new(dir.path().join("absent.kpdm").to_str().unwrap()).unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(ks_model_load(missing.as_ptr(), &mut h), KsStatus::Io);
        assert!(h.is_null());
        let garbage = dir.path().join("garbage.kpdm");
        std::fs::write(&garbage, b"KPDMxxxx").unwrap();
        let garbage = CString::new(garbage.to_str().unwrap()).unwrap();
        assert_eq!(ks_model_load(garbage.as_ptr(), &mut h), KsStatus::Format);
    }
}

#[test]
fn save_round_trips_pristine_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved(dir.path(), &chain_model());
    let m = load(&path);
    let copy = CString::new(dir.path().join("copy.kpdm").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(ks_model_set_damping(m, 0.1), KsStatus::Ok);
        assert_eq!(ks_model_save(m, copy.as_ptr()), KsStatus::Ok);
        ks_model_free(m);
    }
    let a = std::fs::read(path.to_str().unwrap()).unwrap();
    let b = std::fs::read(copy.to_str().unwrap()).unwrap();
    assert_eq!(a, b);
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib_dir = target_dir();
    assert!(lib_dir.join("libkoopsim_ffi.so").exists(), "shared library not built in {}", lib_dir.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(crate_dir.join("tests/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .args(["-lkoopsim_ffi", "-lm"])
        .status()
        .expect("C compiler available");
    assert!(status.success());

    let model = chain_model();
    let path = saved(dir.path(), &model);
    let out = Command::new(&exe).arg(path.to_str().unwrap()).output().unwrap();
    assert!(out.status.success(), "exit {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    let got: Vec<f64> = String::from_utf8(out.stdout).unwrap().lines().map(|l| l.parse().unwrap()).collect();

    let mut x = vec![0.0; model.state_dim()];
    x[3] = 0.01;
    let op = real_operator(&model).unwrap();
    let expect = real_multi_step(&op, &model, &LiftedState::from_vec(x).unwrap(), 1000).unwrap();
    assert_eq!(got, expect.as_slice());
}
