//! C ABI over the koopsim engine.
//!
//! Models are opaque `KsModel` handles created by `ks_model_load` or
//! `ks_model_fit` and released with `ks_model_free`. Every fallible call
//! returns a `KsStatus`; on failure `ks_last_error` describes the cause for
//! the calling thread. States are lifted vectors of `6n` doubles
//! (`[U; U - U_prev]`), forces are `3n` per-unit-mass accelerations.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;
use std::sync::Arc;

use koopsim::dmd::{self, FitOptions, KoopmanModel, RankPolicy};
use koopsim::io;
use koopsim::koopstep::{apply_damping, real_multi_step, real_operator, real_step_forced, rescale_timestep, RealOperator};
use koopsim::statespace::{lift_force, LiftedState};
use koopsim::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    Format = 5,
    Numerical = 6,
    Panic = 7,
}

/// Loaded model plus its current step-size and damping edits.
pub struct KsModel {
    pristine: KoopmanModel,
    active: KoopmanModel,
    op: Arc<RealOperator>,
    h: f64,
    mu: f64,
}

impl KsModel {
    fn new(model: KoopmanModel) -> Result<Self, Error> {
        let op = real_operator(&model)?;
        Ok(Self { h: model.h(), mu: 0.0, pristine: model.clone(), active: model, op })
    }

    fn edit(&mut self, h: f64, mu: f64) -> Result<(), Error> {
        let active = apply_damping(&rescale_timestep(&self.pristine, h)?, mu)?;
        self.op = real_operator(&active)?;
        self.active = active;
        self.h = h;
        self.mu = mu;
        Ok(())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> KsStatus {
    match e {
        Error::Dimension { .. } => KsStatus::Dimension,
        Error::Io(_) => KsStatus::Io,
        Error::Format(_) | Error::InvalidModel(_) | Error::Config(_) => KsStatus::Format,
        Error::Domain(_) | Error::StepSize { .. } | Error::InsufficientData(_) | Error::DegenerateData(_) => {
            KsStatus::InvalidArgument
        }
        _ => KsStatus::Numerical,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> KsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KsStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            KsStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            KsStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            KsStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg("path is not UTF-8".into()))?;
    Ok(Path::new(s))
}

unsafe fn model_ref<'a>(m: *const KsModel) -> Result<&'a KsModel, Fail> {
    m.as_ref().ok_or(Fail::Null("model"))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn check_len(expected: usize, got: usize) -> Result<(), Fail> {
    if expected != got {
        return Err(Fail::Lib(Error::Dimension { expected, got }));
    }
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ks_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a model file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ks_model_load(path: *const c_char, out: *mut *mut KsModel) -> KsStatus {
    guard(|| {
        let out = out.as_mut().ok_or(Fail::Null("out"))?;
        let model = io::read_model(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(KsModel::new(model)?));
        Ok(())
    })
}

/// Fits a model to a snapshot file. `energy` in (0, 1] selects the rank by
/// singular-value energy; 0 keeps every singular value above the noise floor.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ks_model_fit(path: *const c_char, energy: f64, out: *mut *mut KsModel) -> KsStatus {
    guard(|| {
        let out = out.as_mut().ok_or(Fail::Null("out"))?;
        let rank = if energy == 0.0 { RankPolicy::Full } else { RankPolicy::Energy { target: energy } };
        let snaps = io::read_snapshots(path_arg(path)?)?;
        let (model, _) = dmd::fit(&snaps, &FitOptions { rank, clamp_unit_disk: true })?;
        *out = Box::into_raw(Box::new(KsModel::new(model)?));
        Ok(())
    })
}

/// Writes the model as loaded, without step-size or damping edits.
///
/// # Safety
/// `model` must come from this library; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ks_model_save(model: *const KsModel, path: *const c_char) -> KsStatus {
    guard(|| {
        io::write_model(path_arg(path)?, &model_ref(model)?.pristine)?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ks_model_free(model: *mut KsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of retained modes; 0 for null.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ks_model_rank(model: *const KsModel) -> usize {
    model.as_ref().map_or(0, |m| m.active.rank())
}

/// Lifted state length `6n`; 0 for null.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ks_model_state_dim(model: *const KsModel) -> usize {
    model.as_ref().map_or(0, |m| m.active.state_dim())
}

/// Current step size; NaN for null.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ks_model_h(model: *const KsModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.h)
}

/// Step size of the training data.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ks_model_training_h(model: *const KsModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.pristine.h())
}

/// Sets the step size. Edits are absolute: the loaded spectrum is rescaled
/// and the current damping reapplied.
///
/// # Safety
/// `model` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn ks_model_set_h(model: *mut KsModel, h: f64) -> KsStatus {
    guard(|| {
        let m = model.as_mut().ok_or(Fail::Null("model"))?;
        let mu = m.mu;
        m.edit(h, mu)?;
        Ok(())
    })
}

/// Sets the per-step damping fraction `mu` in [0, 1), replacing any
/// previous value.
///
/// # Safety
/// `model` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn ks_model_set_damping(model: *mut KsModel, mu: f64) -> KsStatus {
    guard(|| {
        let m = model.as_mut().ok_or(Fail::Null("model"))?;
        let h = m.h;
        m.edit(h, mu)?;
        Ok(())
    })
}

/// Copies the current eigenvalues into `re` and `im`, each of length `rank`.
///
/// # Safety
/// `re` and `im` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ks_model_eigenvalues(model: *const KsModel, re: *mut f64, im: *mut f64, len: usize) -> KsStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_len(m.active.rank(), len)?;
        let (re, im) = (output(re, len, "re")?, output(im, len, "im")?);
        for (i, l) in m.active.eigenvalues().iter().enumerate() {
            re[i] = l.re;
            im[i] = l.im;
        }
        Ok(())
    })
}

/// Advances `x` by `n` steps in one realified jump. `x` and `out` hold
/// `len = 6n` doubles and may alias.
///
/// # Safety
/// `x` and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ks_model_step(model: *const KsModel, x: *const f64, len: usize, n: u64, out: *mut f64) -> KsStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_len(m.active.state_dim(), len)?;
        let state = LiftedState::from_vec(input(x, len, "x")?.to_vec())?;
        let next = real_multi_step(&m.op, &m.active, &state, n)?;
        output(out, len, "out")?.copy_from_slice(next.as_slice());
        Ok(())
    })
}

/// One step under a per-unit-mass force `f` of `force_len = len / 2`
/// doubles, lifted at the current step size.
///
/// # Safety
/// `x` and `out` must hold `len` doubles, `f` must hold `force_len`.
#[no_mangle]
pub unsafe extern "C" fn ks_model_step_forced(
    model: *const KsModel,
    x: *const f64,
    len: usize,
    f: *const f64,
    force_len: usize,
    out: *mut f64,
) -> KsStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_len(m.active.state_dim(), len)?;
        check_len(len / 2, force_len)?;
        let state = LiftedState::from_vec(input(x, len, "x")?.to_vec())?;
        let force = lift_force(input(f, force_len, "f")?, m.h)?;
        let next = real_step_forced(&m.op, &m.active, &state, &force)?;
        output(out, len, "out")?.copy_from_slice(next.as_slice());
        Ok(())
    })
}
