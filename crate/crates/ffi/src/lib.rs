//! C ABI over the statistics, schedules and checkpointed models of
//! `mammocascade`.
//!
//! Every function returns an [`MvmStatus`]; outputs go through pointers.
//! After a non-`Ok` status, [`mvm_last_error_message`] holds a description
//! for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mammocascade::evalstat::{self, ScoreSet};
use mammocascade::netforge::{self, ModelGraph, ModelInput};
use mammocascade::pixelops::Plane;
use mammocascade::trainloop::{self, LrSchedule};
use mammocascade::Error;

/// Status codes returned by every `mvm_*` function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Shape = 3,
    Checkpoint = 4,
    Io = 5,
    Panic = 6,
    Other = 7,
}

/// Operating point where sensitivity equals specificity.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvmEer {
    pub threshold: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Opaque handle to a loaded model.
pub struct MvmModel {
    graph: ModelGraph<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MvmStatus {
    match e {
        Error::InvalidInput(_) | Error::Config(_) | Error::Validation(_) => MvmStatus::InvalidInput,
        Error::Shape(_) => MvmStatus::Shape,
        Error::Checkpoint { .. } => MvmStatus::Checkpoint,
        Error::Io(_) | Error::Ingest { .. } => MvmStatus::Io,
        _ => MvmStatus::Other,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard<F: FnOnce() -> Result<(), (MvmStatus, String)>>(f: F) -> MvmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MvmStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MvmStatus::Panic
        }
    }
}

fn lib<T>(r: mammocascade::Result<T>) -> Result<T, (MvmStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (MvmStatus, String) {
    (MvmStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `ptr` must be null or valid for `n` reads.
unsafe fn slice<'a, T>(ptr: *const T, n: usize, what: &str) -> Result<&'a [T], (MvmStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, n))
}

/// # Safety
/// `scores` and `labels` must each point to `n` readable elements.
unsafe fn score_set(scores: *const f64, labels: *const u8, n: usize) -> Result<ScoreSet, (MvmStatus, String)> {
    let s = slice(scores, n, "scores")?;
    let l = slice(labels, n, "labels")?;
    lib(ScoreSet::new(s.to_vec(), l.to_vec()))
}

fn write<T>(out: *mut T, v: T) -> Result<(), (MvmStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    // SAFETY: checked non-null; the caller provides a writable slot
    unsafe { out.write(v) };
    Ok(())
}

/// Mann-Whitney AUC with ties counted as one half. Labels are 0 or 1.
///
/// # Safety
/// `scores` and `labels` must point to `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvm_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> MvmStatus {
    guard(|| {
        let s = score_set(scores, labels, n)?;
        write(out, lib(evalstat::auc(&s))?)
    })
}

/// Hanley-McNeil standard error of an AUC.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvm_hanley_mcneil_se(auc: f64, n_pos: usize, n_neg: usize, out: *mut f64) -> MvmStatus {
    guard(|| write(out, lib(evalstat::hanley_mcneil_se(auc, n_pos, n_neg))?))
}

/// Equal-error operating point of a score set.
///
/// # Safety
/// `scores` and `labels` must point to `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvm_eer(scores: *const f64, labels: *const u8, n: usize, out: *mut MvmEer) -> MvmStatus {
    guard(|| {
        let s = score_set(scores, labels, n)?;
        let e = lib(evalstat::eer_metrics(&s))?;
        write(out, MvmEer { threshold: e.threshold, accuracy: e.accuracy, sensitivity: e.sensitivity, specificity: e.specificity })
    })
}

/// Mean and population standard deviation of per-fold values.
///
/// # Safety
/// `values` must point to `n` elements; `mean` and `std` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvm_cv_aggregate(values: *const f64, n: usize, mean: *mut f64, std: *mut f64) -> MvmStatus {
    guard(|| {
        let a = lib(evalstat::cv_aggregate(slice(values, n, "values")?))?;
        write(mean, a.mean)?;
        write(std, a.std)
    })
}

/// Learning rate of a warmup + cyclic cosine schedule at `epoch`. A plan
/// with `warmup_epochs = 0` and `delta = 0` is a fixed rate.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvm_lr_at(
    base_lr: f64,
    warmup_epochs: usize,
    period: usize,
    delta: f64,
    total_epochs: usize,
    epoch: usize,
    out: *mut f64,
) -> MvmStatus {
    guard(|| {
        let s = if warmup_epochs == 0 && delta == 0.0 {
            LrSchedule::fixed(base_lr, total_epochs)
        } else {
            LrSchedule::cyclic(base_lr, warmup_epochs, period, delta, total_epochs)
        };
        lib(s.validate())?;
        write(out, lib(trainloop::lr_at(&s, epoch))?)
    })
}

/// Loads a checkpoint. The handle must be released with [`mvm_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvm_model_load(path: *const c_char, out: *mut *mut MvmModel) -> MvmStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let p = CStr::from_ptr(path).to_str().map_err(|_| (MvmStatus::InvalidInput, "path is not UTF-8".to_string()))?;
        let graph = lib(netforge::load_checkpoint(Path::new(p)))?;
        write(out, Box::into_raw(Box::new(MvmModel { graph })))
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`mvm_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mvm_model_free(model: *mut MvmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output classes (0 for a bare backbone).
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvm_model_num_classes(model: *const MvmModel, out: *mut usize) -> MvmStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        write(out, m.graph.num_classes())
    })
}

/// Expected input height and width.
///
/// # Safety
/// `model` must be a live handle; `height` and `width` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mvm_model_input_size(model: *const MvmModel, height: *mut usize, width: *mut usize) -> MvmStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        write(height, m.graph.spec.input_height)?;
        write(width, m.graph.spec.input_width)
    })
}

/// Class probabilities for one preprocessed input. `mlo` is null for
/// single-input models and required for two-view models. Each image is
/// `height * width` row-major floats; `probs` receives `n_probs` values,
/// which must equal the class count.
///
/// # Safety
/// Pointers must be valid for the stated sizes; `model` must be live.
#[no_mangle]
pub unsafe extern "C" fn mvm_model_forward(
    model: *const MvmModel,
    cc: *const f32,
    mlo: *const f32,
    height: usize,
    width: usize,
    probs: *mut f32,
    n_probs: usize,
) -> MvmStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let plane = |p: *const f32, what: &str| -> Result<Plane, (MvmStatus, String)> {
            lib(Plane::new(height, width, slice(p, height * width, what)?.to_vec()))
        };
        let input = if mlo.is_null() {
            ModelInput::Single(plane(cc, "cc")?)
        } else {
            ModelInput::Pair { cc: plane(cc, "cc")?, mlo: plane(mlo, "mlo")? }
        };
        let p = lib(m.graph.predict(&input))?;
        if p.len() != n_probs {
            return Err((MvmStatus::Shape, format!("model has {} classes, buffer holds {n_probs}", p.len())));
        }
        if probs.is_null() {
            return Err(null("probs"));
        }
        ptr::copy_nonoverlapping(p.as_ptr(), probs, n_probs);
        Ok(())
    })
}

/// Message for the last non-`Ok` status on this thread; empty after a
/// success. The pointer stays valid until the next `mvm_*` call on the
/// same thread.
#[no_mangle]
pub extern "C" fn mvm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}
