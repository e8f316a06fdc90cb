//! C ABI for embedding the classifier and the feature extractor.
//!
//! Conventions: opaque handles behind pointers, status codes for every
//! fallible call, and a thread-local last-error message retrievable with
//! [`tnanet_last_error`]. Buffers are caller-allocated; matrix arguments are
//! row-major f64 with the channel axis outermost.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::path::Path;

use tnanet::checkpoint::load_checkpoint_file;
use tnanet::error::Error;
use tnanet::model::{predict, predict_label, TnanetParams};
use tnanet::ppg::{build_feature_matrix, RawRecording, FEATURE_COUNT, WINDOWS_PER_RECORDING};
use tnanet::FeatureMatrix;
use tnanet::Tensor;

/// Opaque model handle.
pub struct TnanetModel {
    params: TnanetParams,
}

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TnanetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    IoError = 3,
    CorruptCheckpoint = 4,
    ShapeMismatch = 5,
    ProcessingError = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> TnanetStatus {
    match err {
        Error::Io { .. } => TnanetStatus::IoError,
        Error::Checkpoint(_) => TnanetStatus::CorruptCheckpoint,
        Error::Shape(_) => TnanetStatus::ShapeMismatch,
        Error::Config(_) => TnanetStatus::InvalidArgument,
        _ => TnanetStatus::ProcessingError,
    }
}

fn fail(err: Error) -> TnanetStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

/// Version string of the underlying library; static storage, do not free.
#[no_mangle]
pub extern "C" fn tnanet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Number of features per window in the preprocessing pipeline (rows of the
/// extracted matrix).
#[no_mangle]
pub extern "C" fn tnanet_feature_count() -> usize {
    FEATURE_COUNT
}

/// Number of windows a full-length recording is clipped to (columns of the
/// extracted matrix).
#[no_mangle]
pub extern "C" fn tnanet_window_count() -> usize {
    WINDOWS_PER_RECORDING
}

/// Copies the last error message of this thread into `buf` (truncating if
/// needed, always NUL-terminated when `len > 0`) and returns the full
/// message length in bytes.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn tnanet_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Loads a checkpoint into a fresh model handle.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be a valid
/// pointer. On success `*out` owns the model and must be released with
/// [`tnanet_model_free`].
#[no_mangle]
pub unsafe extern "C" fn tnanet_model_load(
    path: *const c_char,
    out: *mut *mut TnanetModel,
) -> TnanetStatus {
    if path.is_null() || out.is_null() {
        set_error("null pointer argument");
        return TnanetStatus::NullPointer;
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("path is not valid UTF-8");
            return TnanetStatus::InvalidArgument;
        }
    };
    match load_checkpoint_file(Path::new(path)) {
        Ok(params) => {
            *out = Box::into_raw(Box::new(TnanetModel { params }));
            TnanetStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Releases a model handle. Passing null is a no-op.
///
/// # Safety
/// `model` must have come from [`tnanet_model_load`] and not been freed.
#[no_mangle]
pub unsafe extern "C" fn tnanet_model_free(model: *mut TnanetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Reports the input dimensions the model expects: `channels` feature rows
/// of `len` points each.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tnanet_model_dims(
    model: *const TnanetModel,
    channels: *mut usize,
    len: *mut usize,
) -> TnanetStatus {
    if model.is_null() || channels.is_null() || len.is_null() {
        set_error("null pointer argument");
        return TnanetStatus::NullPointer;
    }
    let hp = (*model).params.hp;
    *channels = hp.dm;
    *len = hp.t;
    TnanetStatus::Ok
}

/// Runs eval-mode inference on one sample.
///
/// `matrix` holds `matrix_len` doubles, row-major (channels x len) matching
/// [`tnanet_model_dims`]. On success `out_probs[0]` is the negative-class
/// and `out_probs[1]` the positive-class probability, and `out_label` (when
/// non-null) the predicted label with the negative-wins tie rule.
///
/// # Safety
/// Pointers must be valid for the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn tnanet_model_predict(
    model: *const TnanetModel,
    matrix: *const f64,
    matrix_len: usize,
    out_probs: *mut f64,
    out_label: *mut u8,
) -> TnanetStatus {
    if model.is_null() || matrix.is_null() || out_probs.is_null() {
        set_error("null pointer argument");
        return TnanetStatus::NullPointer;
    }
    let hp = (*model).params.hp;
    if matrix_len != hp.dm * hp.t {
        set_error(format!(
            "matrix has {matrix_len} values, model expects {} x {} = {}",
            hp.dm,
            hp.t,
            hp.dm * hp.t
        ));
        return TnanetStatus::ShapeMismatch;
    }
    let data = std::slice::from_raw_parts(matrix, matrix_len).to_vec();
    let tensor = match Tensor::new(vec![hp.dm, hp.t], data) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let fm = match FeatureMatrix::from_channels(tensor) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    match predict(&(*model).params, &fm) {
        Ok((_, p)) => {
            *out_probs = p.p[0];
            *out_probs.add(1) = p.p[1];
            if !out_label.is_null() {
                *out_label = predict_label(&p);
            }
            TnanetStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Runs the preprocessing pipeline on one raw recording and writes the
/// normalized feature matrix.
///
/// `out` must hold `tnanet_feature_count() * tnanet_window_count()` doubles;
/// it is filled row-major (features x windows).
///
/// # Safety
/// Pointers must be valid for the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn tnanet_extract_features(
    static_phase: *const f64,
    static_len: usize,
    stimulation: *const f64,
    stimulation_len: usize,
    sample_rate: f64,
    out: *mut f64,
) -> TnanetStatus {
    if static_phase.is_null() || stimulation.is_null() || out.is_null() {
        set_error("null pointer argument");
        return TnanetStatus::NullPointer;
    }
    let rec = RawRecording {
        subject_id: "ffi".into(),
        sample_rate,
        static_phase: std::slice::from_raw_parts(static_phase, static_len).to_vec(),
        stimulation_phase: std::slice::from_raw_parts(stimulation, stimulation_len).to_vec(),
    };
    match build_feature_matrix(&rec) {
        Ok(matrix) => {
            let data = matrix.values().data();
            std::ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
            TnanetStatus::Ok
        }
        Err(e) => fail(e),
    }
}
