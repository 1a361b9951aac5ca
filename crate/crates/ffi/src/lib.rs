//! C ABI for embedding trained models in host applications and firmware.
//!
//! Conventions:
//!
//! * Every fallible call returns a [`BmStatus`]; `BM_STATUS_OK` is zero.
//!   On failure, [`bm_last_error`] returns a thread-local message that
//!   stays valid until the next failing call on the same thread.
//! * Models are opaque handles created by [`bm_model_load`] or
//!   [`bm_model_build`] and destroyed by [`bm_model_free`].
//! * Strings returned through out-parameters are heap-allocated and must
//!   be released with [`bm_string_free`]; `bm_version`'s pointer is static
//!   and must not be freed.
//! * Sample buffers are row-major `[channels][seq_len]` arrays of f64.
//!
//! The committed header `include/babymamba.h` is regenerated on every
//! build from these signatures.

use babymamba::cost::cost_report;
use babymamba::error::Error;
use babymamba::model::{Model, ModelConfig};
use babymamba::tensor::Tensor;
use libc::{c_char, size_t};
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

/// Result class of a C-ABI call. Numbering matches the CLI's process exit
/// codes where the classes coincide.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BmStatus {
    /// Success.
    Ok = 0,
    /// Filesystem failure (missing file, permissions, short read).
    Io = 1,
    /// Invalid configuration or tensor-shape mismatch.
    Config = 2,
    /// Malformed data: bad model file, bad JSON, protocol violation.
    Data = 3,
    /// Non-finite values encountered during computation.
    Numeric = 4,
    /// A required pointer argument was null.
    NullPointer = 5,
    /// A string argument was not valid UTF-8.
    Utf8 = 6,
}

/// Opaque model handle.
pub struct BmModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("error message had NUL").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> BmStatus {
    match err {
        Error::Config(_) | Error::Shape(_) => BmStatus::Config,
        Error::Data(_) | Error::Protocol(_) | Error::Format(_) => BmStatus::Data,
        Error::Numeric(_) => BmStatus::Numeric,
        Error::Io(_) => BmStatus::Io,
    }
}

fn fail(err: Error) -> BmStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn fail_null(what: &str) -> BmStatus {
    set_error(format!("{what} must not be null"));
    BmStatus::NullPointer
}

/// Borrow a C string as UTF-8, reporting the appropriate status on failure.
///
/// # Safety
/// `ptr` must be null or a NUL-terminated string valid for reads.
unsafe fn utf8_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, BmStatus> {
    if ptr.is_null() {
        return Err(fail_null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        BmStatus::Utf8
    })
}

/// Library version as a static NUL-terminated string. Never free it.
#[no_mangle]
pub extern "C" fn bm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on this thread, or null if the last
/// call succeeded. The pointer is invalidated by the next failing call on
/// the same thread; do not free it.
#[no_mangle]
pub extern "C" fn bm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr())
    })
}

/// Load a serialized model from disk.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must point to writable
/// storage for one pointer. On success `*out` owns the model.
#[no_mangle]
pub unsafe extern "C" fn bm_model_load(path: *const c_char, out: *mut *mut BmModel) -> BmStatus {
    if out.is_null() {
        return fail_null("out");
    }
    let path = match utf8_arg(path, "path") {
        Ok(s) => s,
        Err(status) => return status,
    };
    match Model::load(Path::new(path)) {
        Ok(model) => {
            *out = Box::into_raw(Box::new(BmModel { inner: model }));
            BmStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Build a freshly initialized model from a configuration JSON document
/// (the same schema the CLI writes into run directories under `"model"`).
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must point to
/// writable storage for one pointer. On success `*out` owns the model.
#[no_mangle]
pub unsafe extern "C" fn bm_model_build(
    config_json: *const c_char,
    out: *mut *mut BmModel,
) -> BmStatus {
    if out.is_null() {
        return fail_null("out");
    }
    let text = match utf8_arg(config_json, "config_json") {
        Ok(s) => s,
        Err(status) => return status,
    };
    let cfg: ModelConfig = match serde_json::from_str(text) {
        Ok(cfg) => cfg,
        Err(e) => return fail(Error::Config(format!("bad model config JSON: {e}"))),
    };
    match Model::build(&cfg) {
        Ok(model) => {
            *out = Box::into_raw(Box::new(BmModel { inner: model }));
            BmStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Serialize a model to disk in the versioned binary format.
///
/// # Safety
/// `model` must be a live handle from this library; `path` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bm_model_save(model: *const BmModel, path: *const c_char) -> BmStatus {
    let Some(model) = model.as_ref() else {
        return fail_null("model");
    };
    let path = match utf8_arg(path, "path") {
        Ok(s) => s,
        Err(status) => return status,
    };
    match model.inner.save(Path::new(path)) {
        Ok(()) => BmStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Destroy a model handle. Null is a no-op; the handle must not be used
/// afterwards.
///
/// # Safety
/// `model` must be null or a live handle from this library, freed at most
/// once.
#[no_mangle]
pub unsafe extern "C" fn bm_model_free(model: *mut BmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn window_from_raw(
    model: &BmModel,
    data: *const f64,
    channels: size_t,
    seq_len: size_t,
) -> Result<Tensor, BmStatus> {
    if data.is_null() {
        return Err(fail_null("data"));
    }
    let cfg = model.inner.config();
    if channels != cfg.num_channels || seq_len != cfg.seq_len {
        return Err(fail(Error::Shape(format!(
            "model expects [{}, {}] windows, got [{channels}, {seq_len}]",
            cfg.num_channels, cfg.seq_len
        ))));
    }
    let slice = std::slice::from_raw_parts(data, channels * seq_len);
    Tensor::from_vec(&[channels, seq_len], slice.to_vec()).map_err(fail)
}

/// Classify one window: writes the argmax class index to `*out_class`.
///
/// # Safety
/// `model` must be a live handle; `data` must point to
/// `channels * seq_len` readable doubles; `out_class` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bm_model_predict(
    model: *const BmModel,
    data: *const f64,
    channels: size_t,
    seq_len: size_t,
    out_class: *mut size_t,
) -> BmStatus {
    let Some(model) = model.as_ref() else {
        return fail_null("model");
    };
    if out_class.is_null() {
        return fail_null("out_class");
    }
    let window = match window_from_raw(model, data, channels, seq_len) {
        Ok(w) => w,
        Err(status) => return status,
    };
    match model.inner.predict(&window) {
        Ok(class) => {
            *out_class = class;
            BmStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Compute per-class scores for one window. `out_logits` must hold
/// `bm_model_num_classes` doubles.
///
/// # Safety
/// Same as [`bm_model_predict`], plus `out_logits` must point to
/// `num_classes` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bm_model_logits(
    model: *const BmModel,
    data: *const f64,
    channels: size_t,
    seq_len: size_t,
    out_logits: *mut f64,
    out_len: size_t,
) -> BmStatus {
    let Some(model) = model.as_ref() else {
        return fail_null("model");
    };
    if out_logits.is_null() {
        return fail_null("out_logits");
    }
    let k = model.inner.config().num_classes;
    if out_len != k {
        return fail(Error::Shape(format!(
            "out_logits holds {out_len} values but the model has {k} classes"
        )));
    }
    let window = match window_from_raw(model, data, channels, seq_len) {
        Ok(w) => w,
        Err(status) => return status,
    };
    match model.inner.forward_window(&window) {
        Ok(logits) => {
            std::slice::from_raw_parts_mut(out_logits, k).copy_from_slice(&logits);
            BmStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Number of output classes of the model.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bm_model_num_classes(
    model: *const BmModel,
    out: *mut size_t,
) -> BmStatus {
    let Some(model) = model.as_ref() else {
        return fail_null("model");
    };
    if out.is_null() {
        return fail_null("out");
    }
    *out = model.inner.config().num_classes;
    BmStatus::Ok
}

/// Total learnable parameter count.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bm_model_param_count(
    model: *const BmModel,
    out: *mut u64,
) -> BmStatus {
    let Some(model) = model.as_ref() else {
        return fail_null("model");
    };
    if out.is_null() {
        return fail_null("out");
    }
    *out = model.inner.param_count() as u64;
    BmStatus::Ok
}

/// Analytic multiply-accumulate count for one window at the model's
/// configured shape.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bm_model_mac_count(model: *const BmModel, out: *mut u64) -> BmStatus {
    let Some(model) = model.as_ref() else {
        return fail_null("model");
    };
    if out.is_null() {
        return fail_null("out");
    }
    let cfg = model.inner.config();
    *out = cost_report(cfg, cfg.num_channels, cfg.seq_len).total_macs;
    BmStatus::Ok
}

/// Render the full analytic cost profile of a configuration (same JSON the
/// CLI's `count` command emits, plus per-layer rows). The returned string
/// must be released with [`bm_string_free`].
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must point to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn bm_cost_report_json(
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> BmStatus {
    if out.is_null() {
        return fail_null("out");
    }
    let text = match utf8_arg(config_json, "config_json") {
        Ok(s) => s,
        Err(status) => return status,
    };
    let cfg: ModelConfig = match serde_json::from_str(text) {
        Ok(cfg) => cfg,
        Err(e) => return fail(Error::Config(format!("bad model config JSON: {e}"))),
    };
    if let Err(e) = cfg.validate() {
        return fail(e);
    }
    let report = cost_report(&cfg, cfg.num_channels, cfg.seq_len);
    let json = serde_json::to_string(&report).expect("report serializes");
    match CString::new(json) {
        Ok(c) => {
            *out = c.into_raw();
            BmStatus::Ok
        }
        Err(_) => fail(Error::Format("report contained a NUL byte".into())),
    }
}

/// Release a string allocated by this library.
///
/// # Safety
/// `s` must be null or a pointer previously returned through an
/// out-parameter of this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn bm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
