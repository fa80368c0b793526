//! C ABI for fusionattn.
//!
//! Every fallible function returns an [`FaStatus`]; on failure the message
//! is available from [`fa_last_error`] on the same thread. Handles are
//! opaque and owned by the caller, who releases them with the matching
//! `*_free` function. No function panics across the boundary.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use fusionattn::checkpoint::{load_checkpoint, save_checkpoint};
use fusionattn::data::ftns::{self, Precision};
use fusionattn::stats::{welch_t_test, ConfusionMatrix};
use fusionattn::{Batch, Error, FusionModel, Modality, ModelConfig, ModelDims, ModelKind, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaStatus {
    FaOk = 0,
    FaErrNull = 1,
    FaErrInvalid = 2,
    FaErrIo = 3,
    FaErrShape = 4,
    FaErrData = 5,
    FaErrBufferTooSmall = 6,
    FaErrPanic = 7,
}

/// Opaque model handle.
pub struct FaModel {
    inner: FusionModel,
}

/// Opaque tensor handle (64-bit values, row-major).
pub struct FaTensor {
    inner: Tensor,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> FaStatus {
    match e {
        Error::Shape { .. } => FaStatus::FaErrShape,
        Error::Io { .. } => FaStatus::FaErrIo,
        Error::Data { .. } | Error::Parse { .. } => FaStatus::FaErrData,
        _ => FaStatus::FaErrInvalid,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (FaStatus, String)>) -> FaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FaStatus::FaOk
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FaStatus::FaErrPanic
        }
    }
}

type FfiResult<T> = Result<T, (FaStatus, String)>;

fn lift<T>(r: fusionattn::Result<T>) -> FfiResult<T> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (FaStatus, String) {
    (FaStatus::FaErrNull, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (FaStatus::FaErrInvalid, format!("{what} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn fa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a freshly initialized model.
///
/// `kind` is one of `self`, `cross`, `self-nosp`, `cross-nosp`,
/// `cross+self`; `modalities` a code such as `tva`. `desk_scale` selects
/// the small synthetic geometry instead of the full-size one.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_model_new(
    kind: *const c_char,
    modalities: *const c_char,
    desk_scale: bool,
    hidden: usize,
    heads: usize,
    seed: u64,
    out: *mut *mut FaModel,
) -> FaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let kind: ModelKind = lift(str_arg(kind, "kind")?.parse())?;
        let ms = lift(fusionattn::schema::parse_modalities(str_arg(modalities, "modalities")?))?;
        let schema = if desk_scale {
            fusionattn::DatasetSchema::DESK
        } else {
            fusionattn::DatasetSchema::FULL
        };
        let config = lift(ModelConfig::new(kind, &ms, ModelDims::for_schema(&schema, hidden, heads)))?;
        let inner = lift(FusionModel::build(&config, seed))?;
        *out = Box::into_raw(Box::new(FaModel { inner }));
        Ok(())
    })
}

/// Builds a model from a `key=value` configuration document (the format of
/// a checkpoint's `config.txt`).
///
/// # Safety
/// `config` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_model_from_config(config: *const c_char, seed: u64, out: *mut *mut FaModel) -> FaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let config = lift(ModelConfig::from_kv(str_arg(config, "config")?))?;
        let inner = lift(FusionModel::build(&config, seed))?;
        *out = Box::into_raw(Box::new(FaModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `dir` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_model_load(dir: *const c_char, out: *mut *mut FaModel) -> FaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = lift(load_checkpoint(&PathBuf::from(str_arg(dir, "dir")?)))?;
        *out = Box::into_raw(Box::new(FaModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fa_model_save(model: *const FaModel, dir: *const c_char) -> FaStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        lift(save_checkpoint(&model.inner, &PathBuf::from(str_arg(dir, "dir")?)))
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn fa_model_free(model: *mut FaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Total number of trainable scalars.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_model_parameter_count(model: *const FaModel, out: *mut usize) -> FaStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(out, "out")? = model.inner.parameter_count();
        Ok(())
    })
}

/// Number of attention modules.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_model_attention_modules(model: *const FaModel, out: *mut usize) -> FaStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(out, "out")? = model.inner.attention_module_count();
        Ok(())
    })
}

/// Copies the model's `key=value` configuration, NUL-terminated, into
/// `buf`. `needed` receives the required size including the terminator;
/// a too-small buffer yields `FA_ERR_BUFFER_TOO_SMALL` and no copy.
///
/// # Safety
/// `buf` must hold `len` bytes (it may be null when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn fa_model_config(
    model: *const FaModel,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> FaStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let text = model.inner.config().to_kv();
        let want = text.len() + 1;
        if let Some(n) = needed.as_mut() {
            *n = want;
        }
        if len < want || buf.is_null() {
            return Err((FaStatus::FaErrBufferTooSmall, format!("need {want} bytes")));
        }
        ptr::copy_nonoverlapping(text.as_ptr(), buf as *mut u8, text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

/// Class probabilities for one utterance.
///
/// `inputs` holds one `max_len × width` tensor per model modality, in
/// audio, vision, text order (skipping absent modalities); `probs` receives
/// `probs_len` (= number of classes) values.
///
/// # Safety
/// `inputs` must point to `n_inputs` valid tensor handles; `probs` must
/// hold `probs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fa_model_predict(
    model: *const FaModel,
    inputs: *const *const FaTensor,
    n_inputs: usize,
    probs: *mut f64,
    probs_len: usize,
) -> FaStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if inputs.is_null() || probs.is_null() {
            return Err(null("inputs or probs"));
        }
        let ms = &model.inner.config().modalities;
        if n_inputs != ms.len() {
            return Err((
                FaStatus::FaErrInvalid,
                format!("model takes {} inputs, got {n_inputs}", ms.len()),
            ));
        }
        let classes = model.inner.config().dims.classes;
        if probs_len != classes {
            return Err((FaStatus::FaErrShape, format!("probs must hold {classes} values")));
        }
        let mut utterance = BTreeMap::new();
        for (i, &m) in ms.iter().enumerate() {
            let t = (*inputs.add(i)).as_ref().ok_or_else(|| null("input tensor"))?;
            utterance.insert(m, t.inner.clone());
        }
        let batch = lift(Batch::from_utterances(&[&utterance]))?;
        let p = lift(model.inner.predict(&batch))?;
        slice::from_raw_parts_mut(probs, classes).copy_from_slice(p.data());
        Ok(())
    })
}

/// Input geometry expected for modality code `modality` (`a`, `v` or `t`).
///
/// # Safety
/// `rows` and `cols` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_model_input_shape(
    model: *const FaModel,
    modality: c_char,
    rows: *mut usize,
    cols: *mut usize,
) -> FaStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let m = Modality::from_code(modality as u8 as char)
            .ok_or_else(|| (FaStatus::FaErrInvalid, "modality must be 'a', 'v' or 't'".to_owned()))?;
        let e = model.inner.config().dims.encoder(m);
        *out_arg(rows, "rows")? = e.max_len;
        *out_arg(cols, "cols")? = e.width;
        Ok(())
    })
}

/// Copies `data` (product of `dims` values) into a new tensor.
///
/// # Safety
/// `dims` must hold `ndim` values and `data` their product.
#[no_mangle]
pub unsafe extern "C" fn fa_tensor_new(
    dims: *const usize,
    ndim: usize,
    data: *const f64,
    out: *mut *mut FaTensor,
) -> FaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if (dims.is_null() && ndim > 0) || data.is_null() {
            return Err(null("dims or data"));
        }
        let shape = if ndim == 0 { Vec::new() } else { slice::from_raw_parts(dims, ndim).to_vec() };
        let n: usize = shape.iter().product();
        let inner = lift(Tensor::new(shape, slice::from_raw_parts(data, n).to_vec()))?;
        *out = Box::into_raw(Box::new(FaTensor { inner }));
        Ok(())
    })
}

/// Reads an FTNS file of either precision.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_tensor_read(path: *const c_char, out: *mut *mut FaTensor) -> FaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = lift(ftns::read(&PathBuf::from(str_arg(path, "path")?)))?;
        *out = Box::into_raw(Box::new(FaTensor { inner }));
        Ok(())
    })
}

/// Writes an FTNS file, 32-bit (version 1) unless `double_precision`.
///
/// # Safety
/// `tensor` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fa_tensor_write(tensor: *const FaTensor, path: *const c_char, double_precision: bool) -> FaStatus {
    guard(|| {
        let t = tensor.as_ref().ok_or_else(|| null("tensor"))?;
        let precision = if double_precision { Precision::F64 } else { Precision::F32 };
        lift(ftns::write(&PathBuf::from(str_arg(path, "path")?), &t.inner, precision))
    })
}

/// Number of dimensions, or 0 for a null handle.
///
/// # Safety
/// `tensor` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fa_tensor_ndim(tensor: *const FaTensor) -> usize {
    tensor.as_ref().map_or(0, |t| t.inner.ndim())
}

/// Pointer to `ndim` dimensions, valid while the tensor lives.
///
/// # Safety
/// `tensor` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fa_tensor_dims(tensor: *const FaTensor) -> *const usize {
    tensor.as_ref().map_or(ptr::null(), |t| t.inner.shape().as_ptr())
}

/// Number of elements, or 0 for a null handle.
///
/// # Safety
/// `tensor` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fa_tensor_len(tensor: *const FaTensor) -> usize {
    tensor.as_ref().map_or(0, |t| t.inner.len())
}

/// Pointer to the row-major values, valid while the tensor lives.
///
/// # Safety
/// `tensor` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fa_tensor_data(tensor: *const FaTensor) -> *const f64 {
    tensor.as_ref().map_or(ptr::null(), |t| t.inner.data().as_ptr())
}

/// # Safety
/// `tensor` must come from this library and not be used afterwards. Null
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn fa_tensor_free(tensor: *mut FaTensor) {
    if !tensor.is_null() {
        drop(Box::from_raw(tensor));
    }
}

/// Welch's two-tailed t-test. Any of `t`, `df`, `p` may be null.
///
/// # Safety
/// `a` and `b` must hold `na` and `nb` doubles.
#[no_mangle]
pub unsafe extern "C" fn fa_welch_t_test(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    t: *mut f64,
    df: *mut f64,
    p: *mut f64,
) -> FaStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(null("samples"));
        }
        let r = lift(welch_t_test(slice::from_raw_parts(a, na), slice::from_raw_parts(b, nb)))?;
        for (dst, v) in [(t, r.t), (df, r.df), (p, r.p)] {
            if let Some(d) = dst.as_mut() {
                *d = v;
            }
        }
        Ok(())
    })
}

/// Weighted and unweighted accuracy of a row-major `classes × classes`
/// confusion matrix (rows true, columns predicted).
///
/// # Safety
/// `counts` must hold `classes²` values; `wa` and `uwa` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fa_accuracy(counts: *const u64, classes: usize, wa: *mut f64, uwa: *mut f64) -> FaStatus {
    guard(|| {
        if counts.is_null() {
            return Err(null("counts"));
        }
        let flat = slice::from_raw_parts(counts, classes * classes);
        let rows = flat.chunks(classes.max(1)).map(<[u64]>::to_vec).collect();
        let cm = lift(ConfusionMatrix::from_counts(rows))?;
        *out_arg(wa, "wa")? = lift(cm.weighted_accuracy())?;
        *out_arg(uwa, "uwa")? = lift(cm.unweighted_accuracy())?;
        Ok(())
    })
}
