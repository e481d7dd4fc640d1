//! C interface to `xnlu`.
//!
//! Every fallible function returns an [`XnluStatus`]. On failure a message
//! is kept per thread and can be read with [`xnlu_last_error`]. Handles are
//! opaque and must be released with their matching `_free` function.
//!
//! Strings and arrays are copied into caller buffers. Each copy function
//! writes the required size (elements, including the trailing NUL for
//! strings) to `needed` and returns `XNLU_STATUS_BUFFER_TOO_SMALL` without
//! writing when `capacity` is short, so callers may first pass a null buffer
//! with zero capacity to query the size.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use xnlu::cli::Checkpoint;
use xnlu::data::encode_tokens;
use xnlu::error::Error;
use xnlu::explain::{entropy, top_k};
use xnlu::model::JointModel;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XnluStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Checkpoint = 4,
    Io = 5,
    BufferTooSmall = 6,
    NoAttention = 7,
    OutOfRange = 8,
    Internal = 9,
    Panic = 10,
}

/// A loaded checkpoint.
pub struct XnluModel {
    ckpt: Checkpoint,
    model: JointModel,
}

/// Prediction and attention for one utterance.
pub struct XnluPrediction {
    intent: CString,
    tags: Vec<CString>,
    /// One row-major `len x len` matrix per slot type, when available.
    attention: Option<Vec<Vec<f64>>>,
    len: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: XnluStatus, msg: impl Into<String>) -> XnluStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> XnluStatus {
    let status = match e.category() {
        "checkpoint" => XnluStatus::Checkpoint,
        "io" => XnluStatus::Io,
        "input" | "corpus" | "config" | "tensor" => XnluStatus::InvalidInput,
        _ => XnluStatus::Internal,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> XnluStatus) -> XnluStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(XnluStatus::Panic, "internal panic"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, XnluStatus> {
    if p.is_null() {
        return Err(fail(XnluStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(XnluStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, capacity: usize, needed: *mut usize) -> XnluStatus {
    if !needed.is_null() {
        *needed = src.len();
    }
    if capacity < src.len() {
        return fail(
            XnluStatus::BufferTooSmall,
            format!("buffer holds {capacity}, {} needed", src.len()),
        );
    }
    if buf.is_null() {
        return if src.is_empty() {
            XnluStatus::Ok
        } else {
            fail(XnluStatus::NullArgument, "buffer is null")
        };
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    XnluStatus::Ok
}

unsafe fn copy_str(s: &CStr, buf: *mut c_char, capacity: usize, needed: *mut usize) -> XnluStatus {
    copy_out(s.to_bytes_with_nul(), buf.cast::<u8>(), capacity, needed)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn xnlu_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread. Empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn xnlu_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint file into a new model handle.
#[no_mangle]
pub unsafe extern "C" fn xnlu_model_load(path: *const c_char, out: *mut *mut XnluModel) -> XnluStatus {
    guard(|| {
        if out.is_null() {
            return fail(XnluStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let path = match read_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let loaded = Checkpoint::load(Path::new(path)).and_then(|ckpt| {
            let model = ckpt.joint_model()?;
            Ok(XnluModel { ckpt, model })
        });
        match loaded {
            Ok(m) => {
                *out = Box::into_raw(Box::new(m));
                XnluStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Releases a model. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn xnlu_model_free(model: *mut XnluModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of slot types, `O` included.
#[no_mangle]
pub unsafe extern "C" fn xnlu_model_num_types(model: *const XnluModel, out: *mut usize) -> XnluStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(XnluStatus::NullArgument, "model or out is null");
        }
        *out = (*model).ckpt.maps.slot_types.len();
        XnluStatus::Ok
    })
}

/// Name of slot type `index`.
#[no_mangle]
pub unsafe extern "C" fn xnlu_model_type_name(
    model: *const XnluModel,
    index: usize,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> XnluStatus {
    guard(|| {
        if model.is_null() {
            return fail(XnluStatus::NullArgument, "model is null");
        }
        let types = &(*model).ckpt.maps.slot_types;
        if index >= types.len() {
            return fail(XnluStatus::OutOfRange, format!("type {index} of {}", types.len()));
        }
        let name = CString::new(types.name(index)).unwrap_or_default();
        copy_str(&name, buf, capacity, needed)
    })
}

/// Runs the model on a whitespace-tokenized utterance.
#[no_mangle]
pub unsafe extern "C" fn xnlu_predict(
    model: *const XnluModel,
    utterance: *const c_char,
    out: *mut *mut XnluPrediction,
) -> XnluStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(XnluStatus::NullArgument, "model or out is null");
        }
        *out = ptr::null_mut();
        let text = match read_str(utterance, "utterance") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return fail(XnluStatus::InvalidInput, "empty utterance");
        }
        match predict(&*model, tokens) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(p));
                XnluStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

fn predict(m: &XnluModel, tokens: Vec<String>) -> Result<XnluPrediction, Error> {
    let ckpt = &m.ckpt;
    let batch = encode_tokens(&[tokens], &ckpt.vocab, ckpt.run.max_len)?;
    let out = m.model.run(&ckpt.params, &batch, None)?;
    let pred = out.predict();
    let len = out.lengths[0];
    let cstring = |s: &str| CString::new(s).unwrap_or_default();
    let attention = out.attention.as_ref().map(|_| {
        (0..ckpt.maps.slot_types.len())
            .map(|t| {
                out.attention_matrix(0, t)
                    .unwrap_or_default()
                    .into_iter()
                    .flatten()
                    .map(f64::from)
                    .collect()
            })
            .collect()
    });
    Ok(XnluPrediction {
        intent: cstring(ckpt.maps.intents.name(pred.intents[0])),
        tags: pred.tags[0].iter().map(|&id| cstring(ckpt.maps.bio_labels.name(id))).collect(),
        attention,
        len,
    })
}

/// Releases a prediction. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn xnlu_prediction_free(prediction: *mut XnluPrediction) {
    if !prediction.is_null() {
        drop(Box::from_raw(prediction));
    }
}

/// Number of tokens scored, after truncation to the model's maximum length.
#[no_mangle]
pub unsafe extern "C" fn xnlu_prediction_len(prediction: *const XnluPrediction, out: *mut usize) -> XnluStatus {
    guard(|| {
        if prediction.is_null() || out.is_null() {
            return fail(XnluStatus::NullArgument, "prediction or out is null");
        }
        *out = (*prediction).len;
        XnluStatus::Ok
    })
}

/// Predicted intent name.
#[no_mangle]
pub unsafe extern "C" fn xnlu_prediction_intent(
    prediction: *const XnluPrediction,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> XnluStatus {
    guard(|| {
        if prediction.is_null() {
            return fail(XnluStatus::NullArgument, "prediction is null");
        }
        copy_str(&(*prediction).intent, buf, capacity, needed)
    })
}

/// Predicted BIO tag of token `index`.
#[no_mangle]
pub unsafe extern "C" fn xnlu_prediction_tag(
    prediction: *const XnluPrediction,
    index: usize,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> XnluStatus {
    guard(|| {
        if prediction.is_null() {
            return fail(XnluStatus::NullArgument, "prediction is null");
        }
        let p = &*prediction;
        match p.tags.get(index) {
            Some(tag) => copy_str(tag, buf, capacity, needed),
            None => fail(XnluStatus::OutOfRange, format!("token {index} of {}", p.len)),
        }
    })
}

unsafe fn type_matrix<'a>(prediction: *const XnluPrediction, type_index: usize) -> Result<&'a [f64], XnluStatus> {
    if prediction.is_null() {
        return Err(fail(XnluStatus::NullArgument, "prediction is null"));
    }
    let att = (*prediction)
        .attention
        .as_ref()
        .ok_or_else(|| fail(XnluStatus::NoAttention, "model has no slot-type attention"))?;
    att.get(type_index)
        .map(Vec::as_slice)
        .ok_or_else(|| fail(XnluStatus::OutOfRange, format!("type {type_index} of {}", att.len())))
}

/// Copies the `len x len` row-major attention of slot type `type_index`.
/// Row `i`, column `j` is the weight query token `i` puts on token `j`.
#[no_mangle]
pub unsafe extern "C" fn xnlu_prediction_attention(
    prediction: *const XnluPrediction,
    type_index: usize,
    buf: *mut f64,
    capacity: usize,
    needed: *mut usize,
) -> XnluStatus {
    guard(|| match type_matrix(prediction, type_index) {
        Ok(m) => copy_out(m, buf, capacity, needed),
        Err(s) => s,
    })
}

/// Base-2 entropy of the largest `k_percent` percent of one type's
/// attention weights, the matrix taken as a single list.
#[no_mangle]
pub unsafe extern "C" fn xnlu_prediction_entropy(
    prediction: *const XnluPrediction,
    type_index: usize,
    k_percent: f64,
    out: *mut f64,
) -> XnluStatus {
    guard(|| {
        if out.is_null() {
            return fail(XnluStatus::NullArgument, "out is null");
        }
        if !(k_percent > 0.0 && k_percent <= 100.0) {
            return fail(XnluStatus::InvalidInput, format!("k = {k_percent} is not in (0, 100]"));
        }
        let m = match type_matrix(prediction, type_index) {
            Ok(m) => m,
            Err(s) => return s,
        };
        match entropy(&top_k(m, k_percent)) {
            Ok(h) => {
                *out = h;
                XnluStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
