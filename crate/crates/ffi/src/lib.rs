//! C ABI over the `dqnn` engine.
//!
//! Models are opaque `DqnnModel` handles created by `dqnn_model_new` or
//! `dqnn_model_load` and released with `dqnn_model_free`. Every fallible call
//! returns a `DqnnStatus`; on failure `dqnn_last_error_message` describes the
//! most recent error on the calling thread. Parameter buffers use the flat
//! layout of the checkpoint: shard 1's parameters first, then shard 2's, and
//! so on.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dqnn::model::ArchSpec;
use dqnn::training::init_params;
use dqnn::{EnsembleModel, Error, Observable, PartitionSpec};

/// Opaque model handle.
pub struct DqnnModel {
    inner: EnsembleModel,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DqnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numeric = 4,
    Capacity = 5,
    Wiring = 6,
    Io = 7,
    Checkpoint = 8,
    Config = 9,
    Panic = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> DqnnStatus {
    match err {
        Error::Capacity(_) => DqnnStatus::Capacity,
        Error::Numeric(_) => DqnnStatus::Numeric,
        Error::Wiring(_) => DqnnStatus::Wiring,
        Error::Shape(_) => DqnnStatus::Shape,
        Error::Config(_) | Error::ConfigList(_) => DqnnStatus::Config,
        Error::Range(_) => DqnnStatus::InvalidArgument,
        Error::Parse { .. } | Error::Format { .. } | Error::Checkpoint(_) => DqnnStatus::Checkpoint,
        Error::Io { .. } => DqnnStatus::Io,
    }
}

enum Failure {
    Status(DqnnStatus, String),
    Engine(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(DqnnStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> Failure {
    Failure::Status(DqnnStatus::InvalidArgument, msg)
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DqnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DqnnStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Engine(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            DqnnStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(m: *const DqnnModel) -> Result<&'a EnsembleModel, Failure> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn model_mut<'a>(m: *mut DqnnModel) -> Result<&'a mut EnsembleModel, Failure> {
    m.as_mut().map(|m| &mut m.inner).ok_or_else(|| null("model"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8".into()))
}

fn expect_len(got: usize, want: usize, what: &str) -> Result<(), Failure> {
    if got != want {
        return Err(Failure::Engine(Error::Shape(format!("{what}: expected {want} values, got {got}"))));
    }
    Ok(())
}

/// Message for the last failed call on this thread, or NULL if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dqnn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated name of a status code; unknown codes map to
/// "unknown status".
#[no_mangle]
pub extern "C" fn dqnn_status_name(status: i32) -> *const c_char {
    let s: &'static [u8] = match status {
        0 => b"ok\0",
        1 => b"null pointer\0",
        2 => b"invalid argument\0",
        3 => b"shape mismatch\0",
        4 => b"numeric error\0",
        5 => b"capacity exceeded\0",
        6 => b"invalid wiring\0",
        7 => b"i/o error\0",
        8 => b"bad checkpoint\0",
        9 => b"invalid configuration\0",
        10 => b"internal panic\0",
        _ => b"unknown status\0",
    };
    s.as_ptr().cast()
}

/// Library version, NUL-terminated.
#[no_mangle]
pub extern "C" fn dqnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds an ensemble over `grid_h x grid_w` inputs split into `n_qc`
/// row-contiguous shards of `n_qubits` qubits each, with the default ten
/// observables and scale `c`. Parameters start at zero; see
/// `dqnn_model_init_params`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dqnn_model_new(
    grid_h: usize,
    grid_w: usize,
    n_qc: usize,
    n_qubits: usize,
    c: f64,
    out: *mut *mut DqnnModel,
) -> DqnnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let partition = PartitionSpec::new(grid_h, grid_w, n_qc)?;
        let spec = ArchSpec::new(n_qubits, partition.features_per_shard());
        let inner = EnsembleModel::new(partition, spec, Observable::default_set(), c)?;
        *out = Box::into_raw(Box::new(DqnnModel { inner }));
        Ok(())
    })
}

/// Loads a JSON checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dqnn_model_load(path: *const c_char, out: *mut *mut DqnnModel) -> DqnnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let inner = EnsembleModel::load(c_path(path)?)?;
        *out = Box::into_raw(Box::new(DqnnModel { inner }));
        Ok(())
    })
}

/// Writes a JSON checkpoint that reloads bit-exactly.
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dqnn_model_save(model: *const DqnnModel, path: *const c_char) -> DqnnStatus {
    guard(|| {
        model_ref(model)?.save(c_path(path)?)?;
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dqnn_model_free(model: *mut DqnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Total trainable parameters over all shards, 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dqnn_model_num_params(model: *const DqnnModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.params().len())
}

/// Number of input values per sample (`grid_h * grid_w`), 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dqnn_model_sample_len(model: *const DqnnModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.partition().sample_len())
}

/// Number of logits (classes), 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dqnn_model_num_outputs(model: *const DqnnModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.d_out())
}

/// Number of shards, 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dqnn_model_num_shards(model: *const DqnnModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n_shards())
}

/// Draws every parameter uniformly from `[0, pi)` with `seed`.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dqnn_model_init_params(model: *mut DqnnModel, seed: u64) -> DqnnStatus {
    guard(|| {
        init_params(model_mut(model)?, seed);
        Ok(())
    })
}

/// Copies the parameters into `out[0..len]`; `len` must equal
/// `dqnn_model_num_params`.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dqnn_model_get_params(model: *const DqnnModel, out: *mut f64, len: usize) -> DqnnStatus {
    guard(|| {
        let m = model_ref(model)?;
        expect_len(len, m.params().len(), "parameter buffer")?;
        slice_mut(out, len, "out")?.copy_from_slice(m.params());
        Ok(())
    })
}

/// Replaces the parameters from `values[0..len]`. Non-finite values are
/// rejected and leave the model unchanged.
///
/// # Safety
/// `values` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn dqnn_model_set_params(model: *mut DqnnModel, values: *const f64, len: usize) -> DqnnStatus {
    guard(|| {
        let m = model_mut(model)?;
        expect_len(len, m.params().len(), "parameter buffer")?;
        let src = slice(values, len, "values")?;
        if let Some(bad) = src.iter().find(|v| !v.is_finite()) {
            return Err(Failure::Engine(Error::Numeric(format!("non-finite parameter {bad}"))));
        }
        m.params_mut().copy_from_slice(src);
        Ok(())
    })
}

/// Forward pass on one sample of `sample_len` angles. Writes the logits and,
/// if `probs` is not NULL, the softmax probabilities; both buffers hold
/// `n_out` doubles.
///
/// # Safety
/// Pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn dqnn_model_forward(
    model: *const DqnnModel,
    sample: *const f64,
    sample_len: usize,
    logits: *mut f64,
    probs: *mut f64,
    n_out: usize,
) -> DqnnStatus {
    guard(|| {
        let m = model_ref(model)?;
        expect_len(n_out, m.d_out(), "output buffer")?;
        let x = slice(sample, sample_len, "sample")?;
        let pred = m.forward(x)?;
        slice_mut(logits, n_out, "logits")?.copy_from_slice(&pred.logits);
        if !probs.is_null() {
            slice_mut(probs, n_out, "probs")?.copy_from_slice(&pred.probs);
        }
        Ok(())
    })
}

/// Cross-entropy loss of one labelled sample and its gradient with respect
/// to every parameter (flat layout, `grad_len = dqnn_model_num_params`).
///
/// # Safety
/// Pointers must reference buffers of the stated lengths; `loss` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dqnn_model_loss_grad(
    model: *const DqnnModel,
    sample: *const f64,
    sample_len: usize,
    label: usize,
    loss: *mut f64,
    grad: *mut f64,
    grad_len: usize,
) -> DqnnStatus {
    guard(|| {
        let m = model_ref(model)?;
        if loss.is_null() {
            return Err(null("loss"));
        }
        expect_len(grad_len, m.params().len(), "gradient buffer")?;
        let x = slice(sample, sample_len, "sample")?;
        let (pred, shards) = m.backward(x, label)?;
        let out = slice_mut(grad, grad_len, "grad")?;
        for (dst, g) in out.chunks_exact_mut(m.arch().n_params()).zip(&shards) {
            dst.copy_from_slice(g);
        }
        *loss = pred.loss.unwrap_or(f64::NAN);
        Ok(())
    })
}
