//! C ABI for the protoreplay library.
//!
//! Every function returns a [`PrStatus`]; results come back through out-pointers.
//! On failure the thread-local message from [`pr_last_error`] describes the cause.
//! Objects are opaque handles released with their `_free` function, and strings
//! returned by the library are released with [`pr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use protoreplay::data::{ImageShape, LabeledBatch};
use protoreplay::evaluation::{forgetting, EvalMatrix};
use protoreplay::experiment::{self, RunConfig, RunOptions};
use protoreplay::learner::Learner;
use protoreplay::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Data = 4,
    Shape = 5,
    Io = 6,
    Checkpoint = 7,
    Runtime = 8,
    Panic = 9,
}

/// Parsed run configuration.
pub struct PrConfig {
    inner: RunConfig,
}

/// A learner built from a configuration, trained one batch at a time.
pub struct PrLearner {
    inner: Learner,
    shape: ImageShape,
    num_classes: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> PrStatus {
    match err {
        Error::Config(_) => PrStatus::Config,
        Error::Data(_) | Error::MissingDataset { .. } | Error::UnknownClass(_) | Error::EmptyBatch(_) => PrStatus::Data,
        Error::Shape(_) => PrStatus::Shape,
        Error::Io(_) | Error::Json(_) => PrStatus::Io,
        Error::Checkpoint(_) => PrStatus::Checkpoint,
        _ => PrStatus::Runtime,
    }
}

struct Failure(PrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

type FfiResult = Result<(), Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> PrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PrStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PrStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(PrStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PrStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> FfiResult {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message for the last failure on this thread, or null. Valid until the next
/// failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn pr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a TOML configuration into `*out`.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_config_from_toml(toml: *const c_char, out: *mut *mut PrConfig) -> PrStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        let cfg = RunConfig::from_toml_str(text)?;
        write_out(out, Box::into_raw(Box::new(PrConfig { inner: cfg })), "out")
    })
}

/// Loads a named built-in configuration into `*out`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_config_preset(name: *const c_char, out: *mut *mut PrConfig) -> PrStatus {
    guard(|| {
        let preset = experiment::preset(str_arg(name, "name")?)?;
        let cfg = RunConfig::from_toml_str(preset.toml)?;
        write_out(out, Box::into_raw(Box::new(PrConfig { inner: cfg })), "out")
    })
}

/// Applies one `key=value` override, with the value in TOML syntax.
///
/// # Safety
/// `cfg` must be a live handle; `assignment` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pr_config_set(cfg: *mut PrConfig, assignment: *const c_char) -> PrStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let assignment = str_arg(assignment, "assignment")?;
        cfg.inner = RunConfig::from_toml_with_overrides(&cfg.inner.to_toml_string(), &[assignment.to_string()])?;
        Ok(())
    })
}

/// Writes the configuration as TOML to `*out`; free with [`pr_string_free`].
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_config_to_toml(cfg: *const PrConfig, out: *mut *mut c_char) -> PrStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        write_out(out, into_c_string(cfg.inner.to_toml_string()), "out")
    })
}

/// Writes the short configuration hash to `*out`; free with [`pr_string_free`].
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_config_hash(cfg: *const PrConfig, out: *mut *mut c_char) -> PrStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        write_out(out, into_c_string(cfg.inner.config_hash()), "out")
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pr_config_free(cfg: *mut PrConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Builds a learner for the configured method, network and image shape.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_learner_new(cfg: *const PrConfig, seed: u64, out: *mut *mut PrLearner) -> PrStatus {
    guard(|| {
        let cfg = &cfg.as_ref().ok_or_else(|| null("cfg"))?.inner;
        cfg.validate()?;
        let learner = Learner::new(cfg.learner_config(), &cfg.network_spec(), seed)?;
        let handle = PrLearner {
            inner: learner,
            shape: cfg.image_shape(),
            num_classes: cfg.num_classes(),
        };
        write_out(out, Box::into_raw(Box::new(handle)), "out")
    })
}

unsafe fn batch(l: &PrLearner, images: *const f32, labels: Option<*const u32>, n: usize) -> Result<LabeledBatch, Failure> {
    if n == 0 {
        return Err(Error::EmptyBatch("ffi").into());
    }
    if images.is_null() {
        return Err(null("images"));
    }
    let images = std::slice::from_raw_parts(images, n * l.shape.numel()).to_vec();
    let labels = match labels {
        Some(p) if p.is_null() => return Err(null("labels")),
        Some(p) => std::slice::from_raw_parts(p, n).to_vec(),
        None => vec![0; n],
    };
    if let Some(bad) = labels.iter().find(|&&y| y >= l.num_classes) {
        return Err(Failure(PrStatus::Data, format!("label {bad} outside 0..{}", l.num_classes)));
    }
    Ok(LabeledBatch {
        shape: l.shape,
        images,
        labels,
        indices: Vec::new(),
    })
}

/// One online step on `n` samples of the configured shape, row-major
/// `[n, channels, height, width]`. The total loss goes to `*loss` when non-null.
///
/// # Safety
/// `images` must hold `n * channels * height * width` floats and `labels` `n` values.
#[no_mangle]
pub unsafe extern "C" fn pr_learner_train_batch(
    learner: *mut PrLearner,
    images: *const f32,
    labels: *const u32,
    n: usize,
    loss: *mut f64,
) -> PrStatus {
    guard(|| {
        let l = learner.as_mut().ok_or_else(|| null("learner"))?;
        let b = batch(l, images, Some(labels), n)?;
        let log = l.inner.train_step(&b)?;
        if !loss.is_null() {
            loss.write(log.total_loss);
        }
        Ok(())
    })
}

/// Predicts a class among those seen so far for each of `n` samples into `out_labels`.
///
/// # Safety
/// `images` must hold `n` samples; `out_labels` must have room for `n` values.
#[no_mangle]
pub unsafe extern "C" fn pr_learner_predict(
    learner: *const PrLearner,
    images: *const f32,
    n: usize,
    out_labels: *mut u32,
) -> PrStatus {
    guard(|| {
        let l = learner.as_ref().ok_or_else(|| null("learner"))?;
        if out_labels.is_null() {
            return Err(null("out_labels"));
        }
        let b = batch(l, images, None, n)?;
        let pred = l.inner.predict(&b)?;
        std::slice::from_raw_parts_mut(out_labels, n).copy_from_slice(&pred);
        Ok(())
    })
}

/// Number of training steps taken so far.
///
/// # Safety
/// `learner` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_learner_steps(learner: *const PrLearner, out: *mut u64) -> PrStatus {
    guard(|| {
        let l = learner.as_ref().ok_or_else(|| null("learner"))?;
        write_out(out, l.inner.steps_taken(), "out")
    })
}

/// # Safety
/// `learner` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pr_learner_free(learner: *mut PrLearner) {
    if !learner.is_null() {
        drop(Box::from_raw(learner));
    }
}

/// Average forgetting of a `phases x phases` row-major accuracy matrix in percent;
/// entries above the diagonal are ignored. Fails for fewer than two phases.
///
/// # Safety
/// `matrix` must hold `phases * phases` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pr_forgetting(matrix: *const f64, phases: usize, out: *mut f64) -> PrStatus {
    guard(|| {
        if matrix.is_null() {
            return Err(null("matrix"));
        }
        let flat = std::slice::from_raw_parts(matrix, phases * phases);
        let rows = (0..phases).map(|t| flat[t * phases..=t * phases + t].to_vec()).collect();
        let m = EvalMatrix::from_rows(rows)?;
        let f = forgetting(&m).ok_or_else(|| Failure(PrStatus::Data, "forgetting needs at least two phases".into()))?;
        write_out(out, f, "out")
    })
}

/// Runs every configured seed and writes the run records as a JSON array to
/// `*out_json`; free with [`pr_string_free`]. `output_dir` may be null to keep
/// the configured directory.
///
/// # Safety
/// `cfg` must be a live handle; `output_dir` null or NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn pr_run(cfg: *const PrConfig, output_dir: *const c_char, out_json: *mut *mut c_char) -> PrStatus {
    guard(|| {
        let mut cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?.inner.clone();
        if !output_dir.is_null() {
            cfg.output_dir = PathBuf::from(str_arg(output_dir, "output_dir")?);
        }
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let report = experiment::run(&cfg, &RunOptions::default())?;
        let json = serde_json::to_string(&report.records).map_err(Error::from)?;
        out_json.write(into_c_string(json));
        Ok(())
    })
}
