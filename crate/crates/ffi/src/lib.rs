//! C interface. Models are opaque handles; every call returns a
//! [`LexhazStatus`] and, on failure, leaves a message retrievable with
//! [`lexhaz_last_error`] on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use lexhaz::config::RunConfig;
use lexhaz::lexis::IndividualRecord;
use lexhaz::model::{ModelFile, Predictor};
use lexhaz::pipeline::{fit_binned, prepare_records};
use lexhaz::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexhazStatus {
    Ok = 0,
    InvalidArgument = 1,
    DataError = 2,
    NonConvergence = 3,
    OutOfDomain = 4,
    IoError = 5,
    NumericalError = 6,
    Panic = 7,
}

/// A fitted model.
pub struct LexhazModel {
    file: ModelFile,
    predictor: Predictor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LexhazStatus {
    match e {
        Error::NonConvergence { .. } | Error::SearchExhausted { .. } => LexhazStatus::NonConvergence,
        Error::OutOfDomain { .. } | Error::PointsOutOfDomain { .. } => LexhazStatus::OutOfDomain,
        Error::Data { .. } | Error::RecordsOutsideGrid { .. } | Error::NoEvents { .. } | Error::Csv(_) => LexhazStatus::DataError,
        Error::Io(_) | Error::Json(_) => LexhazStatus::IoError,
        Error::Singular(_) => LexhazStatus::NumericalError,
        Error::InvalidInput(_) | Error::DimensionMismatch(_) | Error::Config(_) => LexhazStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (LexhazStatus, String)>) -> LexhazStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LexhazStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LexhazStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (LexhazStatus, String) {
    (status_of(&e), e.to_string())
}

fn invalid(msg: &str) -> (LexhazStatus, String) {
    (LexhazStatus::InvalidArgument, msg.to_string())
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (LexhazStatus, String)> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(&format!("{what} is not UTF-8")))
}

unsafe fn input<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (LexhazStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn model_ref<'a>(m: *const LexhazModel) -> Result<&'a LexhazModel, (LexhazStatus, String)> {
    m.as_ref().ok_or_else(|| invalid("model handle is null"))
}

fn wrap(file: ModelFile) -> Result<*mut LexhazModel, (LexhazStatus, String)> {
    let predictor = file.predictor().map_err(lib_err)?;
    Ok(Box::into_raw(Box::new(LexhazModel { file, predictor })))
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lexhaz_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lexhaz_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model written by `lexhaz fit` (`model.json`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lexhaz_model_load(path: *const c_char, out: *mut *mut LexhazModel) -> LexhazStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        let path = c_str(path, "path")?;
        let file = ModelFile::load(Path::new(path)).map_err(lib_err)?;
        *out = wrap(file)?;
        Ok(())
    })
}

/// Parses a model from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lexhaz_model_from_json(json: *const c_char, out: *mut *mut LexhazModel) -> LexhazStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        let file = ModelFile::from_json(c_str(json, "json")?).map_err(lib_err)?;
        *out = wrap(file)?;
        Ok(())
    })
}

/// Fits a model from `n` records. `s_entry` may be null (all zero).
/// `cause` is 0 (censored), 1 or 2. `config_toml` may be null for the
/// default configuration.
///
/// # Safety
/// Array arguments must hold `n` elements; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lexhaz_model_fit(
    u: *const f64,
    s_entry: *const f64,
    s_exit: *const f64,
    cause: *const u8,
    n: usize,
    config_toml: *const c_char,
    out: *mut *mut LexhazModel,
) -> LexhazStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        let u = input(u, n, "u")?;
        let s_exit = input(s_exit, n, "s_exit")?;
        let cause = input(cause, n, "cause")?;
        let s_entry = if s_entry.is_null() { None } else { Some(input(s_entry, n, "s_entry")?) };
        let cfg = if config_toml.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_toml_str(c_str(config_toml, "config")?).map_err(lib_err)?
        };
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let rec = IndividualRecord {
                id: format!("#{}", i + 1),
                u: u[i],
                s_entry: s_entry.map_or(0.0, |s| s[i]),
                s_exit: s_exit[i],
                cause: cause[i],
            };
            rec.validate()
                .map_err(|m| (LexhazStatus::DataError, format!("record {}: {m}", i + 1)))?;
            records.push(rec);
        }
        let prepared = prepare_records(&records, &cfg).map_err(lib_err)?;
        let outcome = fit_binned(&prepared.data, &cfg).map_err(lib_err)?;
        *out = wrap(outcome.model)?;
        Ok(())
    })
}

/// Writes the model as JSON.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lexhaz_model_save(model: *const LexhazModel, path: *const c_char) -> LexhazStatus {
    guard(|| {
        let m = model_ref(model)?;
        m.file.save(Path::new(c_str(path, "path")?)).map_err(lib_err)
    })
}

/// Basis sizes of one cause's surface.
///
/// # Safety
/// `model` must come from this library; `c_u`, `c_s` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lexhaz_model_dims(model: *const LexhazModel, cause: c_int, c_u: *mut usize, c_s: *mut usize) -> LexhazStatus {
    guard(|| {
        let m = model_ref(model)?;
        let c = cause_index(cause)?;
        if c_u.is_null() || c_s.is_null() {
            return Err(invalid("output pointer is null"));
        }
        *c_u = m.predictor.surfaces[c].c_u();
        *c_s = m.predictor.surfaces[c].c_s();
        Ok(())
    })
}

fn cause_index(cause: c_int) -> Result<usize, (LexhazStatus, String)> {
    match cause {
        1 | 2 => Ok(cause as usize - 1),
        _ => Err(invalid(&format!("cause must be 1 or 2, got {cause}"))),
    }
}

/// Shared driver for the pointwise evaluators.
unsafe fn evaluate(
    model: *const LexhazModel,
    u: *const f64,
    s: *const f64,
    n: usize,
    out: *mut f64,
    with_cif_se: Option<(usize, u64)>,
    pick: impl Fn(&lexhaz::model::PointPrediction) -> f64,
) -> LexhazStatus {
    guard(|| {
        let m = model_ref(model)?;
        let u = input(u, n, "u")?;
        let s = input(s, n, "s")?;
        if n > 0 && out.is_null() {
            return Err(invalid("output array is null"));
        }
        let points: Vec<(f64, f64)> = u.iter().copied().zip(s.iter().copied()).collect();
        let preds = match with_cif_se {
            Some((n_draws, seed)) => {
                let mut p = m.predictor.clone();
                p.monte_carlo.n_draws = n_draws;
                p.monte_carlo.seed = seed;
                p.predict(&points, true)
            }
            None => m.predictor.predict(&points, false),
        }
        .map_err(lib_err)?;
        let dst = slice::from_raw_parts_mut(out, n);
        for (d, p) in dst.iter_mut().zip(&preds) {
            *d = pick(p);
        }
        Ok(())
    })
}

/// Cause-specific hazard at `n` points `(u[i], s[i])`.
///
/// # Safety
/// `u`, `s` and `out` must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn lexhaz_hazard(model: *const LexhazModel, cause: c_int, u: *const f64, s: *const f64, n: usize, out: *mut f64) -> LexhazStatus {
    match cause_index(cause) {
        Ok(c) => evaluate(model, u, s, n, out, None, |p| p.hazard[c]),
        Err((st, msg)) => {
            set_error(msg);
            st
        }
    }
}

/// Delta-method standard error of the log-hazard.
///
/// # Safety
/// As for [`lexhaz_hazard`].
#[no_mangle]
pub unsafe extern "C" fn lexhaz_log_hazard_se(
    model: *const LexhazModel,
    cause: c_int,
    u: *const f64,
    s: *const f64,
    n: usize,
    out: *mut f64,
) -> LexhazStatus {
    match cause_index(cause) {
        Ok(c) => evaluate(model, u, s, n, out, None, |p| p.log_hazard_se[c]),
        Err((st, msg)) => {
            set_error(msg);
            st
        }
    }
}

/// Cumulative cause-specific hazard from `s = 0`.
///
/// # Safety
/// As for [`lexhaz_hazard`].
#[no_mangle]
pub unsafe extern "C" fn lexhaz_cumulative_hazard(
    model: *const LexhazModel,
    cause: c_int,
    u: *const f64,
    s: *const f64,
    n: usize,
    out: *mut f64,
) -> LexhazStatus {
    match cause_index(cause) {
        Ok(c) => evaluate(model, u, s, n, out, None, |p| p.cumhaz[c]),
        Err((st, msg)) => {
            set_error(msg);
            st
        }
    }
}

/// Overall survival.
///
/// # Safety
/// As for [`lexhaz_hazard`].
#[no_mangle]
pub unsafe extern "C" fn lexhaz_survival(model: *const LexhazModel, u: *const f64, s: *const f64, n: usize, out: *mut f64) -> LexhazStatus {
    evaluate(model, u, s, n, out, None, |p| p.survival)
}

/// Cumulative incidence of one cause.
///
/// # Safety
/// As for [`lexhaz_hazard`].
#[no_mangle]
pub unsafe extern "C" fn lexhaz_cif(model: *const LexhazModel, cause: c_int, u: *const f64, s: *const f64, n: usize, out: *mut f64) -> LexhazStatus {
    match cause_index(cause) {
        Ok(c) => evaluate(model, u, s, n, out, None, |p| p.cif[c]),
        Err((st, msg)) => {
            set_error(msg);
            st
        }
    }
}

/// Monte-Carlo standard error of the cumulative incidence.
///
/// # Safety
/// As for [`lexhaz_hazard`].
#[no_mangle]
pub unsafe extern "C" fn lexhaz_cif_se(
    model: *const LexhazModel,
    cause: c_int,
    u: *const f64,
    s: *const f64,
    n: usize,
    n_draws: usize,
    seed: u64,
    out: *mut f64,
) -> LexhazStatus {
    match cause_index(cause) {
        Ok(c) => evaluate(model, u, s, n, out, Some((n_draws, seed)), |p| p.cif_se.map_or(f64::NAN, |v| v[c])),
        Err((st, msg)) => {
            set_error(msg);
            st
        }
    }
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lexhaz_model_free(model: *mut LexhazModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
