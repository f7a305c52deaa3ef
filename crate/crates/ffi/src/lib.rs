//! C ABI for `atomdl`.
//!
//! Datasets and fit results are opaque handles owned by the caller and
//! released with the matching `_free` function. Every fallible call returns
//! an [`AtomdlStatus`]; on failure the message is kept per thread and can be
//! read with [`atomdl_last_error_message`]. Matrices cross the boundary as
//! row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use atomdl::coefficient_update::ThresholdMode;
use atomdl::eval::{score_recovery, ScoreTarget};
use atomdl::experiment::{anchor_from, true_task_course};
use atomdl::model::FEASIBILITY_TOL;
use atomdl::simgen::{generate, DatasetSpec, SyntheticDataset};
use atomdl::solver::FitResult;
use atomdl::storage::read_bundle;
use atomdl::{fit, is_feasible, AnchorSet, DataMatrix, Error, Mode, SolverConfig};
use ndarray::{Array2, ArrayView2};

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomdlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomdlMode {
    AtomAssisted = 0,
    Sdl = 1,
    Blind = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomdlThreshold {
    PaperLiteral = 0,
    ExactProx = 1,
}

/// Solver settings. Fill with [`atomdl_fit_options_default`] and edit.
/// `mode` takes an `AtomdlMode` value and `threshold` an `AtomdlThreshold`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AtomdlFitOptions {
    pub mode: i32,
    pub k: usize,
    pub lambda: f64,
    pub c_delta: f64,
    pub c_d: f64,
    pub n_outer: usize,
    pub n_inner: usize,
    pub seed: u64,
    pub threshold: i32,
}

/// Opaque synthetic dataset.
pub struct AtomdlDataset {
    inner: SyntheticDataset,
}

/// Opaque fit result.
pub struct AtomdlFit {
    inner: FitResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> AtomdlStatus {
    match err {
        Error::Io { .. } | Error::Parse { .. } => AtomdlStatus::Io,
        e if e.is_numerical() => AtomdlStatus::Numerical,
        _ => AtomdlStatus::InvalidArgument,
    }
}

struct Fail(AtomdlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AtomdlStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic for the calling thread.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AtomdlStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AtomdlStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AtomdlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(AtomdlStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Fail> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < src.len() {
        return Err(Fail(
            AtomdlStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

fn row_major(m: &Array2<f64>) -> Vec<f64> {
    m.iter().copied().collect()
}

unsafe fn matrix_arg(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Fail(AtomdlStatus::InvalidArgument, format!("{what} is too large")))?;
    let data = std::slice::from_raw_parts(p, len);
    Ok(ArrayView2::from_shape((rows, cols), data)
        .map_err(|e| Fail(AtomdlStatus::InvalidArgument, e.to_string()))?
        .to_owned())
}

unsafe fn put<T>(out: *mut T, value: T) {
    if !out.is_null() {
        *out = value;
    }
}

/// Length in bytes of the last error message on this thread, without the
/// terminating NUL. Zero when the last call succeeded.
#[no_mangle]
pub extern "C" fn atomdl_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |s| s.as_bytes().len()))
}

/// Copies the last error message, NUL-terminated, into `buf`.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn atomdl_last_error_message(buf: *mut c_char, len: usize) -> AtomdlStatus {
    if buf.is_null() {
        return AtomdlStatus::NullPointer;
    }
    LAST_ERROR.with(|e| {
        let borrowed = e.borrow();
        let bytes = borrowed.as_ref().map_or(&[0u8][..], |s| s.as_bytes_with_nul());
        if len < bytes.len() {
            return AtomdlStatus::BufferTooSmall;
        }
        ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
        AtomdlStatus::Ok
    })
}

/// Writes the library defaults (atom-assisted, K = 20, desk budget).
///
/// # Safety
/// `out` must be null or point to writable memory for one options struct.
#[no_mangle]
pub unsafe extern "C" fn atomdl_fit_options_default(out: *mut AtomdlFitOptions) -> AtomdlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = atomdl::experiment::SolverOverrides::default().build(Mode::AtomAssisted, false);
        *out = AtomdlFitOptions {
            mode: AtomdlMode::AtomAssisted as i32,
            k: cfg.k,
            lambda: cfg.lambda(),
            c_delta: cfg.constraints.c_delta,
            c_d: cfg.constraints.c_d,
            n_outer: cfg.n_outer,
            n_inner: cfg.coef_cfg.n_inner,
            seed: cfg.seed,
            threshold: AtomdlThreshold::PaperLiteral as i32,
        };
        Ok(())
    })
}

fn mode_of(raw: i32) -> Result<Mode, Fail> {
    match raw {
        x if x == AtomdlMode::AtomAssisted as i32 => Ok(Mode::AtomAssisted),
        x if x == AtomdlMode::Sdl as i32 => Ok(Mode::Sdl),
        x if x == AtomdlMode::Blind as i32 => Ok(Mode::Blind),
        x => Err(Fail(AtomdlStatus::InvalidArgument, format!("unknown mode {x}"))),
    }
}

fn solver_config(o: &AtomdlFitOptions) -> Result<SolverConfig, Fail> {
    let mode = mode_of(o.mode)?;
    let mut cfg = SolverConfig::default().with_budget(o.n_outer, o.n_inner);
    cfg.k = o.k;
    cfg.seed = o.seed;
    cfg.constraints.mode = mode;
    cfg.constraints.c_delta = o.c_delta;
    cfg.constraints.c_d = o.c_d;
    cfg.coef_cfg.lambda = o.lambda;
    cfg.coef_cfg.threshold_mode = match o.threshold {
        x if x == AtomdlThreshold::PaperLiteral as i32 => ThresholdMode::PaperLiteral,
        x if x == AtomdlThreshold::ExactProx as i32 => ThresholdMode::ExactProx,
        x => return Err(Fail(AtomdlStatus::InvalidArgument, format!("unknown threshold mode {x}"))),
    };
    Ok(cfg)
}

fn boxed_dataset(ds: SyntheticDataset, out: *mut *mut AtomdlDataset) {
    unsafe { *out = Box::into_raw(Box::new(AtomdlDataset { inner: ds })) };
}

/// Generates the built-in default dataset with the given seed.
///
/// # Safety
/// `out` must point to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn atomdl_dataset_generate_default(seed: u64, out: *mut *mut AtomdlDataset) -> AtomdlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = DatasetSpec {
            seed,
            ..DatasetSpec::default()
        };
        boxed_dataset(generate(&spec)?, out);
        Ok(())
    })
}

/// Generates a dataset from a JSON dataset spec.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn atomdl_dataset_generate_json(
    spec_json: *const c_char,
    out: *mut *mut AtomdlDataset,
) -> AtomdlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(spec_json, "spec_json")?;
        let spec: DatasetSpec = serde_json::from_str(text).map_err(|e| Fail(AtomdlStatus::InvalidArgument, e.to_string()))?;
        boxed_dataset(generate(&spec)?, out);
        Ok(())
    })
}

/// Loads a bundle directory written by `atomdl generate`.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn atomdl_dataset_load(dir: *const c_char, out: *mut *mut AtomdlDataset) -> AtomdlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = str_arg(dir, "dir")?;
        boxed_dataset(read_bundle(Path::new(dir))?, out);
        Ok(())
    })
}

/// Reports T, N and the number of true sources.
///
/// # Safety
/// `ds` must be a live handle; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn atomdl_dataset_shape(
    ds: *const AtomdlDataset,
    t: *mut usize,
    n: *mut usize,
    k_true: *mut usize,
) -> AtomdlStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        put(t, ds.x.n_time());
        put(n, ds.x.n_voxels());
        put(k_true, ds.s_true.nrows());
        Ok(())
    })
}

/// Copies X (T × N, row-major).
///
/// # Safety
/// `ds` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn atomdl_dataset_copy_x(ds: *const AtomdlDataset, buf: *mut f64, len: usize) -> AtomdlStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        copy_out(&row_major(ds.x.values()), buf, len)
    })
}

/// Copies the true task time course scaled to unit norm (length T), the
/// anchor used by the sweeps at zero shift.
///
/// # Safety
/// `ds` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn atomdl_dataset_copy_task_anchor(
    ds: *const AtomdlDataset,
    buf: *mut f64,
    len: usize,
) -> AtomdlStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        let anchors = anchor_from(&true_task_course(ds))?;
        copy_out(&row_major(anchors.deltas()), buf, len)
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `ds` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn atomdl_dataset_free(ds: *mut AtomdlDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fits `X ≈ D S`.
///
/// `x` is T × N row-major. `anchors` is T × M row-major and may be null when
/// `m` is zero; blind mode ignores it.
///
/// # Safety
/// Buffers must hold the stated number of doubles; `opts` must be valid and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn atomdl_fit_run(
    x: *const f64,
    t: usize,
    n: usize,
    anchors: *const f64,
    m: usize,
    opts: *const AtomdlFitOptions,
    out: *mut *mut AtomdlFit,
) -> AtomdlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let opts = opts.as_ref().ok_or_else(|| null("opts"))?;
        let data = DataMatrix::new(matrix_arg(x, t, n, "x")?)?;
        let mut cfg = solver_config(opts)?;
        cfg.anchors = if m == 0 || cfg.mode() == Mode::Blind {
            AnchorSet::empty(t)
        } else {
            AnchorSet::new(matrix_arg(anchors, t, m, "anchors")?)?
        };
        let result = fit(&data, &cfg)?;
        *out = Box::into_raw(Box::new(AtomdlFit { inner: result }));
        Ok(())
    })
}

/// Reports T, K, N and the number of recorded outer iterations.
///
/// # Safety
/// `fit` must be a live handle; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn atomdl_fit_shape(
    fit: *const AtomdlFit,
    t: *mut usize,
    k: *mut usize,
    n: *mut usize,
    iterations: *mut usize,
) -> AtomdlStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.inner;
        put(t, f.dictionary.n_time());
        put(k, f.dictionary.n_atoms());
        put(n, f.coefficients.values().ncols());
        put(iterations, f.history.len());
        Ok(())
    })
}

/// Copies D (T × K, row-major).
///
/// # Safety
/// `fit` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn atomdl_fit_copy_dictionary(fit: *const AtomdlFit, buf: *mut f64, len: usize) -> AtomdlStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.inner;
        copy_out(&row_major(f.dictionary.atoms()), buf, len)
    })
}

/// Copies S (K × N, row-major).
///
/// # Safety
/// `fit` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn atomdl_fit_copy_coefficients(fit: *const AtomdlFit, buf: *mut f64, len: usize) -> AtomdlStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.inner;
        copy_out(&row_major(f.coefficients.values()), buf, len)
    })
}

/// Copies the objective after each outer iteration.
///
/// # Safety
/// `fit` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn atomdl_fit_copy_objective(fit: *const AtomdlFit, buf: *mut f64, len: usize) -> AtomdlStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.inner;
        let objective: Vec<f64> = f.history.iter().map(|r| r.objective).collect();
        copy_out(&objective, buf, len)
    })
}

/// Whether the final dictionary satisfies every atom constraint.
///
/// # Safety
/// `fit` must be a live handle; `feasible` must be writable.
#[no_mangle]
pub unsafe extern "C" fn atomdl_fit_is_feasible(fit: *const AtomdlFit, feasible: *mut bool) -> AtomdlStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.inner;
        if feasible.is_null() {
            return Err(null("feasible"));
        }
        *feasible = is_feasible(&f.dictionary, FEASIBILITY_TOL).feasible;
        Ok(())
    })
}

/// Scores the fit against the dataset's task-of-interest spatial map.
///
/// # Safety
/// Both handles must be live; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn atomdl_fit_score_task(
    fit: *const AtomdlFit,
    ds: *const AtomdlDataset,
    r: *mut f64,
    one_minus_r2: *mut f64,
) -> AtomdlStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.inner;
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.inner;
        let score = score_recovery(f, ds, ds.task_index, ScoreTarget::SpatialMap)?;
        put(r, score.r);
        put(one_minus_r2, score.one_minus_r_squared);
        Ok(())
    })
}

/// Releases a fit result. Null is ignored.
///
/// # Safety
/// `fit` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn atomdl_fit_free(fit: *mut AtomdlFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
