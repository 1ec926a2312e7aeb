//! C ABI over `varimatch`.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free`. Every fallible call returns a [`VmStatus`]; on failure
//! `vm_last_error()` describes the cause for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use varimatch::config::{read_config, RunConfig};
use varimatch::io::{mesh_to_varifold, read_mesh, read_varifold, write_varifold};
use varimatch::{distance_sq, inner_product, quantize, register, total_mass, DiscreteVarifold, Error};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Parse = 4,
    Io = 5,
    Numerical = 6,
    Panic = 7,
}

/// A discrete oriented varifold.
pub struct VmVarifold(DiscreteVarifold);

/// Kernel, deformation and optimizer settings.
pub struct VmConfig(RunConfig);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> VmStatus {
    match e {
        Error::DimensionMismatch(_) => VmStatus::DimensionMismatch,
        Error::NonFinite(_) | Error::DegenerateFrame => VmStatus::Numerical,
        Error::Parse { .. } | Error::Schema { .. } | Error::Json(_) => VmStatus::Parse,
        Error::Io { .. } => VmStatus::Io,
        _ => VmStatus::InvalidArgument,
    }
}

struct Fail(VmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(VmStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            VmStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            VmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail(VmStatus::InvalidArgument, format!("`{what}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn config(cfg: *const VmConfig) -> RunConfig {
    cfg.as_ref().map_or_else(RunConfig::default, |c| c.0.clone())
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn boxed(mu: DiscreteVarifold) -> *mut VmVarifold {
    Box::into_raw(Box::new(VmVarifold(mu)))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn vm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a varifold from `atoms` blocks of `n*(d+1)` doubles: the position, then the `d` frame vectors.
///
/// # Safety
/// `data` must point to `atoms*n*(d+1)` doubles (it may be null when `atoms` is 0); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vm_varifold_new(
    n: usize,
    d: usize,
    data: *const f64,
    atoms: usize,
    out: *mut *mut VmVarifold,
) -> VmStatus {
    guard(|| {
        let values = if atoms == 0 {
            Vec::new()
        } else if data.is_null() {
            return Err(null("data"));
        } else {
            let len = n.checked_mul(d + 1).and_then(|b| b.checked_mul(atoms)).ok_or_else(|| {
                Fail(VmStatus::InvalidArgument, "size overflow".into())
            })?;
            std::slice::from_raw_parts(data, len).to_vec()
        };
        let mu = DiscreteVarifold::from_flat(n, d, values)?;
        put(out, boxed(mu), "out")
    })
}

/// Reads a varifold JSON file.
///
/// # Safety
/// `file` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vm_varifold_read(file: *const c_char, out: *mut *mut VmVarifold) -> VmStatus {
    guard(|| {
        let mu = read_varifold(path(file, "file")?)?;
        put(out, boxed(mu), "out")
    })
}

/// Converts an OBJ triangle mesh or CSV polyline file.
///
/// # Safety
/// As [`vm_varifold_read`].
#[no_mangle]
pub unsafe extern "C" fn vm_varifold_from_mesh(file: *const c_char, out: *mut *mut VmVarifold) -> VmStatus {
    guard(|| {
        let mu = mesh_to_varifold(&read_mesh(path(file, "file")?)?)?;
        put(out, boxed(mu), "out")
    })
}

/// # Safety
/// `mu` must be a live handle and `file` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vm_varifold_write(mu: *const VmVarifold, file: *const c_char) -> VmStatus {
    guard(|| {
        write_varifold(&deref(mu, "mu")?.0, path(file, "file")?)?;
        Ok(())
    })
}

/// # Safety
/// `mu` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vm_varifold_free(mu: *mut VmVarifold) {
    if !mu.is_null() {
        drop(Box::from_raw(mu));
    }
}

/// Writes the atom count, ambient dimension and frame dimension.
///
/// # Safety
/// `mu` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn vm_varifold_shape(
    mu: *const VmVarifold,
    atoms: *mut usize,
    n: *mut usize,
    d: *mut usize,
) -> VmStatus {
    guard(|| {
        let mu = &deref(mu, "mu")?.0;
        put(atoms, mu.len(), "atoms")?;
        put(n, mu.n(), "n")?;
        put(d, mu.d(), "d")
    })
}

/// Copies the flat atom data into `buf`, which holds `len` doubles.
///
/// # Safety
/// `mu` must be a live handle and `buf` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vm_varifold_data(mu: *const VmVarifold, buf: *mut f64, len: usize) -> VmStatus {
    guard(|| {
        let flat = deref(mu, "mu")?.0.as_flat();
        if len < flat.len() {
            return Err(Fail(VmStatus::InvalidArgument, format!("buffer holds {len} values, need {}", flat.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(flat.as_ptr(), buf, flat.len());
        Ok(())
    })
}

/// Total mass, the sum of frame weights.
///
/// # Safety
/// `mu` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vm_varifold_mass(mu: *const VmVarifold, out: *mut f64) -> VmStatus {
    guard(|| put(out, total_mass(&deref(mu, "mu")?.0), "out"))
}

/// Default settings.
#[no_mangle]
pub extern "C" fn vm_config_default() -> *mut VmConfig {
    Box::into_raw(Box::new(VmConfig(RunConfig::default())))
}

/// Parses settings from JSON text (the run configuration format).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vm_config_parse(json: *const c_char, out: *mut *mut VmConfig) -> VmStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|_| Fail(VmStatus::InvalidArgument, "json is not UTF-8".into()))?;
        let cfg = RunConfig::from_json(text)?;
        put(out, Box::into_raw(Box::new(VmConfig(cfg))), "out")
    })
}

/// # Safety
/// As [`vm_config_parse`], with a file path.
#[no_mangle]
pub unsafe extern "C" fn vm_config_read(file: *const c_char, out: *mut *mut VmConfig) -> VmStatus {
    guard(|| {
        let cfg = read_config(path(file, "file")?)?;
        put(out, Box::into_raw(Box::new(VmConfig(cfg))), "out")
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vm_config_free(cfg: *mut VmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Kernel inner product. A null `cfg` selects the defaults.
///
/// # Safety
/// `a`, `b` must be live handles, `cfg` null or live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vm_inner_product(
    a: *const VmVarifold,
    b: *const VmVarifold,
    cfg: *const VmConfig,
    out: *mut f64,
) -> VmStatus {
    guard(|| {
        let k = config(cfg).varifold_kernel()?;
        put(out, inner_product(&deref(a, "a")?.0, &deref(b, "b")?.0, &k)?, "out")
    })
}

/// Squared kernel distance.
///
/// # Safety
/// As [`vm_inner_product`].
#[no_mangle]
pub unsafe extern "C" fn vm_distance_sq(
    a: *const VmVarifold,
    b: *const VmVarifold,
    cfg: *const VmConfig,
    out: *mut f64,
) -> VmStatus {
    guard(|| {
        let k = config(cfg).varifold_kernel()?;
        put(out, distance_sq(&deref(a, "a")?.0, &deref(b, "b")?.0, &k)?, "out")
    })
}

/// Quantizes `target` with at most `atoms` Diracs and `restarts` restarts.
/// `rel_error` may be null.
///
/// # Safety
/// `target` must be live, `cfg` null or live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vm_quantize(
    target: *const VmVarifold,
    cfg: *const VmConfig,
    atoms: usize,
    restarts: usize,
    out: *mut *mut VmVarifold,
    rel_error: *mut f64,
) -> VmStatus {
    guard(|| {
        let run = config(cfg);
        let mut q = varimatch::QuantizeConfig::new(atoms);
        q.restarts = restarts;
        q.seed = run.seed;
        q.optimizer = run.optimizer.lbfgs();
        let rep = quantize(&deref(target, "target")?.0, &q, &run.varifold_kernel()?)?;
        if !rel_error.is_null() {
            rel_error.write(rep.rel_error);
        }
        put(out, boxed(rep.result), "out")
    })
}

/// Registers `source` onto `target` and returns the deformed source. `energy` may be null.
///
/// # Safety
/// As [`vm_quantize`].
#[no_mangle]
pub unsafe extern "C" fn vm_register(
    source: *const VmVarifold,
    target: *const VmVarifold,
    cfg: *const VmConfig,
    deformed: *mut *mut VmVarifold,
    energy: *mut f64,
) -> VmStatus {
    guard(|| {
        let reg = config(cfg).registration()?;
        let rep = register(&deref(source, "source")?.0, &deref(target, "target")?.0, &reg)?;
        if !energy.is_null() {
            energy.write(rep.energy);
        }
        put(deformed, boxed(rep.deformed), "deformed")
    })
}
