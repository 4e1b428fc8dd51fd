//! C ABI for reading and writing velocity volumes, loading generator
//! checkpoints and running super-resolution inference.
//!
//! Handles are opaque heap objects owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns a
//! [`FlowsrStatus`]; the message for the most recent failure on the calling
//! thread is available through [`flowsr_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use flowsr::io::{f4d, load_params};
use flowsr::net::{GeneratorSpec, ParamSet};
use flowsr::volume::{Dims, VelocityVolume};
use flowsr::Error;

/// Result codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowsrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    InvalidInput = 5,
    Numerical = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Time-resolved velocity field on a regular grid.
pub struct FlowsrVolume {
    inner: VelocityVolume,
}

/// Generator weights with their inferred architecture.
pub struct FlowsrGenerator {
    params: ParamSet,
    spec: GeneratorSpec,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> FlowsrStatus {
    match e {
        Error::Io { .. } => FlowsrStatus::Io,
        Error::Format { .. } => FlowsrStatus::Format,
        Error::Numerical(_) => FlowsrStatus::Numerical,
        _ => FlowsrStatus::InvalidInput,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (FlowsrStatus, String)>) -> FlowsrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FlowsrStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FlowsrStatus::Panic
        }
    }
}

fn lib(e: Error) -> (FlowsrStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (FlowsrStatus, String) {
    (FlowsrStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (FlowsrStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (FlowsrStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (FlowsrStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (FlowsrStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn flowsr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL after a
/// successful call. The pointer stays valid until the next call on the
/// same thread.
#[no_mangle]
pub extern "C" fn flowsr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Builds a volume from `len` interleaved values laid out as
/// (t, z, y, x, component).
///
/// # Safety
/// `data` must point to `len` readable doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flowsr_volume_new(
    nx: usize,
    ny: usize,
    nz: usize,
    nt: usize,
    spacing: f64,
    dt: f64,
    data: *const f64,
    len: usize,
    out: *mut *mut FlowsrVolume,
) -> FlowsrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if data.is_null() {
            return Err(null("data"));
        }
        let values = std::slice::from_raw_parts(data, len).to_vec();
        let inner = VelocityVolume::from_vec(Dims::new(nx, ny, nz), nt, spacing, dt, values).map_err(lib)?;
        *out = Box::into_raw(Box::new(FlowsrVolume { inner }));
        Ok(())
    })
}

/// Reads a velocity volume from an F4D file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flowsr_volume_read(path: *const c_char, out: *mut *mut FlowsrVolume) -> FlowsrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = f4d::read_velocity(&path_arg(path, "path")?).map_err(lib)?;
        *out = Box::into_raw(Box::new(FlowsrVolume { inner }));
        Ok(())
    })
}

/// Writes a volume to an F4D file. Values are stored in single precision.
///
/// # Safety
/// `volume` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn flowsr_volume_write(volume: *const FlowsrVolume, path: *const c_char) -> FlowsrStatus {
    guard(|| {
        let v = handle(volume, "volume")?;
        f4d::write_velocity(&path_arg(path, "path")?, &v.inner).map_err(lib)
    })
}

/// Reports grid size, frame count and spacing. Any output pointer may be
/// NULL.
///
/// # Safety
/// `volume` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn flowsr_volume_shape(
    volume: *const FlowsrVolume,
    nx: *mut usize,
    ny: *mut usize,
    nz: *mut usize,
    nt: *mut usize,
    spacing: *mut f64,
    dt: *mut f64,
) -> FlowsrStatus {
    guard(|| {
        let v = &handle(volume, "volume")?.inner;
        let d = v.dims();
        for (p, x) in [(nx, d.nx), (ny, d.ny), (nz, d.nz), (nt, v.nt())] {
            if let Some(p) = p.as_mut() {
                *p = x;
            }
        }
        if let Some(p) = spacing.as_mut() {
            *p = v.spacing;
        }
        if let Some(p) = dt.as_mut() {
            *p = v.dt;
        }
        Ok(())
    })
}

/// Number of doubles held by the volume.
///
/// # Safety
/// `volume` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn flowsr_volume_len(volume: *const FlowsrVolume) -> usize {
    volume.as_ref().map_or(0, |v| v.inner.data().len())
}

/// Copies the interleaved values into `buf`, which must hold at least
/// [`flowsr_volume_len`] doubles.
///
/// # Safety
/// `volume` must be a live handle and `buf` must point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn flowsr_volume_copy(volume: *const FlowsrVolume, buf: *mut f64, len: usize) -> FlowsrStatus {
    guard(|| {
        let v = handle(volume, "volume")?.inner.data();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < v.len() {
            return Err((
                FlowsrStatus::BufferTooSmall,
                format!("buffer holds {len} values, volume has {}", v.len()),
            ));
        }
        std::ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        Ok(())
    })
}

/// Releases a volume. NULL is ignored.
///
/// # Safety
/// `volume` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn flowsr_volume_free(volume: *mut FlowsrVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// Loads generator weights from an F4DW checkpoint and checks that they
/// form a complete generator.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flowsr_generator_load(path: *const c_char, out: *mut *mut FlowsrGenerator) -> FlowsrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let params = load_params(&path_arg(path, "path")?).map_err(lib)?;
        let spec = GeneratorSpec::infer(&params).map_err(lib)?;
        *out = Box::into_raw(Box::new(FlowsrGenerator { params, spec }));
        Ok(())
    })
}

/// Trainable parameter count, or 0 for NULL.
///
/// # Safety
/// `generator` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn flowsr_generator_param_count(generator: *const FlowsrGenerator) -> usize {
    generator.as_ref().map_or(0, |g| g.spec.param_count())
}

/// Releases a generator. NULL is ignored.
///
/// # Safety
/// `generator` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn flowsr_generator_free(generator: *mut FlowsrGenerator) {
    if !generator.is_null() {
        drop(Box::from_raw(generator));
    }
}

/// Super-resolves a low-resolution volume to twice its grid size by tiled
/// inference. A NULL generator selects trilinear upsampling.
///
/// # Safety
/// `lr` must be a live handle, `generator` a live handle or NULL, and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn flowsr_infer(
    generator: *const FlowsrGenerator,
    lr: *const FlowsrVolume,
    out: *mut *mut FlowsrVolume,
) -> FlowsrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let lr = &handle(lr, "lr")?.inner;
        let params = generator.as_ref().map(|g| &g.params);
        let inner = flowsr::cli::infer_with(params, lr).map_err(lib)?;
        *out = Box::into_raw(Box::new(FlowsrVolume { inner }));
        Ok(())
    })
}
