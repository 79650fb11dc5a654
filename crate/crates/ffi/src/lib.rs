//! C ABI over the weightgen library.
//!
//! Every function returns a [`WgStatus`]; on failure the message is kept
//! per thread and can be read with [`wg_last_error`]. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `*_free` function. Buffers are caller-allocated, row-major `float`s.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use weightgen::error::Error;
use weightgen::evalharness::mwu_test;
use weightgen::hyperae::format::load_ae;
use weightgen::hyperae::HyperAe;
use weightgen::samplers::{load_sampler, Fitted};
use weightgen::zoo::{Activation, Architecture};

/// Result of every call. Values 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WgStatus {
    Ok = 0,
    Error = 1,
    Config = 2,
    MissingArtifact = 3,
    Numerical = 4,
    NullPointer = 5,
    InvalidArgument = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A trained autoencoder.
pub struct WgAutoencoder(HyperAe);

/// A fitted latent sampler.
pub struct WgSampler(Fitted);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WgMwuResult {
    pub u: f64,
    pub p_value: f64,
    pub cles: f64,
    /// 1 when the p-value comes from exact enumeration.
    pub exact: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> WgStatus {
    match e {
        Error::Config { .. } => WgStatus::Config,
        Error::MissingArtifact { .. } => WgStatus::MissingArtifact,
        e if e.is_numerical() => WgStatus::Numerical,
        _ => WgStatus::Error,
    }
}

/// Runs `f`, turning errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (WgStatus, String)>) -> WgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WgStatus::Ok,
        Ok(Err((s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("panic inside weightgen".into());
            WgStatus::Panic
        }
    }
}

fn lib(e: Error) -> (WgStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (WgStatus, String) {
    (WgStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: String) -> (WgStatus, String) {
    (WgStatus::InvalidArgument, msg)
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (WgStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map(PathBuf::from).map_err(|_| invalid("path is not valid UTF-8".into()))
}

unsafe fn rows_in(data: *const f32, n: usize, dim: usize) -> Result<Vec<Vec<f32>>, (WgStatus, String)> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if data.is_null() {
        return Err(null("input"));
    }
    let flat = std::slice::from_raw_parts(data, n * dim);
    Ok(flat.chunks_exact(dim).map(<[f32]>::to_vec).collect())
}

unsafe fn rows_out(rows: &[Vec<f32>], out: *mut f32, cap: usize) -> Result<(), (WgStatus, String)> {
    let total: usize = rows.iter().map(Vec::len).sum();
    if total > cap {
        return Err((WgStatus::BufferTooSmall, format!("need {total} floats, buffer holds {cap}")));
    }
    if total == 0 {
        return Ok(());
    }
    if out.is_null() {
        return Err(null("output"));
    }
    let dst = std::slice::from_raw_parts_mut(out, total);
    for (chunk, r) in dst.chunks_exact_mut(rows[0].len()).zip(rows) {
        chunk.copy_from_slice(r);
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn wg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parameter count of the reference CNN for 1 or 3 input channels.
///
/// # Safety
/// `out` must be null or point to writable memory for one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn wg_reference_param_count(channels: usize, out: *mut usize) -> WgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = Architecture::table3(channels, Activation::Tanh).map_err(lib)?;
        *out = a.param_count();
        Ok(())
    })
}

/// Loads an autoencoder checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must point to writable
/// memory for one handle.
#[no_mangle]
pub unsafe extern "C" fn wg_ae_load(path: *const c_char, out: *mut *mut WgAutoencoder) -> WgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ae = load_ae(&path_arg(path)?).map_err(lib)?;
        *out = Box::into_raw(Box::new(WgAutoencoder(ae)));
        Ok(())
    })
}

/// Releases an autoencoder; null is ignored.
///
/// # Safety
/// `ae` must come from [`wg_ae_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wg_ae_free(ae: *mut WgAutoencoder) {
    if !ae.is_null() {
        drop(Box::from_raw(ae));
    }
}

/// Latent size and flattened weight-vector length.
///
/// # Safety
/// `ae` must be a live handle; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn wg_ae_dims(ae: *const WgAutoencoder, d_z: *mut usize, n_params: *mut usize) -> WgStatus {
    guard(|| {
        let ae = ae.as_ref().ok_or_else(|| null("ae"))?;
        if !d_z.is_null() {
            *d_z = ae.0.d_z();
        }
        if !n_params.is_null() {
            *n_params = ae.0.layout.total;
        }
        Ok(())
    })
}

/// Encodes `n` weight vectors (`n * n_params` floats) into `out`
/// (`n * d_z` floats).
///
/// # Safety
/// Buffers must hold the stated number of floats.
#[no_mangle]
pub unsafe extern "C" fn wg_ae_encode(ae: *const WgAutoencoder, weights: *const f32, n: usize, out: *mut f32, out_len: usize) -> WgStatus {
    guard(|| {
        let ae = ae.as_ref().ok_or_else(|| null("ae"))?;
        let rows = rows_in(weights, n, ae.0.layout.total)?;
        rows_out(&ae.0.encode(&rows).map_err(lib)?, out, out_len)
    })
}

/// Decodes `n` latent codes (`n * d_z` floats) into weight vectors.
///
/// # Safety
/// Buffers must hold the stated number of floats.
#[no_mangle]
pub unsafe extern "C" fn wg_ae_decode(ae: *const WgAutoencoder, z: *const f32, n: usize, out: *mut f32, out_len: usize) -> WgStatus {
    guard(|| {
        let ae = ae.as_ref().ok_or_else(|| null("ae"))?;
        let rows = rows_in(z, n, ae.0.d_z())?;
        rows_out(&ae.0.decode(&rows).map_err(lib)?, out, out_len)
    })
}

/// Loads a fitted sampler.
///
/// # Safety
/// As for [`wg_ae_load`].
#[no_mangle]
pub unsafe extern "C" fn wg_sampler_load(path: *const c_char, out: *mut *mut WgSampler) -> WgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = load_sampler(&path_arg(path)?).map_err(lib)?;
        *out = Box::into_raw(Box::new(WgSampler(s)));
        Ok(())
    })
}

/// Releases a sampler; null is ignored.
///
/// # Safety
/// `s` must come from [`wg_sampler_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wg_sampler_free(s: *mut WgSampler) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Latent dimension the sampler draws.
///
/// # Safety
/// `s` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wg_sampler_dim(s: *const WgSampler, out: *mut usize) -> WgStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("sampler"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = s.0.dim();
        Ok(())
    })
}

/// Draws `n` codes into `out` (`n * dim` floats), deterministic in `seed`.
///
/// # Safety
/// `out` must hold `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn wg_sampler_sample(s: *const WgSampler, n: usize, seed: u64, out: *mut f32, out_len: usize) -> WgStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("sampler"))?;
        rows_out(&s.0.sample(n, seed).map_err(lib)?, out, out_len)
    })
}

/// Two-sided Mann-Whitney U test of `a` against `b`.
///
/// # Safety
/// `a` and `b` must hold `na` and `nb` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wg_mwu_test(a: *const f64, na: usize, b: *const f64, nb: usize, out: *mut WgMwuResult) -> WgStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(null("a, b or out"));
        }
        let r = mwu_test(std::slice::from_raw_parts(a, na), std::slice::from_raw_parts(b, nb)).map_err(lib)?;
        *out = WgMwuResult { u: r.u, p_value: r.p_value, cles: r.cles, exact: r.exact as i32 };
        Ok(())
    })
}
