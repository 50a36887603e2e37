//! C ABI for the sphere random field sampler.
//!
//! All objects are opaque handles created and destroyed through this API;
//! every fallible call returns an [`SgrfStatus`] and writes its result
//! through an out-pointer. Handles are not thread-safe for concurrent
//! mutation, but distinct handles are independent, and a bank may be
//! shared read-only across threads generating with distinct streams.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use num_complex::Complex64;
use sgrf::error::ErrorClass;
use sgrf::filterbank::{precompute_with_options, FilterBank, LatitudeGrid, PrecomputeOptions};
use sgrf::sampler::{FieldSample, FieldSampler, RngStream};
use sgrf::specfun::DEFAULT_TERM_CAP;
use sgrf::spectrum::PowerSpectrum;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgrfStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Invalid sizes, resolutions or spectrum parameters.
    InvalidArgument = 2,
    /// Numerical failure (spectrum rejected, covariance indefinite, ...).
    Numeric = 3,
    /// File I/O or format failure.
    Io = 4,
    /// A path argument was not valid UTF-8.
    Utf8 = 5,
    /// Internal panic caught at the boundary.
    Panic = 6,
}

/// Angular power spectrum handle.
pub struct SgrfSpectrum {
    inner: PowerSpectrum,
}

/// Pre-computed filter bank handle.
pub struct SgrfBank {
    inner: FilterBank,
}

/// One field realization handle.
pub struct SgrfField {
    inner: FieldSample,
}

fn status_of(e: &sgrf::Error) -> SgrfStatus {
    match e.class() {
        ErrorClass::Usage => SgrfStatus::InvalidArgument,
        ErrorClass::Numeric => SgrfStatus::Numeric,
        ErrorClass::Io => SgrfStatus::Io,
    }
}

fn guarded(f: impl FnOnce() -> SgrfStatus) -> SgrfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => SgrfStatus::Panic,
    }
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> SgrfStatus {
    unsafe { *out = Box::into_raw(Box::new(value)) };
    SgrfStatus::Ok
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn sgrf_status_name(status: SgrfStatus) -> *const c_char {
    let name: &'static [u8] = match status {
        SgrfStatus::Ok => b"ok\0",
        SgrfStatus::NullPointer => b"null_pointer\0",
        SgrfStatus::InvalidArgument => b"invalid_argument\0",
        SgrfStatus::Numeric => b"numeric\0",
        SgrfStatus::Io => b"io\0",
        SgrfStatus::Utf8 => b"utf8\0",
        SgrfStatus::Panic => b"panic\0",
    };
    name.as_ptr() as *const c_char
}

/// Builds the order-2 spectrum C_l = (a2 + l²(l+1)²)^{-1}.
///
/// # Safety
/// `out` must be a valid pointer; the returned handle must be released
/// with [`sgrf_spectrum_free`].
#[no_mangle]
pub unsafe extern "C" fn sgrf_spectrum_from_squared_amplitude(
    a2: f64,
    out: *mut *mut SgrfSpectrum,
) -> SgrfStatus {
    if out.is_null() {
        return SgrfStatus::NullPointer;
    }
    guarded(|| match PowerSpectrum::from_squared_amplitude(a2) {
        Ok(inner) => unsafe { write_out(out, SgrfSpectrum { inner }) },
        Err(e) => status_of(&e),
    })
}

/// Builds a spectrum from `len` operator roots kappa_i given as parallel
/// real/imaginary arrays.
///
/// # Safety
/// `re` and `im` must point to `len` readable doubles; `out` must be a
/// valid pointer. Release the handle with [`sgrf_spectrum_free`].
#[no_mangle]
pub unsafe extern "C" fn sgrf_spectrum_from_kappas(
    re: *const f64,
    im: *const f64,
    len: usize,
    out: *mut *mut SgrfSpectrum,
) -> SgrfStatus {
    if re.is_null() || im.is_null() || out.is_null() {
        return SgrfStatus::NullPointer;
    }
    let res = unsafe { std::slice::from_raw_parts(re, len) };
    let ims = unsafe { std::slice::from_raw_parts(im, len) };
    guarded(|| {
        let kappas: Vec<Complex64> = res
            .iter()
            .zip(ims)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect();
        match PowerSpectrum::from_kappas(&kappas) {
            Ok(inner) => unsafe { write_out(out, SgrfSpectrum { inner }) },
            Err(e) => status_of(&e),
        }
    })
}

/// Operator order M, or 0 for a null handle.
///
/// # Safety
/// `spectrum` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn sgrf_spectrum_order(spectrum: *const SgrfSpectrum) -> usize {
    if spectrum.is_null() {
        return 0;
    }
    unsafe { &*spectrum }.inner.order()
}

/// Angular power C_l; NaN for a null handle.
///
/// # Safety
/// `spectrum` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn sgrf_spectrum_angular_power(spectrum: *const SgrfSpectrum, l: u32) -> f64 {
    if spectrum.is_null() {
        return f64::NAN;
    }
    unsafe { &*spectrum }.inner.angular_power(l)
}

/// # Safety
/// `spectrum` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn sgrf_spectrum_free(spectrum: *mut SgrfSpectrum) {
    if !spectrum.is_null() {
        drop(unsafe { Box::from_raw(spectrum) });
    }
}

/// Pre-computes the filter bank on the grid with 2n+1 latitudes, band
/// limit `m_max` and ring length `n_phi` (>= 2 m_max). `threads` = 0 or 1
/// runs serially; `term_cap` = 0 uses the default hypergeometric cap.
///
/// # Safety
/// `spectrum` must be a live handle; `out` must be a valid pointer. The
/// returned handle must be released with [`sgrf_bank_free`].
#[no_mangle]
pub unsafe extern "C" fn sgrf_bank_build(
    spectrum: *const SgrfSpectrum,
    n: usize,
    m_max: usize,
    n_phi: usize,
    threads: usize,
    term_cap: usize,
    out: *mut *mut SgrfBank,
) -> SgrfStatus {
    if spectrum.is_null() || out.is_null() {
        return SgrfStatus::NullPointer;
    }
    let spec = unsafe { &*spectrum };
    guarded(|| {
        let grid = match LatitudeGrid::new(n, m_max, n_phi) {
            Ok(g) => g,
            Err(e) => return status_of(&e),
        };
        let opts = PrecomputeOptions {
            term_cap: if term_cap == 0 {
                DEFAULT_TERM_CAP
            } else {
                term_cap
            },
            threads: threads.max(1),
        };
        match precompute_with_options(&spec.inner, &grid, &opts) {
            Ok(inner) => unsafe { write_out(out, SgrfBank { inner }) },
            Err(e) => status_of(&e),
        }
    })
}

/// # Safety
/// `bank` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sgrf_bank_save(bank: *const SgrfBank, path: *const c_char) -> SgrfStatus {
    if bank.is_null() || path.is_null() {
        return SgrfStatus::NullPointer;
    }
    let bank = unsafe { &*bank };
    let path = match unsafe { CStr::from_ptr(path) }.to_str() {
        Ok(p) => p,
        Err(_) => return SgrfStatus::Utf8,
    };
    guarded(|| match bank.inner.save(path) {
        Ok(()) => SgrfStatus::Ok,
        Err(e) => status_of(&e),
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
/// The returned handle must be released with [`sgrf_bank_free`].
#[no_mangle]
pub unsafe extern "C" fn sgrf_bank_load(
    path: *const c_char,
    out: *mut *mut SgrfBank,
) -> SgrfStatus {
    if path.is_null() || out.is_null() {
        return SgrfStatus::NullPointer;
    }
    let path = match unsafe { CStr::from_ptr(path) }.to_str() {
        Ok(p) => p,
        Err(_) => return SgrfStatus::Utf8,
    };
    guarded(|| match FilterBank::load(path) {
        Ok(inner) => unsafe { write_out(out, SgrfBank { inner }) },
        Err(e) => status_of(&e),
    })
}

/// Latitude count (2n+1) of the bank's grid, or 0 for a null handle.
///
/// # Safety
/// `bank` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn sgrf_bank_rows(bank: *const SgrfBank) -> usize {
    if bank.is_null() {
        return 0;
    }
    unsafe { &*bank }.inner.grid().rows()
}

/// Ring length n_phi of the bank's grid, or 0 for a null handle.
///
/// # Safety
/// `bank` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn sgrf_bank_cols(bank: *const SgrfBank) -> usize {
    if bank.is_null() {
        return 0;
    }
    unsafe { &*bank }.inner.grid().n_phi()
}

/// # Safety
/// `bank` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn sgrf_bank_free(bank: *mut SgrfBank) {
    if !bank.is_null() {
        drop(unsafe { Box::from_raw(bank) });
    }
}

/// Generates one field sample from the (seed, stream) random substream.
/// Identical inputs give identical fields on every platform.
///
/// # Safety
/// `bank` must be a live handle; `out` must be a valid pointer. The
/// returned handle must be released with [`sgrf_field_free`].
#[no_mangle]
pub unsafe extern "C" fn sgrf_field_generate(
    bank: *const SgrfBank,
    seed: u64,
    stream: u64,
    out: *mut *mut SgrfField,
) -> SgrfStatus {
    if bank.is_null() || out.is_null() {
        return SgrfStatus::NullPointer;
    }
    let bank = unsafe { &*bank };
    guarded(|| {
        let mut rng = RngStream::substream(seed, stream);
        let sample = FieldSampler::new(&bank.inner).sample(&mut rng);
        unsafe { write_out(out, SgrfField { inner: sample }) }
    })
}

/// Latitude count of the field, or 0 for a null handle.
///
/// # Safety
/// `field` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn sgrf_field_rows(field: *const SgrfField) -> usize {
    if field.is_null() {
        return 0;
    }
    unsafe { &*field }.inner.rows()
}

/// Ring length of the field, or 0 for a null handle.
///
/// # Safety
/// `field` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn sgrf_field_cols(field: *const SgrfField) -> usize {
    if field.is_null() {
        return 0;
    }
    unsafe { &*field }.inner.cols()
}

/// Borrowed pointer to the row-major rows x cols field values; valid until
/// the field handle is released. Null for a null handle.
///
/// # Safety
/// `field` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn sgrf_field_data(field: *const SgrfField) -> *const f64 {
    if field.is_null() {
        return std::ptr::null();
    }
    unsafe { &*field }.inner.data().as_ptr()
}

/// Writes the binary field format (length-prefixed JSON header plus
/// float64 payload).
///
/// # Safety
/// `field` must be a live handle; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sgrf_field_save(
    field: *const SgrfField,
    path: *const c_char,
) -> SgrfStatus {
    if field.is_null() || path.is_null() {
        return SgrfStatus::NullPointer;
    }
    let field = unsafe { &*field };
    let path = match unsafe { CStr::from_ptr(path) }.to_str() {
        Ok(p) => p,
        Err(_) => return SgrfStatus::Utf8,
    };
    guarded(|| match field.inner.save(path) {
        Ok(()) => SgrfStatus::Ok,
        Err(e) => status_of(&e),
    })
}

/// # Safety
/// `field` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn sgrf_field_free(field: *mut SgrfField) {
    if !field.is_null() {
        drop(unsafe { Box::from_raw(field) });
    }
}
