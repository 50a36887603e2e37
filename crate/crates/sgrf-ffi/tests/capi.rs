//! Exercises the C ABI the way a foreign binding would: through raw
//! pointers, out-parameters and status codes.

use std::ffi::CString;
use std::ptr;

use sgrf_ffi::*;

fn c_name(status: SgrfStatus) -> &'static str {
    unsafe { std::ffi::CStr::from_ptr(sgrf_status_name(status)) }
        .to_str()
        .unwrap()
}

#[test]
fn spectrum_lifecycle_and_values() {
    unsafe {
        let mut spec: *mut SgrfSpectrum = ptr::null_mut();
        let st = sgrf_spectrum_from_squared_amplitude(10.0, &mut spec);
        assert_eq!(st, SgrfStatus::Ok);
        assert!(!spec.is_null());
        assert_eq!(sgrf_spectrum_order(spec), 2);
        let c0 = sgrf_spectrum_angular_power(spec, 0);
        assert!((c0 - 0.1).abs() < 1e-12);
        sgrf_spectrum_free(spec);
    }
}

#[test]
fn spectrum_error_statuses() {
    unsafe {
        let mut spec: *mut SgrfSpectrum = ptr::null_mut();
        assert_eq!(
            sgrf_spectrum_from_squared_amplitude(-1.0, &mut spec),
            SgrfStatus::InvalidArgument
        );
        assert_eq!(
            sgrf_spectrum_from_squared_amplitude(10.0, ptr::null_mut()),
            SgrfStatus::NullPointer
        );
        // Duplicate kappas are a numeric/spectrum failure.
        let re = [1.0f64, 1.0];
        let im = [0.0f64, 0.0];
        assert_eq!(
            sgrf_spectrum_from_kappas(re.as_ptr(), im.as_ptr(), 2, &mut spec),
            SgrfStatus::Numeric
        );
        assert_eq!(c_name(SgrfStatus::Numeric), "numeric");
    }
}

#[test]
fn bank_and_field_round_trip() {
    unsafe {
        let mut spec: *mut SgrfSpectrum = ptr::null_mut();
        assert_eq!(
            sgrf_spectrum_from_squared_amplitude(10.0, &mut spec),
            SgrfStatus::Ok
        );

        let mut bank: *mut SgrfBank = ptr::null_mut();
        assert_eq!(
            sgrf_bank_build(spec, 4, 4, 8, 1, 0, &mut bank),
            SgrfStatus::Ok
        );
        assert_eq!(sgrf_bank_rows(bank), 9);
        assert_eq!(sgrf_bank_cols(bank), 8);

        // Deterministic generation through the ABI.
        let mut f1: *mut SgrfField = ptr::null_mut();
        let mut f2: *mut SgrfField = ptr::null_mut();
        assert_eq!(sgrf_field_generate(bank, 42, 7, &mut f1), SgrfStatus::Ok);
        assert_eq!(sgrf_field_generate(bank, 42, 7, &mut f2), SgrfStatus::Ok);
        let len = sgrf_field_rows(f1) * sgrf_field_cols(f1);
        assert_eq!(len, 9 * 8);
        let d1 = std::slice::from_raw_parts(sgrf_field_data(f1), len);
        let d2 = std::slice::from_raw_parts(sgrf_field_data(f2), len);
        assert_eq!(d1, d2);
        assert!(d1.iter().all(|v| v.is_finite()));
        assert!(d1.iter().any(|v| *v != 0.0));

        // Bank file round trip, then regeneration must match bit for bit.
        let dir = tempfile::tempdir().unwrap();
        let bank_path = CString::new(dir.path().join("bank.sgrf").to_str().unwrap()).unwrap();
        assert_eq!(sgrf_bank_save(bank, bank_path.as_ptr()), SgrfStatus::Ok);
        let mut loaded: *mut SgrfBank = ptr::null_mut();
        assert_eq!(
            sgrf_bank_load(bank_path.as_ptr(), &mut loaded),
            SgrfStatus::Ok
        );
        let mut f3: *mut SgrfField = ptr::null_mut();
        assert_eq!(sgrf_field_generate(loaded, 42, 7, &mut f3), SgrfStatus::Ok);
        let d3 = std::slice::from_raw_parts(sgrf_field_data(f3), len);
        assert_eq!(d1, d3);

        // Field file writing.
        let field_path = CString::new(dir.path().join("s.field").to_str().unwrap()).unwrap();
        assert_eq!(sgrf_field_save(f1, field_path.as_ptr()), SgrfStatus::Ok);
        assert!(dir.path().join("s.field").exists());

        sgrf_field_free(f1);
        sgrf_field_free(f2);
        sgrf_field_free(f3);
        sgrf_bank_free(loaded);
        sgrf_bank_free(bank);
        sgrf_spectrum_free(spec);
    }
}

#[test]
fn io_failures_surface_as_statuses() {
    unsafe {
        let mut bank: *mut SgrfBank = ptr::null_mut();
        let missing = CString::new("/definitely/not/here.sgrf").unwrap();
        assert_eq!(sgrf_bank_load(missing.as_ptr(), &mut bank), SgrfStatus::Io);
        assert!(bank.is_null());

        let mut spec: *mut SgrfSpectrum = ptr::null_mut();
        assert_eq!(
            sgrf_spectrum_from_squared_amplitude(10.0, &mut spec),
            SgrfStatus::Ok
        );
        // n_phi below the alias-free minimum is an argument error.
        assert_eq!(
            sgrf_bank_build(spec, 4, 4, 6, 1, 0, &mut bank),
            SgrfStatus::InvalidArgument
        );
        sgrf_spectrum_free(spec);
    }
}

#[test]
fn generated_header_exists() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sgrf.h");
    let text = std::fs::read_to_string(header).expect("cbindgen header present");
    for needle in [
        "SgrfStatus",
        "sgrf_bank_build",
        "sgrf_field_generate",
        "SGRF_H",
    ] {
        assert!(text.contains(needle), "header is missing {needle}");
    }
}
