use std::ffi::{c_char, CStr, CString};
use std::ptr;

use atomdl_ffi::*;

fn last_error() -> String {
    let len = atomdl_last_error_length();
    let mut buf = vec![0 as c_char; len + 1];
    let status = unsafe { atomdl_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(status, AtomdlStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn small_options(mode: AtomdlMode) -> AtomdlFitOptions {
    let mut opts = unsafe {
        let mut o = std::mem::zeroed::<AtomdlFitOptions>();
        assert_eq!(atomdl_fit_options_default(&mut o), AtomdlStatus::Ok);
        o
    };
    opts.mode = mode as i32;
    opts.k = 6;
    opts.n_outer = 5;
    opts.n_inner = 5;
    opts
}

#[test]
fn defaults_match_the_library() {
    let opts = small_options(AtomdlMode::AtomAssisted);
    assert_eq!(opts.lambda, 0.1);
    assert_eq!(opts.c_delta, 0.2);
    assert_eq!(opts.c_d, 1.0);
    assert_eq!(opts.threshold, AtomdlThreshold::PaperLiteral as i32);
}

#[test]
fn dataset_round_trip_and_fit() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(atomdl_dataset_generate_default(3, &mut ds), AtomdlStatus::Ok);
        let (mut t, mut n, mut k) = (0, 0, 0);
        assert_eq!(atomdl_dataset_shape(ds, &mut t, &mut n, &mut k), AtomdlStatus::Ok);
        assert_eq!((t, n, k), (200, 1600, 20));

        let mut x = vec![0.0; t * n];
        assert_eq!(atomdl_dataset_copy_x(ds, x.as_mut_ptr(), x.len()), AtomdlStatus::Ok);
        let mut anchor = vec![0.0; t];
        assert_eq!(atomdl_dataset_copy_task_anchor(ds, anchor.as_mut_ptr(), t), AtomdlStatus::Ok);
        assert!((anchor.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);

        let opts = small_options(AtomdlMode::Sdl);
        let mut fit = ptr::null_mut();
        let status = atomdl_fit_run(x.as_ptr(), t, n, anchor.as_ptr(), 1, &opts, &mut fit);
        assert_eq!(status, AtomdlStatus::Ok, "{}", last_error());

        let (mut ft, mut fk, mut fnv, mut iters) = (0, 0, 0, 0);
        assert_eq!(atomdl_fit_shape(fit, &mut ft, &mut fk, &mut fnv, &mut iters), AtomdlStatus::Ok);
        assert_eq!((ft, fk, fnv, iters), (t, 6, n, 5));

        let mut d = vec![0.0; t * fk];
        assert_eq!(atomdl_fit_copy_dictionary(fit, d.as_mut_ptr(), d.len()), AtomdlStatus::Ok);
        for (i, a) in anchor.iter().enumerate() {
            assert_eq!(d[i * fk], *a, "SDL keeps the anchor column");
        }
        let mut s = vec![0.0; fk * n];
        assert_eq!(atomdl_fit_copy_coefficients(fit, s.as_mut_ptr(), s.len()), AtomdlStatus::Ok);
        let mut obj = vec![0.0; iters];
        assert_eq!(atomdl_fit_copy_objective(fit, obj.as_mut_ptr(), iters), AtomdlStatus::Ok);
        assert!(obj.iter().all(|v| v.is_finite()));

        let mut feasible = false;
        assert_eq!(atomdl_fit_is_feasible(fit, &mut feasible), AtomdlStatus::Ok);
        assert!(feasible);
        let (mut r, mut e) = (0.0, 0.0);
        assert_eq!(atomdl_fit_score_task(fit, ds, &mut r, &mut e), AtomdlStatus::Ok);
        assert!((0.0..=1.0).contains(&e));
        assert!((1.0 - r * r - e).abs() < 1e-12);

        atomdl_fit_free(fit);
        atomdl_dataset_free(ds);
    }
}

#[test]
fn errors_are_reported_with_messages() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(atomdl_dataset_generate_default(0, ptr::null_mut()), AtomdlStatus::NullPointer);
        assert!(last_error().contains("out"));

        let bad = CString::new("{ not json").unwrap();
        assert_eq!(atomdl_dataset_generate_json(bad.as_ptr(), &mut ds), AtomdlStatus::InvalidArgument);
        assert!(!last_error().is_empty());
        assert!(ds.is_null());

        let missing = CString::new("/nonexistent/bundle").unwrap();
        assert_eq!(atomdl_dataset_load(missing.as_ptr(), &mut ds), AtomdlStatus::Io);
        assert!(last_error().contains("/nonexistent/bundle"));

        assert_eq!(atomdl_dataset_generate_default(1, &mut ds), AtomdlStatus::Ok);
        assert_eq!(atomdl_last_error_length(), 0);
        let mut small = [0.0; 4];
        assert_eq!(atomdl_dataset_copy_x(ds, small.as_mut_ptr(), 4), AtomdlStatus::BufferTooSmall);
        atomdl_dataset_free(ds);

        let mut opts = small_options(AtomdlMode::Blind);
        opts.mode = 42;
        let x = [1.0, 0.0, 0.0, 1.0];
        let mut fit = ptr::null_mut();
        assert_eq!(atomdl_fit_run(x.as_ptr(), 2, 2, ptr::null(), 0, &opts, &mut fit), AtomdlStatus::InvalidArgument);
        assert!(last_error().contains("mode"));

        let opts = small_options(AtomdlMode::AtomAssisted);
        let anchors = [1.0, 0.0, 0.0];
        assert_eq!(atomdl_fit_run(x.as_ptr(), 2, 2, anchors.as_ptr(), 1, &opts, &mut fit), AtomdlStatus::Ok);
        atomdl_fit_free(fit);
    }
}

#[test]
fn zero_data_gives_zero_code() {
    let opts = small_options(AtomdlMode::Blind);
    let x = [0.0; 6];
    let mut fit = ptr::null_mut();
    unsafe {
        assert_eq!(atomdl_fit_run(x.as_ptr(), 3, 2, ptr::null(), 0, &opts, &mut fit), AtomdlStatus::Ok);
        let mut s = vec![1.0; 6 * 2];
        assert_eq!(atomdl_fit_copy_coefficients(fit, s.as_mut_ptr(), s.len()), AtomdlStatus::Ok);
        assert!(s.iter().all(|v| *v == 0.0));
        atomdl_fit_free(fit);
    }
}

#[test]
fn free_accepts_null() {
    unsafe {
        atomdl_fit_free(ptr::null_mut());
        atomdl_dataset_free(ptr::null_mut());
    }
}

#[test]
fn header_is_generated_and_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/atomdl.h")).unwrap();
    for name in [
        "typedef struct AtomdlDataset AtomdlDataset",
        "typedef struct AtomdlFit AtomdlFit",
        "ATOMDL_STATUS_NUMERICAL = 3",
        "atomdl_fit_run(",
        "atomdl_last_error_message(",
        "atomdl_dataset_free(",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
