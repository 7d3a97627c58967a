//! Exercises the C ABI from Rust: handle lifecycle, status codes, and
//! agreement with the direct API.

use mfglab_ffi::*;
use std::ffi::{CStr, CString};

fn default_cfg() -> MfglSolverConfig {
    let mut cfg = std::mem::MaybeUninit::<MfglSolverConfig>::uninit();
    assert_eq!(
        mfgl_solver_config_default(cfg.as_mut_ptr()),
        MfglStatus::Ok
    );
    unsafe { cfg.assume_init() }
}

#[test]
fn model_measure_solve_lambda_roundtrip() {
    unsafe {
        let spec = CString::new(
            r#"{"family":"riccati_lq","params":{"c0":1.0,"gamma":2.0},"beta":0.0}"#,
        )
        .unwrap();
        let mut model: *mut MfglModel = std::ptr::null_mut();
        assert_eq!(mfgl_model_new_json(spec.as_ptr(), &mut model), MfglStatus::Ok);

        let points = [0.6f64, 0.8, 1.0, 1.2, 1.4];
        let mut rho0: *mut MfglMeasure = std::ptr::null_mut();
        assert_eq!(
            mfgl_measure_new(1, 5, points.as_ptr(), std::ptr::null(), &mut rho0),
            MfglStatus::Ok
        );

        let mut cfg = default_cfg();
        cfg.dt = 0.02;
        let mut sol: *mut MfglSolution = std::ptr::null_mut();
        assert_eq!(
            mfgl_solve_particles(model, rho0, 4.0, &cfg, &mut sol),
            MfglStatus::Ok
        );
        let n = mfgl_solution_n_times(sol);
        assert_eq!(n, 201);
        let times = mfgl_solution_times(sol);
        assert!((*times.add(n - 1) - 4.0).abs() < 1e-12);

        let mut lam = f64::NAN;
        assert_eq!(mfgl_lambda_t(model, sol, &mut lam), MfglStatus::Ok);
        assert!(lam.is_finite() && lam >= 0.0 && lam < 0.1);

        let mut value = f64::NAN;
        assert_eq!(
            mfgl_value_at(model, sol, 0.0, [1.0f64].as_ptr(), &cfg, &mut value),
            MfglStatus::Ok
        );
        // u(0, 1) = P(0)/2 with P(0) close to sqrt(c0) = 1 at this horizon.
        assert!((value - 0.5).abs() < 0.01, "value {value}");

        mfgl_solution_free(sol);
        mfgl_measure_free(rho0);
        mfgl_model_free(model);
    }
}

#[test]
fn wasserstein_and_c0_through_abi() {
    unsafe {
        let a_pts = [0.0f64, 1.0];
        let b_pts = [1.0f64, 2.0];
        let mut a: *mut MfglMeasure = std::ptr::null_mut();
        let mut b: *mut MfglMeasure = std::ptr::null_mut();
        mfgl_measure_new(1, 2, a_pts.as_ptr(), std::ptr::null(), &mut a);
        mfgl_measure_new(1, 2, b_pts.as_ptr(), std::ptr::null(), &mut b);
        let mut d = f64::NAN;
        assert_eq!(mfgl_wasserstein(a, b, 2, &mut d), MfglStatus::Ok);
        assert!((d - 1.0).abs() < 1e-12);

        let spec = CString::new(
            r#"{"family":"mechanical_quadratic","params":{"c0":1.0,"a":0.4,"gamma":1.0},"beta":0.0}"#,
        )
        .unwrap();
        let mut model: *mut MfglModel = std::ptr::null_mut();
        assert_eq!(mfgl_model_new_json(spec.as_ptr(), &mut model), MfglStatus::Ok);
        let mut c0 = f64::NAN;
        assert_eq!(
            mfgl_estimate_c0(model, 48, 12, 3, &mut c0),
            MfglStatus::Ok
        );
        assert!(c0 > 0.9 && c0 <= 1.0 + 1e-9);

        mfgl_model_free(model);
        mfgl_measure_free(a);
        mfgl_measure_free(b);
    }
}

#[test]
fn error_paths_set_status_and_message() {
    unsafe {
        // Null pointers.
        let mut out: *mut MfglModel = std::ptr::null_mut();
        assert_eq!(
            mfgl_model_new_json(std::ptr::null(), &mut out),
            MfglStatus::NullPointer
        );
        // Bad JSON.
        let bad = CString::new("{not json").unwrap();
        assert_eq!(
            mfgl_model_new_json(bad.as_ptr(), &mut out),
            MfglStatus::InvalidArgument
        );
        let msg = CStr::from_ptr(mfgl_last_error_message());
        assert!(!msg.to_bytes().is_empty());
        // Invalid parameters surface the right status.
        let neg = CString::new(r#"{"family":"riccati_lq","params":{"c0":-1.0}}"#).unwrap();
        assert_eq!(
            mfgl_model_new_json(neg.as_ptr(), &mut out),
            MfglStatus::InvalidArgument
        );
        // Dimension mismatch through the measure constructor.
        let pts = [0.0f64; 3];
        let mut m: *mut MfglMeasure = std::ptr::null_mut();
        let w = [0.5f64, 0.4]; // does not sum to 1
        assert_eq!(
            mfgl_measure_new(1, 2, pts.as_ptr(), w.as_ptr(), &mut m),
            MfglStatus::DimensionMismatch
        );
    }
}
