//! C ABI over the mfglab core: opaque handles, integer status codes, and a
//! thread-local last-error message. Every entry point catches panics, so
//! the boundary never unwinds into foreign frames.
//!
//! Ownership rules: `*_new` functions hand out owned handles released by
//! the matching `*_free`; pointers returned by accessor functions borrow
//! from the handle and stay valid until it is freed.

use mfglab::measures::{wasserstein, EmpiricalMeasure};
use mfglab::models::{build_model, BuiltinModelSpec, MfgModel};
use mfglab::solve::{
    solve_equilibrium_grid, solve_equilibrium_particles, value_function_along,
    EquilibriumSolution, SolverConfig,
};
use mfglab::turnpike::lambda_t;
use mfglab::verify::estimate_c0;
use mfglab::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfglStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotConverged = 4,
    OutsideGrid = 5,
    MissingData = 6,
    Panic = 98,
    Unknown = 99,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").expect("empty"));
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("nul-free");
    });
}

fn status_of(err: &Error) -> MfglStatus {
    match err {
        Error::DimensionMismatch(_) | Error::UnequalSupportSize(_, _) => {
            MfglStatus::DimensionMismatch
        }
        Error::InvalidParameters(_) | Error::ConfigInvalid(_) | Error::WindowTooShort(_) => {
            MfglStatus::InvalidArgument
        }
        Error::FixedPointNotConverged { .. }
        | Error::BvpNotConverged(_)
        | Error::NewtonDiverged(_)
        | Error::DegeneratePair => MfglStatus::NotConverged,
        Error::OutsideGrid(_) | Error::MassLeak { .. } | Error::HorizonTooShort(_) => {
            MfglStatus::OutsideGrid
        }
        Error::MissingThirdDerivatives
        | Error::MissingCompanions(_)
        | Error::MisalignedBundles(_)
        | Error::AssignmentTooLarge { .. } => MfglStatus::MissingData,
        _ => MfglStatus::Unknown,
    }
}

fn fail(err: &Error) -> MfglStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn guard(f: impl FnOnce() -> MfglStatus) -> MfglStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("panic across the FFI boundary");
            MfglStatus::Panic
        }
    }
}

/// Last error message for this thread; borrowed, valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn mfgl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Opaque model handle.
pub struct MfglModel {
    model: Box<dyn MfgModel>,
    beta: f64,
}

/// Opaque empirical-measure handle.
pub struct MfglMeasure {
    inner: EmpiricalMeasure,
}

/// Opaque equilibrium handle.
pub struct MfglSolution {
    inner: EquilibriumSolution,
}

/// Solver knobs mirrored as a plain C struct. Obtain defaults from
/// `mfgl_solver_config_default` and override fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MfglSolverConfig {
    pub dt: f64,
    pub n_particles: usize,
    pub theta: f64,
    pub max_outer: usize,
    pub fp_tol: f64,
    pub inner_tol: f64,
    pub grid_half_width: f64,
    pub grid_h: f64,
    pub seed: u64,
    pub store_z: u8,
    pub noise_realizations: usize,
}

impl From<MfglSolverConfig> for SolverConfig {
    fn from(c: MfglSolverConfig) -> Self {
        SolverConfig {
            dt: c.dt,
            n_particles: c.n_particles,
            theta: c.theta,
            max_outer: c.max_outer,
            fp_tol: c.fp_tol,
            inner_tol: c.inner_tol,
            max_newton: 60,
            grid_half_width: c.grid_half_width,
            grid_h: c.grid_h,
            seed: c.seed,
            store_z: c.store_z != 0,
            noise_realizations: c.noise_realizations,
        }
    }
}

#[no_mangle]
pub extern "C" fn mfgl_solver_config_default(out: *mut MfglSolverConfig) -> MfglStatus {
    if out.is_null() {
        set_error("out pointer is null");
        return MfglStatus::NullPointer;
    }
    let d = SolverConfig::default();
    let cfg = MfglSolverConfig {
        dt: d.dt,
        n_particles: d.n_particles,
        theta: d.theta,
        max_outer: d.max_outer,
        fp_tol: d.fp_tol,
        inner_tol: d.inner_tol,
        grid_half_width: d.grid_half_width,
        grid_h: d.grid_h,
        seed: d.seed,
        store_z: 0,
        noise_realizations: d.noise_realizations,
    };
    unsafe { out.write(cfg) };
    MfglStatus::Ok
}

/// Builds a model from its JSON spec, e.g.
/// `{"family":"riccati_lq","params":{"c0":1.0,"gamma":2.0},"beta":0.0}`.
///
/// # Safety
/// `spec_json` must be a valid NUL-terminated UTF-8 string; `out` must be
/// a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mfgl_model_new_json(
    spec_json: *const c_char,
    out: *mut *mut MfglModel,
) -> MfglStatus {
    guard(|| {
        if spec_json.is_null() || out.is_null() {
            set_error("null argument");
            return MfglStatus::NullPointer;
        }
        let text = match unsafe { CStr::from_ptr(spec_json) }.to_str() {
            Ok(t) => t,
            Err(_) => {
                set_error("spec_json is not valid UTF-8");
                return MfglStatus::InvalidArgument;
            }
        };
        let spec: BuiltinModelSpec = match serde_json::from_str(text) {
            Ok(s) => s,
            Err(e) => {
                set_error(&format!("bad model spec: {e}"));
                return MfglStatus::InvalidArgument;
            }
        };
        match build_model(&spec) {
            Ok(model) => {
                let handle = Box::new(MfglModel {
                    model,
                    beta: spec.beta,
                });
                unsafe { out.write(Box::into_raw(handle)) };
                MfglStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `model` must be a pointer previously returned by `mfgl_model_new_json`
/// and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfgl_model_free(model: *mut MfglModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Builds a measure from `n` particles of dimension `dim` stored row-major
/// in `points`; `weights` may be null for uniform weights.
///
/// # Safety
/// `points` must hold `n * dim` readable doubles and `weights`, when non
/// null, `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfgl_measure_new(
    dim: usize,
    n: usize,
    points: *const f64,
    weights: *const f64,
    out: *mut *mut MfglMeasure,
) -> MfglStatus {
    guard(|| {
        if points.is_null() || out.is_null() {
            set_error("null argument");
            return MfglStatus::NullPointer;
        }
        let pts = unsafe { std::slice::from_raw_parts(points, n * dim) }.to_vec();
        let result = if weights.is_null() {
            EmpiricalMeasure::uniform_from_flat(dim, pts)
        } else {
            let w = unsafe { std::slice::from_raw_parts(weights, n) }.to_vec();
            EmpiricalMeasure::from_flat(dim, pts, w)
        };
        match result {
            Ok(m) => {
                unsafe { out.write(Box::into_raw(Box::new(MfglMeasure { inner: m }))) };
                MfglStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `measure` must come from `mfgl_measure_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mfgl_measure_free(measure: *mut MfglMeasure) {
    if !measure.is_null() {
        drop(unsafe { Box::from_raw(measure) });
    }
}

/// Exact Wasserstein distance W_p, p in {1, 2}.
///
/// # Safety
/// `a` and `b` must be live measure handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mfgl_wasserstein(
    a: *const MfglMeasure,
    b: *const MfglMeasure,
    p: u32,
    out: *mut f64,
) -> MfglStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            set_error("null argument");
            return MfglStatus::NullPointer;
        }
        match wasserstein(unsafe { &(*a).inner }, unsafe { &(*b).inner }, p) {
            Ok(v) => {
                unsafe { out.write(v) };
                MfglStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Monte-Carlo lower estimate of the displacement monotonicity constant.
///
/// # Safety
/// `model` must be a live model handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mfgl_estimate_c0(
    model: *const MfglModel,
    trials: usize,
    cloud_size: usize,
    seed: u64,
    out: *mut f64,
) -> MfglStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            set_error("null argument");
            return MfglStatus::NullPointer;
        }
        match estimate_c0(
            unsafe { (*model).model.as_ref() },
            trials,
            cloud_size,
            seed,
        ) {
            Ok(rep) => {
                unsafe { out.write(rep.constant) };
                MfglStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Deterministic particle equilibrium (beta = 0).
///
/// # Safety
/// `model` and `rho0` must be live handles; `cfg` readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mfgl_solve_particles(
    model: *const MfglModel,
    rho0: *const MfglMeasure,
    horizon: f64,
    cfg: *const MfglSolverConfig,
    out: *mut *mut MfglSolution,
) -> MfglStatus {
    guard(|| {
        if model.is_null() || rho0.is_null() || cfg.is_null() || out.is_null() {
            set_error("null argument");
            return MfglStatus::NullPointer;
        }
        let solver: SolverConfig = unsafe { *cfg }.into();
        match solve_equilibrium_particles(
            unsafe { (*model).model.as_ref() },
            unsafe { &(*rho0).inner },
            horizon,
            &solver,
        ) {
            Ok(eq) => {
                unsafe { out.write(Box::into_raw(Box::new(MfglSolution { inner: eq }))) };
                MfglStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// One-dimensional grid equilibrium (beta >= 0 taken from the model spec).
///
/// # Safety
/// As `mfgl_solve_particles`.
#[no_mangle]
pub unsafe extern "C" fn mfgl_solve_grid(
    model: *const MfglModel,
    rho0: *const MfglMeasure,
    horizon: f64,
    cfg: *const MfglSolverConfig,
    out: *mut *mut MfglSolution,
) -> MfglStatus {
    guard(|| {
        if model.is_null() || rho0.is_null() || cfg.is_null() || out.is_null() {
            set_error("null argument");
            return MfglStatus::NullPointer;
        }
        let solver: SolverConfig = unsafe { *cfg }.into();
        let beta = unsafe { (*model).beta };
        match solve_equilibrium_grid(
            unsafe { (*model).model.as_ref() },
            unsafe { &(*rho0).inner },
            horizon,
            beta,
            &solver,
        ) {
            Ok(eq) => {
                unsafe { out.write(Box::into_raw(Box::new(MfglSolution { inner: eq }))) };
                MfglStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `solution` must come from a solve call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mfgl_solution_free(solution: *mut MfglSolution) {
    if !solution.is_null() {
        drop(unsafe { Box::from_raw(solution) });
    }
}

/// Number of time nodes of a solution.
///
/// # Safety
/// `solution` must be a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn mfgl_solution_n_times(solution: *const MfglSolution) -> usize {
    if solution.is_null() {
        return 0;
    }
    unsafe { &(*solution).inner }.n_times()
}

/// Borrowed pointer to the time grid (length `mfgl_solution_n_times`).
///
/// # Safety
/// `solution` must be live; the pointer is valid until it is freed.
#[no_mangle]
pub unsafe extern "C" fn mfgl_solution_times(solution: *const MfglSolution) -> *const f64 {
    if solution.is_null() {
        return std::ptr::null();
    }
    unsafe { &(*solution).inner }.times.as_ptr()
}

/// Value function u(t, x) along the equilibrium via the Lagrangian
/// representation.
///
/// # Safety
/// `model` and `solution` must be live handles; `x` must hold `dim`
/// readable doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mfgl_value_at(
    model: *const MfglModel,
    solution: *const MfglSolution,
    t: f64,
    x: *const f64,
    cfg: *const MfglSolverConfig,
    out: *mut f64,
) -> MfglStatus {
    guard(|| {
        if model.is_null() || solution.is_null() || x.is_null() || cfg.is_null() || out.is_null()
        {
            set_error("null argument");
            return MfglStatus::NullPointer;
        }
        let dim = unsafe { (*model).model.dim() };
        let xs = unsafe { std::slice::from_raw_parts(x, dim) };
        let solver: SolverConfig = unsafe { *cfg }.into();
        match value_function_along(
            unsafe { (*model).model.as_ref() },
            unsafe { &(*solution).inner },
            t,
            xs,
            &solver,
        ) {
            Ok(v) => {
                unsafe { out.write(v) };
                MfglStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Ergodic constant sample lambda^T of a solved equilibrium.
///
/// # Safety
/// `model` and `solution` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mfgl_lambda_t(
    model: *const MfglModel,
    solution: *const MfglSolution,
    out: *mut f64,
) -> MfglStatus {
    guard(|| {
        if model.is_null() || solution.is_null() || out.is_null() {
            set_error("null argument");
            return MfglStatus::NullPointer;
        }
        match lambda_t(unsafe { (*model).model.as_ref() }, unsafe {
            &(*solution).inner
        }) {
            Ok(v) => {
                unsafe { out.write(v) };
                MfglStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
