//! Ergodic constants, the normalized value function and the
//! infinite-horizon limit extracted from a family of growing horizons.

use super::{lambda_t, log_linear_rate, mean_running_cost, mean_terminal_cost};
use crate::error::{Error, Result};
use crate::measures::{wasserstein, EmpiricalMeasure};
use crate::models::MfgModel;
use crate::solve::{
    solve_equilibrium_grid, solve_equilibrium_particles, value_function_along,
    EquilibriumSolution, SolverConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Fixed space-time probe grid shared across horizons. Probe times are
/// restricted to [0, min(horizons)/8], where the convergence of the
/// normalized value function is quantitative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeGrid {
    pub times: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumRoute {
    Particle,
    Grid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub solver: SolverConfig,
    pub beta: f64,
    pub route: EquilibriumRoute,
}

/// E[u~^T(t, X_t)] sampled along the equilibrium.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsiTrace {
    pub horizon: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Everything the ergodic-limit claims are checked against: the lambda^T
/// sequence with its Cauchy gaps, normalized-value and gradient snapshots
/// on the probe grid, W_2 Cauchy gaps of the measure flows, and the
/// richest-horizon values standing in for the limit objects with their
/// last Cauchy gap as the error bar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErgodicReport {
    pub family: String,
    pub horizons: Vec<f64>,
    pub probes: ProbeGrid,
    pub lambda: Vec<f64>,
    pub lambda_gaps: Vec<f64>,
    pub lambda_gap_ratios: Vec<f64>,
    /// Log-linear rate of the lambda gaps against the horizon.
    pub lambda_rate: Option<f64>,
    pub lambda_limit: f64,
    pub lambda_error: f64,
    /// u~^T(t, x) per horizon, probe-major (times x xs, flattened).
    pub tilde_u: Vec<Vec<f64>>,
    pub tilde_u_gaps: Vec<f64>,
    pub tilde_u_rate: Option<f64>,
    /// D_x u^T at the probes (first component), same layout.
    pub grad_u: Vec<Vec<f64>>,
    pub grad_u_gaps: Vec<f64>,
    pub grad_u_rate: Option<f64>,
    /// sup over probe times of W_2 between consecutive-horizon flows.
    pub w2_gaps: Vec<f64>,
    pub w2_rate: Option<f64>,
    pub psi_traces: Vec<PsiTrace>,
    /// Limit stand-ins: richest-horizon values with Cauchy error bars.
    pub limit_u: Vec<f64>,
    pub limit_u_error: f64,
    /// Richest flow at the probe times.
    pub limit_rho: Vec<EmpiricalMeasure>,
    /// max over probes of |u~^T| / (1 + |x|^2) per horizon.
    pub quadratic_envelope: Vec<f64>,
}

/// Solves each horizon, extracts lambda^T, u~^T, D_x u^T and the flow
/// gaps, and fits the geometric Cauchy rates. Horizon solves run
/// concurrently; the reduction is keyed by horizon.
pub fn ergodic_study(
    model: &dyn MfgModel,
    family: &str,
    rho0: &EmpiricalMeasure,
    horizons: &[f64],
    probes: &ProbeGrid,
    cfg: &StudyConfig,
) -> Result<ErgodicReport> {
    if horizons.len() < 2 {
        return Err(Error::ConfigInvalid(
            "an ergodic study needs at least two horizons".into(),
        ));
    }
    let mut sorted = horizons.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] < 2.0 {
        return Err(Error::HorizonTooShort(sorted[0]));
    }
    let t_probe_max = sorted[0] / 8.0 + 1e-9;
    if probes.times.iter().any(|t| *t > t_probe_max) {
        return Err(Error::ConfigInvalid(format!(
            "probe times must stay below min(horizons)/8 = {}",
            sorted[0] / 8.0
        )));
    }

    let solutions: Vec<EquilibriumSolution> = sorted
        .par_iter()
        .map(|&t| match cfg.route {
            EquilibriumRoute::Particle => {
                solve_equilibrium_particles(model, rho0, t, &cfg.solver)
            }
            EquilibriumRoute::Grid => {
                solve_equilibrium_grid(model, rho0, t, cfg.beta, &cfg.solver)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let lambda: Vec<f64> = solutions
        .iter()
        .map(|eq| lambda_t(model, eq))
        .collect::<Result<Vec<_>>>()?;

    // Normalized value and gradient on the probe grid.
    let mut tilde_u = Vec::with_capacity(solutions.len());
    let mut grad_u = Vec::with_capacity(solutions.len());
    let mut quad_env = Vec::with_capacity(solutions.len());
    for (eq, lam) in solutions.iter().zip(&lambda) {
        let mut snap = Vec::new();
        let mut gsnap = Vec::new();
        let mut env = 0.0f64;
        for &tp in &probes.times {
            for xp in &probes.xs {
                let u = probe_value(model, eq, tp, xp, &cfg.solver)?;
                let tu = u - lam * (eq.horizon - tp);
                snap.push(tu);
                env = env.max(tu.abs() / (1.0 + crate::linalg::norm_sq(xp)));
                let g = super::grad_u_at(model, eq, snap_time(eq, tp)?, xp, &cfg.solver)?;
                gsnap.push(g[0]);
            }
        }
        tilde_u.push(snap);
        grad_u.push(gsnap);
        quad_env.push(env);
    }

    // Cauchy gaps between consecutive horizons.
    let lambda_gaps: Vec<f64> = lambda.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let lambda_gap_ratios: Vec<f64> = lambda_gaps
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();
    let tilde_u_gaps: Vec<f64> = tilde_u
        .windows(2)
        .map(|w| sup_abs_diff(&w[0], &w[1]))
        .collect();
    let grad_u_gaps: Vec<f64> = grad_u
        .windows(2)
        .map(|w| sup_abs_diff(&w[0], &w[1]))
        .collect();
    let mut w2_gaps = Vec::with_capacity(solutions.len() - 1);
    for pair in solutions.windows(2) {
        let mut sup = 0.0f64;
        for &tp in &probes.times {
            let k0 = pair[0].time_index(snap_time(&pair[0], tp)?)?;
            let k1 = pair[1].time_index(snap_time(&pair[1], tp)?)?;
            sup = sup.max(wasserstein(
                &pair[0].rho_flow[k0],
                &pair[1].rho_flow[k1],
                2,
            )?);
        }
        w2_gaps.push(sup);
    }

    // Geometric rates: gaps ~ C e^{-rate T}.
    let gap_hs: Vec<f64> = sorted[..sorted.len() - 1].to_vec();
    let lambda_rate = fit_gap_rate(&gap_hs, &lambda_gaps);
    let tilde_u_rate = fit_gap_rate(&gap_hs, &tilde_u_gaps);
    let grad_u_rate = fit_gap_rate(&gap_hs, &grad_u_gaps);
    let w2_rate = fit_gap_rate(&gap_hs, &w2_gaps);

    // Psi traces along each equilibrium.
    let mut psi_traces = Vec::with_capacity(solutions.len());
    for (eq, lam) in solutions.iter().zip(&lambda) {
        psi_traces.push(psi_trace(model, eq, *lam)?);
    }

    let richest = solutions.len() - 1;
    let mut limit_rho = Vec::new();
    for &tp in &probes.times {
        let k = solutions[richest].time_index(snap_time(&solutions[richest], tp)?)?;
        limit_rho.push(solutions[richest].rho_flow[k].clone());
    }

    Ok(ErgodicReport {
        family: family.into(),
        horizons: sorted,
        probes: probes.clone(),
        lambda_limit: lambda[richest],
        lambda_error: *lambda_gaps.last().expect("gaps"),
        lambda,
        lambda_gaps,
        lambda_gap_ratios,
        lambda_rate,
        limit_u: tilde_u[richest].clone(),
        limit_u_error: *tilde_u_gaps.last().expect("gaps"),
        tilde_u,
        tilde_u_gaps,
        tilde_u_rate,
        grad_u,
        grad_u_gaps,
        grad_u_rate,
        w2_gaps,
        w2_rate,
        psi_traces,
        limit_rho,
        quadratic_envelope: quad_env,
    })
}

/// u^T(t, x): grid interpolation when the solver produced the value
/// function, the Lagrangian representation otherwise.
fn probe_value(
    model: &dyn MfgModel,
    eq: &EquilibriumSolution,
    t: f64,
    x: &[f64],
    solver: &SolverConfig,
) -> Result<f64> {
    let ts = snap_time(eq, t)?;
    if let Some(grid) = &eq.grid {
        let k = eq.time_index(ts)?;
        grid.value(k, x[0])
    } else {
        value_function_along(model, eq, ts, x, solver)
    }
}

fn snap_time(eq: &EquilibriumSolution, t: f64) -> Result<f64> {
    let k = (t / eq.dt).round();
    let ts = k * eq.dt;
    if (ts - t).abs() > eq.dt / 2.0 + 1e-12 {
        return Err(Error::OutsideGrid(format!("probe time {t}")));
    }
    Ok(ts)
}

fn sup_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Fits gaps ~ C e^{-rate T}; None when any gap hits the noise floor.
fn fit_gap_rate(horizons: &[f64], gaps: &[f64]) -> Option<f64> {
    if gaps.len() < 2 || gaps.iter().any(|g| *g <= 1e-14) {
        return None;
    }
    let lg: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let (slope, _) = log_linear_rate(horizons, &lg);
    Some(-slope)
}

fn psi_trace(
    model: &dyn MfgModel,
    eq: &EquilibriumSolution,
    lambda: f64,
) -> Result<PsiTrace> {
    // E[u^T(t, X_t)] along the flow is the running-cost tail plus the
    // terminal cost; subtract lambda (T - t) for the normalized value.
    let m = eq.n_times();
    let costs: Vec<f64> = (0..m)
        .map(|k| mean_running_cost(model, eq, k))
        .collect::<Result<Vec<_>>>()?;
    let g_end = mean_terminal_cost(model, eq);
    let mut tail = vec![0.0; m];
    tail[m - 1] = g_end;
    for k in (0..m - 1).rev() {
        tail[k] = tail[k + 1]
            + 0.5 * (costs[k] + costs[k + 1]) * (eq.times[k + 1] - eq.times[k]);
    }
    let values = tail
        .iter()
        .zip(&eq.times)
        .map(|(v, t)| v - lambda * (eq.horizon - t))
        .collect();
    Ok(PsiTrace {
        horizon: eq.horizon,
        times: eq.times.clone(),
        values,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub lambda_gap: f64,
    pub lambda_tolerance: f64,
    pub lambda_ok: bool,
    /// W_2 between the limit flows at each probe time.
    pub rho_w2: Vec<f64>,
    pub rho_tolerance: f64,
    pub rho_ok: bool,
    /// Spatial variation (max - min over x probes) of u^1 - u^2 per probe time.
    pub u_variation: Vec<f64>,
    pub u_range: f64,
    pub u_tolerance: f64,
    pub u_ok: bool,
    pub pass: bool,
}

/// Compares the limit objects of two studies run with different final
/// costs: lambda must agree within the combined Cauchy error, the limit
/// flows must coincide on the probes, and u^1 - u^2 must be spatially
/// constant.
pub fn check_uniqueness_limits(
    s1: &ErgodicReport,
    s2: &ErgodicReport,
) -> Result<UniquenessReport> {
    if s1.family != s2.family {
        return Err(Error::IncompatibleStudies(format!(
            "model families differ: {} vs {}",
            s1.family, s2.family
        )));
    }
    if s1.horizons != s2.horizons || s1.probes != s2.probes {
        return Err(Error::IncompatibleStudies(
            "horizon families or probe grids differ".into(),
        ));
    }
    let lambda_gap = (s1.lambda_limit - s2.lambda_limit).abs();
    let lambda_tolerance = (s1.lambda_error + s2.lambda_error).max(1e-6);
    let lambda_ok = lambda_gap <= lambda_tolerance;

    let mut rho_w2 = Vec::with_capacity(s1.limit_rho.len());
    for (a, b) in s1.limit_rho.iter().zip(&s2.limit_rho) {
        rho_w2.push(wasserstein(a, b, 2)?);
    }
    let rho_tolerance = (s1
        .w2_gaps
        .last()
        .copied()
        .unwrap_or(0.0)
        + s2.w2_gaps.last().copied().unwrap_or(0.0))
    .max(1e-4);
    let rho_ok = rho_w2.iter().all(|v| *v <= rho_tolerance);

    // Spatial constancy of the value difference, probe time by probe time.
    let nx = s1.probes.xs.len();
    let mut u_variation = Vec::with_capacity(s1.probes.times.len());
    let mut u_lo = f64::INFINITY;
    let mut u_hi = f64::NEG_INFINITY;
    for (ti, _) in s1.probes.times.iter().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for xi in 0..nx {
            let d = s1.limit_u[ti * nx + xi] - s2.limit_u[ti * nx + xi];
            lo = lo.min(d);
            hi = hi.max(d);
            u_lo = u_lo.min(s1.limit_u[ti * nx + xi]);
            u_hi = u_hi.max(s1.limit_u[ti * nx + xi]);
        }
        u_variation.push(hi - lo);
    }
    let u_range = (u_hi - u_lo).max(1e-12);
    let u_tolerance = 0.02 * u_range + s1.limit_u_error + s2.limit_u_error;
    let u_ok = u_variation.iter().all(|v| *v <= u_tolerance);

    Ok(UniquenessReport {
        lambda_gap,
        lambda_tolerance,
        lambda_ok,
        rho_w2,
        rho_tolerance,
        rho_ok,
        u_variation,
        u_range,
        u_tolerance,
        u_ok,
        pass: lambda_ok && rho_ok && u_ok,
    })
}
