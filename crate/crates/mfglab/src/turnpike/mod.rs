//! Quantitative turnpike verification: gap functions between trajectory
//! bundles, the differential inequalities they satisfy under displacement
//! monotonicity, exponential decay fits against theoretical rates, the
//! ergodic constant and the normalized value function.

mod ergodic;
mod fits;

pub use ergodic::{
    check_uniqueness_limits, ergodic_study, EquilibriumRoute, ErgodicReport, ProbeGrid,
    PsiTrace, StudyConfig, UniquenessReport,
};
pub use fits::{fit_decay, log_linear_rate, DecayReport, DecayShape};

use crate::error::{Error, Result};
use crate::linalg;
use crate::measures::{uniform_weights, wasserstein, EmpiricalMeasure};
use crate::models::{lagrangian, MfgModel};
use crate::solve::{
    solve_agent_bvp, EquilibriumSolution, SolverConfig, TrajectoryBundle,
};
use serde::{Deserialize, Serialize};

/// Sampled gap functions between two synchronous trajectory bundles:
/// phi(t) = E[(X1 - X2) . (Y1 - Y2)],
/// Phi(t) = E[|X1 - X2|^2 + |Y1 - Y2|^2], and the W_2 gap of the state laws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapFunctions {
    pub times: Vec<f64>,
    pub phi: Vec<f64>,
    pub phi_cap: Vec<f64>,
    pub w2_gap: Vec<f64>,
}

/// Exact empirical evaluation of the gap functions. The bundles must share
/// their time grid, particle count and sample-space weights.
pub fn gap_functions(b1: &TrajectoryBundle, b2: &TrajectoryBundle) -> Result<GapFunctions> {
    crate::solve::check_bundles_aligned(b1, b2)?;
    let m = b1.times.len();
    let n = b1.x.n_particles;
    let d = b1.x.dim;
    let mut phi = Vec::with_capacity(m);
    let mut cap = Vec::with_capacity(m);
    let mut w2 = Vec::with_capacity(m);
    for k in 0..m {
        let mut p = 0.0;
        let mut c = 0.0;
        let mut pts1 = Vec::with_capacity(n);
        let mut pts2 = Vec::with_capacity(n);
        for i in 0..n {
            let w = b1.weights[i];
            let dx = linalg::sub(b1.x.get(i, k), b2.x.get(i, k));
            let dy = linalg::sub(b1.y.get(i, k), b2.y.get(i, k));
            p += w * linalg::dot(&dx, &dy);
            c += w * (linalg::norm_sq(&dx) + linalg::norm_sq(&dy));
            pts1.push(b1.x.get(i, k).to_vec());
            pts2.push(b2.x.get(i, k).to_vec());
        }
        phi.push(p);
        cap.push(c);
        let mu1 = EmpiricalMeasure::new(d, pts1, b1.weights.to_vec())?;
        let mu2 = EmpiricalMeasure::new(d, pts2, b2.weights.to_vec())?;
        w2.push(wasserstein(&mu1, &mu2, 2)?);
    }
    Ok(GapFunctions {
        times: b1.times.clone(),
        phi,
        phi_cap: cap,
        w2_gap: w2,
    })
}

/// Slack report for the differential-inequality chain
/// c0 |phi| <= (c0/2) Phi <= phi' + (C / 2 c0) W_2^2, its slack-free
/// variant when the two flows coincide or the bundles are equilibria, and
/// the integral inequality Phi(s1) <= Phi(s2) + C int Phi.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffIneqReport {
    /// min over nodes of Phi/2 - |phi| (Young's inequality slack).
    pub slack_phi_envelope: f64,
    /// Minimal C >= 0 making the pointwise chain hold up to `tolerance`.
    pub fitted_c: f64,
    /// min over interior nodes of phi' + (C/2c0) W2^2 - (c0/2) Phi at that C.
    pub min_slack: f64,
    /// Same-flow variant: min over interior nodes of phi' - c0 Phi
    /// (populated when `same_rho` was requested).
    pub slack_monotone: Option<f64>,
    /// Smallest C for which the integral inequality holds over sampled
    /// subintervals.
    pub integral_c_required: f64,
    pub interior_nodes: usize,
    pub tolerance: f64,
}

pub fn check_differential_inequality(
    g: &GapFunctions,
    c0: f64,
    same_rho: bool,
) -> Result<DiffIneqReport> {
    let m = g.times.len();
    if m < 3 {
        return Err(Error::WindowTooShort(m));
    }
    let dt = g.times[1] - g.times[0];
    let tolerance = 10.0 * dt;

    let slack_phi_envelope = g
        .phi
        .iter()
        .zip(&g.phi_cap)
        .map(|(p, c)| 0.5 * c - p.abs())
        .fold(f64::INFINITY, f64::min);

    // Centered discrete derivative on interior nodes.
    let mut dphi = Vec::with_capacity(m - 2);
    for k in 1..m - 1 {
        dphi.push((g.phi[k + 1] - g.phi[k - 1]) / (g.times[k + 1] - g.times[k - 1]));
    }

    // Fit the smallest C that closes the chain within the tolerance.
    let mut fitted_c = 0.0f64;
    if c0 > 0.0 && !same_rho {
        for (idx, k) in (1..m - 1).enumerate() {
            let deficit = 0.5 * c0 * g.phi_cap[k] - dphi[idx] - tolerance;
            let w2sq = g.w2_gap[k] * g.w2_gap[k];
            if deficit > 0.0 && w2sq > 1e-14 {
                fitted_c = fitted_c.max(deficit * 2.0 * c0 / w2sq);
            }
        }
    }
    let mut min_slack = f64::INFINITY;
    for (idx, k) in (1..m - 1).enumerate() {
        let w2sq = g.w2_gap[k] * g.w2_gap[k];
        let aid = if same_rho || c0 <= 0.0 {
            0.0
        } else {
            fitted_c / (2.0 * c0) * w2sq
        };
        min_slack = min_slack.min(dphi[idx] + aid - 0.5 * c0 * g.phi_cap[k]);
    }

    let slack_monotone = if same_rho {
        Some(
            (1..m - 1)
                .map(|k| dphi[k - 1] - c0 * g.phi_cap[k])
                .fold(f64::INFINITY, f64::min),
        )
    } else {
        None
    };

    // Integral inequality over a spread of subintervals.
    let mut integral_c = 0.0f64;
    let stride = (m / 16).max(1);
    for k1 in (0..m).step_by(stride) {
        for k2 in ((k1 + stride)..m).step_by(stride) {
            let mut int = 0.0;
            for k in k1..k2 {
                int += 0.5 * (g.phi_cap[k] + g.phi_cap[k + 1]) * (g.times[k + 1] - g.times[k]);
            }
            if int > 1e-14 {
                let needed = (g.phi_cap[k1] - g.phi_cap[k2]) / int;
                integral_c = integral_c.max(needed.max(0.0));
            }
        }
    }

    Ok(DiffIneqReport {
        slack_phi_envelope,
        fitted_c,
        min_slack,
        slack_monotone,
        integral_c_required: integral_c,
        interior_nodes: m - 2,
        tolerance,
    })
}

/// |D_x u^1(t, x) - D_x u^2(t, x)|^2 / (1 + |x|^2) per probe point, the
/// gradients realized through localized agent bundles at delta_x. The two
/// equilibria share the Hamiltonian but may carry different final costs,
/// so each bundle is closed with its own model.
pub fn gradient_gap_field(
    model1: &dyn MfgModel,
    e1: &EquilibriumSolution,
    model2: &dyn MfgModel,
    e2: &EquilibriumSolution,
    t: f64,
    probe_xs: &[Vec<f64>],
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    if (e1.horizon - e2.horizon).abs() > 1e-12 || (e1.dt - e2.dt).abs() > 1e-12 {
        return Err(Error::MisalignedBundles(
            "equilibria live on different grids".into(),
        ));
    }
    probe_xs
        .iter()
        .map(|x| {
            let g1 = grad_u_at(model1, e1, t, x, cfg)?;
            let g2 = grad_u_at(model2, e2, t, x, cfg)?;
            let diff = linalg::sub(&g1, &g2);
            Ok(linalg::norm_sq(&diff) / (1.0 + linalg::norm_sq(x)))
        })
        .collect()
}

/// D_x u(t, x) recovered from the localized costate: Y^{t, delta_x}_t = -D_x u(t, x).
pub fn grad_u_at(
    model: &dyn MfgModel,
    eq: &EquilibriumSolution,
    t: f64,
    x: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let xi = EmpiricalMeasure::dirac(x);
    let bundle = solve_agent_bvp(model, eq, t, &xi, cfg)?;
    // Average over realizations (they coincide at the initial node).
    let d = bundle.x.dim;
    let mut g = vec![0.0; d];
    for (row, w) in bundle.weights.iter().enumerate() {
        for (gi, yi) in g.iter_mut().zip(bundle.y.get(row, 0)) {
            *gi -= w * yi;
        }
    }
    Ok(g)
}

/// Ergodic constant sample: the expected Lagrangian integrated over
/// [T/2, T/2 + 1] along the equilibrium.
pub fn lambda_t(model: &dyn MfgModel, eq: &EquilibriumSolution) -> Result<f64> {
    if eq.horizon < 2.0 {
        return Err(Error::HorizonTooShort(eq.horizon));
    }
    let a = eq.horizon / 2.0;
    let b = a + 1.0;
    let costs: Vec<f64> = (0..eq.n_times())
        .map(|k| mean_running_cost(model, eq, k))
        .collect::<Result<Vec<_>>>()?;
    trapezoid_on_window(&eq.times, &costs, a, b)
}

/// E[L(X_k, D_pH(X_k, Y_k, rho_k), rho_k)] at a time node: particle mean
/// for particle solutions, density quadrature for grid solutions.
pub fn mean_running_cost(
    model: &dyn MfgModel,
    eq: &EquilibriumSolution,
    k: usize,
) -> Result<f64> {
    let rho = &eq.rho_flow[k];
    if let Some(grid) = &eq.grid {
        let mut total = 0.0;
        for j in 0..grid.n_nodes() {
            let w = rho.weight(j);
            if w == 0.0 {
                continue;
            }
            let x = [grid.xs[j]];
            let y = [-grid.grad_at_node(k, j)];
            let v = model.grad_p_h(&x, &y, rho);
            total += w * lagrangian(model, &x, &v, rho)?;
        }
        Ok(total)
    } else {
        let mut total = 0.0;
        for i in 0..eq.x_paths.n_particles {
            let w = rho.weight(i);
            let x = eq.x_paths.get(i, k);
            let y = eq.y_paths.get(i, k);
            let v = model.grad_p_h(x, y, rho);
            total += w * lagrangian(model, x, &v, rho)?;
        }
        Ok(total)
    }
}

/// E[g(X_T, rho_T)] along the equilibrium.
pub fn mean_terminal_cost(model: &dyn MfgModel, eq: &EquilibriumSolution) -> f64 {
    let last = eq.n_times() - 1;
    let rho = &eq.rho_flow[last];
    if let Some(grid) = &eq.grid {
        (0..grid.n_nodes())
            .map(|j| rho.weight(j) * model.final_cost_g(&[grid.xs[j]], rho))
            .sum()
    } else {
        (0..eq.x_paths.n_particles)
            .map(|i| rho.weight(i) * model.final_cost_g(eq.x_paths.get(i, last), rho))
            .sum()
    }
}

/// Trapezoidal integral of sampled values over [a, b], with linear
/// interpolation at the fractional end segments.
pub(crate) fn trapezoid_on_window(times: &[f64], values: &[f64], a: f64, b: f64) -> Result<f64> {
    if a < times[0] - 1e-9 || b > times[times.len() - 1] + 1e-9 || a >= b {
        return Err(Error::OutsideGrid(format!("window [{a}, {b}]")));
    }
    let interp = |t: f64| -> f64 {
        let dt = times[1] - times[0];
        let pos = ((t - times[0]) / dt).clamp(0.0, (times.len() - 1) as f64);
        let j = (pos.floor() as usize).min(times.len() - 2);
        let frac = pos - j as f64;
        values[j] * (1.0 - frac) + values[j + 1] * frac
    };
    let mut total = 0.0;
    let mut t = a;
    let mut v = interp(a);
    for (k, &tk) in times.iter().enumerate() {
        if tk <= a + 1e-12 {
            continue;
        }
        if tk >= b {
            break;
        }
        total += 0.5 * (v + values[k]) * (tk - t);
        t = tk;
        v = values[k];
    }
    total += 0.5 * (v + interp(b)) * (b - t);
    Ok(total)
}

/// Measure synthesized from one time slice of a bundle.
pub fn bundle_law(bundle: &TrajectoryBundle, k: usize) -> Result<EmpiricalMeasure> {
    let n = bundle.x.n_particles;
    let pts: Vec<Vec<f64>> = (0..n).map(|i| bundle.x.get(i, k).to_vec()).collect();
    let w = if bundle.weights.len() == n {
        bundle.weights.clone()
    } else {
        uniform_weights(n)
    };
    EmpiricalMeasure::new(bundle.x.dim, pts, w)
}
