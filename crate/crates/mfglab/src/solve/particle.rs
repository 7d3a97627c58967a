//! Deterministic particle solver: per-particle Pontryagin two-point BVP
//! under a frozen measure flow, wrapped in a damped Picard iteration that
//! updates the flow through the synchronous coupling.
//!
//! The BVP is discretized with the trapezoidal rule on the full time grid
//! and solved by a damped Newton method on the stacked (X, Y) unknowns;
//! the Jacobian is block tridiagonal and eliminated directly. This stays
//! stable on long horizons where forward-backward sweeping or single
//! shooting would amplify the unstable costate modes.

use super::{time_grid, EquilibriumSolution, Paths, SolveDiagnostics, SolverConfig};
use crate::error::{Error, Result};
use crate::linalg::{BlockTridiag, SqMat};
use crate::measures::{wasserstein, EmpiricalMeasure};
use crate::models::MfgModel;
use rayon::prelude::*;

/// One particle's stacked trajectory: nodes 0..n_times, (X_k, Y_k) per node.
pub(crate) struct BvpWorkspace {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Solves the deterministic two-point BVP for one particle with the flow
/// frozen: X' = D_pH(X, Y, rho_t), Y' = -D_xH(X, Y, rho_t), X(0) = xi,
/// Y(T) = -D_x g(X(T), rho_T). `ws` carries the warm start and receives
/// the solution.
pub(crate) fn solve_single_bvp(
    model: &dyn MfgModel,
    flow: &[EmpiricalMeasure],
    xi: &[f64],
    dt: f64,
    ws: &mut BvpWorkspace,
    inner_tol: f64,
    max_newton: usize,
) -> Result<()> {
    let d = model.dim();
    let m = flow.len(); // number of time nodes
    let nb = 2 * d;
    debug_assert_eq!(ws.x.len(), m * d);
    debug_assert_eq!(ws.y.len(), m * d);

    let residual =
        |x: &[f64], y: &[f64], fp: &mut Vec<Vec<f64>>, fx: &mut Vec<Vec<f64>>, r: &mut Vec<f64>| {
            fp.clear();
            fx.clear();
            for k in 0..m {
                fp.push(model.grad_p_h(&x[k * d..(k + 1) * d], &y[k * d..(k + 1) * d], &flow[k]));
                fx.push(model.grad_x_h(&x[k * d..(k + 1) * d], &y[k * d..(k + 1) * d], &flow[k]));
            }
            r.clear();
            r.resize(m * nb, 0.0);
            // Row 0: X_0 - xi ; Y_0 - Y_1 - dt/2 (F_x(0) + F_x(1)).
            for i in 0..d {
                r[i] = x[i] - xi[i];
                r[d + i] = y[i] - y[d + i] - 0.5 * dt * (fx[0][i] + fx[1][i]);
            }
            // Rows 1..m-1.
            for k in 1..m - 1 {
                let o = k * nb;
                for i in 0..d {
                    r[o + i] = x[k * d + i]
                        - x[(k - 1) * d + i]
                        - 0.5 * dt * (fp[k - 1][i] + fp[k][i]);
                    r[o + d + i] = y[k * d + i]
                        - y[(k + 1) * d + i]
                        - 0.5 * dt * (fx[k][i] + fx[k + 1][i]);
                }
            }
            // Row m-1: X recursion plus the terminal costate condition.
            let last = m - 1;
            let o = last * nb;
            let gg = model.grad_x_g(&x[last * d..], &flow[last]);
            for i in 0..d {
                r[o + i] = x[last * d + i]
                    - x[(last - 1) * d + i]
                    - 0.5 * dt * (fp[last - 1][i] + fp[last][i]);
                r[o + d + i] = y[last * d + i] + gg[i];
            }
        };

    let mut fp: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut fx: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut r = Vec::new();
    residual(&ws.x, &ws.y, &mut fp, &mut fx, &mut r);
    let mut rnorm = sup_norm(&r);

    for _ in 0..max_newton {
        if rnorm <= inner_tol {
            return Ok(());
        }
        // Assemble the block-tridiagonal Jacobian.
        let mut lower = Vec::with_capacity(m);
        let mut diag = Vec::with_capacity(m);
        let mut upper = Vec::with_capacity(m);
        let half = 0.5 * dt;
        // Per-node Hessian blocks.
        let mut a = Vec::with_capacity(m); // dF_p/dX = hess_px
        let mut b = Vec::with_capacity(m); // dF_p/dY = hess_pp
        let mut c = Vec::with_capacity(m); // dF_x/dX = hess_xx
        let mut e = Vec::with_capacity(m); // dF_x/dY = hess_px^T
        for k in 0..m {
            let x = &ws.x[k * d..(k + 1) * d];
            let y = &ws.y[k * d..(k + 1) * d];
            let px = model.hess_px_h(x, y, &flow[k]);
            a.push(px.clone());
            b.push(model.hess_pp_h(x, y, &flow[k]));
            c.push(model.hess_xx_h(x, y, &flow[k]));
            e.push(px.transpose());
        }
        for k in 0..m {
            let mut dg = SqMat::zeros(nb);
            let mut lo = SqMat::zeros(nb);
            let mut up = SqMat::zeros(nb);
            if k == 0 {
                put(&mut dg, 0, 0, &SqMat::identity(d));
                put(&mut dg, d, 0, &c[0].scale(-half));
                put(&mut dg, d, d, &SqMat::identity(d).add(&e[0].scale(-half)));
                put(&mut up, d, 0, &c[1].scale(-half));
                put(
                    &mut up,
                    d,
                    d,
                    &SqMat::identity(d).scale(-1.0).add(&e[1].scale(-half)),
                );
            } else {
                put(
                    &mut lo,
                    0,
                    0,
                    &SqMat::identity(d).scale(-1.0).add(&a[k - 1].scale(-half)),
                );
                put(&mut lo, 0, d, &b[k - 1].scale(-half));
                put(&mut dg, 0, 0, &SqMat::identity(d).add(&a[k].scale(-half)));
                put(&mut dg, 0, d, &b[k].scale(-half));
                if k < m - 1 {
                    put(&mut dg, d, 0, &c[k].scale(-half));
                    put(&mut dg, d, d, &SqMat::identity(d).add(&e[k].scale(-half)));
                    put(&mut up, d, 0, &c[k + 1].scale(-half));
                    put(
                        &mut up,
                        d,
                        d,
                        &SqMat::identity(d).scale(-1.0).add(&e[k + 1].scale(-half)),
                    );
                } else {
                    let gg = model.hess_xx_g(&ws.x[k * d..], &flow[k]);
                    put(&mut dg, d, 0, &gg);
                    put(&mut dg, d, d, &SqMat::identity(d));
                }
            }
            lower.push(lo);
            diag.push(dg);
            upper.push(up);
        }
        let jac = BlockTridiag {
            block: nb,
            lower,
            diag,
            upper,
        };
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let step = jac
            .solve(&neg_r)
            .ok_or_else(|| Error::BvpNotConverged("singular BVP Jacobian".into()))?;

        // Damped update with halving line search.
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..25 {
            let mut xt = ws.x.clone();
            let mut yt = ws.y.clone();
            for k in 0..m {
                for i in 0..d {
                    xt[k * d + i] += lambda * step[k * nb + i];
                    yt[k * d + i] += lambda * step[k * nb + d + i];
                }
            }
            residual(&xt, &yt, &mut fp, &mut fx, &mut r);
            let cand = sup_norm(&r);
            if cand < rnorm {
                ws.x = xt;
                ws.y = yt;
                rnorm = cand;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::BvpNotConverged(format!(
                "line search stalled at residual {rnorm:e}"
            )));
        }
    }
    if rnorm <= inner_tol {
        Ok(())
    } else {
        Err(Error::BvpNotConverged(format!(
            "residual {rnorm:e} after {max_newton} Newton iterations"
        )))
    }
}

fn put(dst: &mut SqMat, row: usize, col: usize, block: &SqMat) {
    for i in 0..block.dim {
        for j in 0..block.dim {
            dst.set(row + i, col + j, block.get(i, j));
        }
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Computes the MFG Nash equilibrium by damped Picard iteration on the
/// measure flow (beta = 0). The initial flow freezes rho_0 on every node;
/// each sweep re-solves every particle BVP in parallel under the frozen
/// flow and relaxes the particle positions synchronously.
pub fn solve_equilibrium_particles(
    model: &dyn MfgModel,
    rho0: &EmpiricalMeasure,
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<EquilibriumSolution> {
    cfg.validate()?;
    let d = model.dim();
    if rho0.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "rho0 dim {} vs model dim {}",
            rho0.dim(),
            d
        )));
    }
    let (times, dt) = time_grid(horizon, cfg.dt);
    let m = times.len();
    let n = rho0.len();

    // Frozen-flow initialization and warm-started workspaces.
    let mut flow_pts: Vec<Vec<f64>> = vec![rho0.flat_points().to_vec(); m];
    let weights = rho0.weights().to_vec();
    let mut workspaces: Vec<BvpWorkspace> = (0..n)
        .map(|i| {
            let xi = rho0.point(i);
            let gg = model.grad_x_g(xi, rho0);
            let mut x = Vec::with_capacity(m * d);
            let mut y = Vec::with_capacity(m * d);
            for _ in 0..m {
                x.extend_from_slice(xi);
                y.extend(gg.iter().map(|v| -v));
            }
            BvpWorkspace { x, y }
        })
        .collect();

    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _outer in 0..cfg.max_outer {
        iterations += 1;
        let flow: Vec<EmpiricalMeasure> = flow_pts
            .iter()
            .map(|pts| {
                EmpiricalMeasure::from_flat(d, pts.clone(), weights.clone()).expect("flow")
            })
            .collect();
        workspaces
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(i, ws)| {
                solve_single_bvp(
                    model,
                    &flow,
                    rho0.point(i),
                    dt,
                    ws,
                    cfg.inner_tol,
                    cfg.max_newton,
                )
            })?;
        // Synchronous relaxation of the flow particles toward the solved
        // states, and the undamped residual for the convergence check.
        let mut residual = 0.0f64;
        for k in 0..m {
            let mut new_pts = vec![0.0; n * d];
            for i in 0..n {
                for c in 0..d {
                    new_pts[i * d + c] = workspaces[i].x[k * d + c];
                }
            }
            let new_law = EmpiricalMeasure::from_flat(d, new_pts.clone(), weights.clone())?;
            let old = EmpiricalMeasure::from_flat(d, flow_pts[k].clone(), weights.clone())?;
            let w2 = flow_residual(&old, &new_law)?;
            residual = residual.max(w2);
            for (dst, new_v) in flow_pts[k].iter_mut().zip(&new_pts) {
                *dst = (1.0 - cfg.theta) * *dst + cfg.theta * *new_v;
            }
        }
        history.push(residual);
        if residual < cfg.fp_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FixedPointNotConverged {
            last_residual: history.last().copied().unwrap_or(f64::NAN),
            iterations,
            history,
        });
    }

    // One consistency pass against the exact law of the solved states, so
    // the returned flow is the empirical law of the returned paths.
    let final_flow: Vec<EmpiricalMeasure> = (0..m)
        .map(|k| {
            let mut pts = vec![0.0; n * d];
            for i in 0..n {
                pts[i * d..(i + 1) * d].copy_from_slice(&workspaces[i].x[k * d..(k + 1) * d]);
            }
            EmpiricalMeasure::from_flat(d, pts, weights.clone()).expect("final flow")
        })
        .collect();
    workspaces
        .par_iter_mut()
        .enumerate()
        .try_for_each(|(i, ws)| {
            solve_single_bvp(
                model,
                &final_flow,
                rho0.point(i),
                dt,
                ws,
                cfg.inner_tol,
                cfg.max_newton,
            )
        })?;

    let mut x_paths = Paths::zeros(n, m, d);
    let mut y_paths = Paths::zeros(n, m, d);
    for (i, ws) in workspaces.iter().enumerate() {
        for k in 0..m {
            x_paths.set(i, k, &ws.x[k * d..(k + 1) * d]);
            y_paths.set(i, k, &ws.y[k * d..(k + 1) * d]);
        }
    }
    let rho_flow: Vec<EmpiricalMeasure> = (0..m)
        .map(|k| {
            let mut pts = vec![0.0; n * d];
            for i in 0..n {
                pts[i * d..(i + 1) * d].copy_from_slice(x_paths.get(i, k));
            }
            EmpiricalMeasure::from_flat(d, pts, weights.clone()).expect("rho flow")
        })
        .collect();
    let z_paths = if cfg.store_z {
        Some(estimate_z_paths(&x_paths, &y_paths)?)
    } else {
        None
    };

    Ok(EquilibriumSolution {
        model_spec: None,
        horizon,
        dt,
        beta: 0.0,
        times,
        rho_flow,
        x_paths,
        y_paths,
        z_paths,
        grid: None,
        diagnostics: SolveDiagnostics {
            outer_iterations: iterations,
            residual_history: history,
            converged,
        },
    })
}

fn flow_residual(old: &EmpiricalMeasure, new: &EmpiricalMeasure) -> Result<f64> {
    if old.dim() == 1 {
        wasserstein(old, new, 2)
    } else {
        // Synchronous (index) coupling upper-bounds W_2 and keeps the
        // residual cheap in higher dimension.
        let mut s = 0.0;
        for i in 0..old.len() {
            let d2: f64 = old
                .point(i)
                .iter()
                .zip(new.point(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            s += old.weight(i) * d2;
        }
        Ok(s.sqrt())
    }
}

/// Finite-difference slope of the costate field across neighboring
/// particles, the particle-side stand-in for Z = -D^2_xx u. d = 1 only.
fn estimate_z_paths(x_paths: &Paths, y_paths: &Paths) -> Result<Paths> {
    if x_paths.dim != 1 {
        return Err(Error::DimensionMismatch(
            "particle Z estimation is implemented in d = 1".into(),
        ));
    }
    let n = x_paths.n_particles;
    let m = x_paths.n_times;
    let mut z = Paths::zeros(n, m, 1);
    for k in 0..m {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| x_paths.get(a, k)[0].total_cmp(&x_paths.get(b, k)[0]));
        for (rank, &i) in order.iter().enumerate() {
            let (lo, hi) = if rank == 0 {
                (order[0], order[(1).min(n - 1)])
            } else if rank == n - 1 {
                (order[n - 2], order[n - 1])
            } else {
                (order[rank - 1], order[rank + 1])
            };
            let dx = x_paths.get(hi, k)[0] - x_paths.get(lo, k)[0];
            let dy = y_paths.get(hi, k)[0] - y_paths.get(lo, k)[0];
            // Z = -d(D_x u)/dx = dY/dx along the decoupling field.
            let slope = if dx.abs() > 1e-12 { dy / dx } else { 0.0 };
            z.set(i, k, &[slope]);
        }
    }
    Ok(z)
}
