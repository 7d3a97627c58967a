//! Localized single-agent trajectories and the value function along them.
//!
//! The measure flow of a solved equilibrium is an input here: the agent's
//! law need not match it. For beta = 0 the agent bundle solves the same
//! two-point BVP as the equilibrium particles against the frozen flow; for
//! beta > 0 (grid solutions) the costate is read from the decoupling field
//! Y = -D_x u and the state is propagated by Euler-Maruyama under the
//! grid drift.

use super::particle::{solve_single_bvp, BvpWorkspace};
use super::{EquilibriumSolution, Paths, SolverConfig};
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::models::{lagrangian, MfgModel};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Aligned agent paths on the tail grid [t, T] of an equilibrium.
#[derive(Debug, Clone)]
pub struct TrajectoryBundle {
    /// Time nodes, a suffix of the equilibrium grid.
    pub times: Vec<f64>,
    /// Index of `times[0]` within the equilibrium grid.
    pub start_index: usize,
    pub x: Paths,
    pub y: Paths,
    pub z: Option<Paths>,
    /// Per-path weights (initial-cloud weight split over noise realizations).
    pub weights: Vec<f64>,
    pub beta: f64,
}

/// Solves the localized FBSDE started from `xi` at grid node `t` with the
/// equilibrium's measure flow frozen.
pub fn solve_agent_bvp(
    model: &dyn MfgModel,
    equilibrium: &EquilibriumSolution,
    t: f64,
    xi: &EmpiricalMeasure,
    cfg: &SolverConfig,
) -> Result<TrajectoryBundle> {
    let d = model.dim();
    if xi.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "xi dim {} vs model dim {}",
            xi.dim(),
            d
        )));
    }
    let k0 = equilibrium.time_index(t)?;
    let times: Vec<f64> = equilibrium.times[k0..].to_vec();
    let flow: Vec<EmpiricalMeasure> = equilibrium.rho_flow[k0..].to_vec();
    let m = times.len();

    if m == 1 {
        // Started at the terminal node: the costate is pinned by the
        // terminal condition and there is nothing to integrate.
        let n = xi.len();
        let mut x = Paths::zeros(n, 1, d);
        let mut y = Paths::zeros(n, 1, d);
        let rho_t = flow.last().expect("terminal measure");
        for i in 0..n {
            x.set(i, 0, xi.point(i));
            let g: Vec<f64> = model.grad_x_g(xi.point(i), rho_t).iter().map(|v| -v).collect();
            y.set(i, 0, &g);
        }
        return Ok(TrajectoryBundle {
            times,
            start_index: k0,
            x,
            y,
            z: None,
            weights: xi.weights().to_vec(),
            beta: equilibrium.beta,
        });
    }

    if equilibrium.beta == 0.0 {
        let n = xi.len();
        let dt = equilibrium.dt;
        let results: Vec<BvpWorkspace> = (0..n)
            .into_par_iter()
            .map(|i| -> Result<BvpWorkspace> {
                let start = xi.point(i);
                let gg = model.grad_x_g(start, flow.last().expect("flow tail"));
                let mut ws = BvpWorkspace {
                    x: std::iter::repeat(start)
                        .take(m)
                        .flatten()
                        .copied()
                        .collect(),
                    y: (0..m).flat_map(|_| gg.iter().map(|v| -v)).collect(),
                };
                solve_single_bvp(model, &flow, start, dt, &mut ws, cfg.inner_tol, cfg.max_newton)?;
                Ok(ws)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut x = Paths::zeros(n, m, d);
        let mut y = Paths::zeros(n, m, d);
        for (i, ws) in results.iter().enumerate() {
            for k in 0..m {
                x.set(i, k, &ws.x[k * d..(k + 1) * d]);
                y.set(i, k, &ws.y[k * d..(k + 1) * d]);
            }
        }
        return Ok(TrajectoryBundle {
            times,
            start_index: k0,
            x,
            y,
            z: None,
            weights: xi.weights().to_vec(),
            beta: 0.0,
        });
    }

    // beta > 0: supported through the grid solver's decoupling field.
    let grid = equilibrium
        .grid
        .as_ref()
        .ok_or_else(|| Error::OutsideGrid("beta > 0 agent bundles need a grid solution".into()))?;
    let reals = cfg.noise_realizations.max(1);
    let n = xi.len() * reals;
    let mut x = Paths::zeros(n, m, 1);
    let mut y = Paths::zeros(n, m, 1);
    let mut z = Paths::zeros(n, m, 1);
    let mut weights = Vec::with_capacity(n);
    let sq = (2.0 * equilibrium.beta).sqrt();
    let sub = 4usize; // Euler-Maruyama substeps per stored interval
    for pi in 0..xi.len() {
        for r in 0..reals {
            let row = pi * reals + r;
            weights.push(xi.weight(pi) / reals as f64);
            let mut rng =
                ChaCha8Rng::seed_from_u64(cfg.seed ^ (row as u64).wrapping_mul(0x9E37_79B9));
            let mut pos = xi.point(pi)[0];
            for k in 0..m {
                let kk = k0 + k;
                x.set(row, k, &[pos]);
                let du = grid.grad(kk, pos)?;
                y.set(row, k, &[-du]);
                let j = nearest_interior_node(grid, pos);
                z.set(row, k, &[-grid.second_diff(kk, j)]);
                if k + 1 < m {
                    let delta = equilibrium.dt / sub as f64;
                    for s in 0..sub {
                        let frac = s as f64 / sub as f64;
                        let du_now = grid_grad_interp(grid, kk, frac, pos)?;
                        let drift =
                            model.grad_p_h(&[pos], &[-du_now], &flow[k])[0];
                        let noise: f64 = gaussian(&mut rng);
                        pos += delta * drift + sq * delta.sqrt() * noise;
                        let lo = grid.xs[0];
                        let hi = *grid.xs.last().expect("grid nodes");
                        pos = pos.clamp(lo, hi);
                    }
                }
            }
        }
    }
    Ok(TrajectoryBundle {
        times,
        start_index: k0,
        x,
        y,
        z: Some(z),
        weights,
        beta: equilibrium.beta,
    })
}

fn nearest_interior_node(grid: &super::GridValueFunction, x: f64) -> usize {
    let h = grid.xs[1] - grid.xs[0];
    let j = ((x - grid.xs[0]) / h).round() as isize;
    j.clamp(1, grid.xs.len() as isize - 2) as usize
}

fn grid_grad_interp(
    grid: &super::GridValueFunction,
    k: usize,
    frac: f64,
    x: f64,
) -> Result<f64> {
    let g0 = grid.grad(k, x)?;
    if frac == 0.0 || k + 1 >= grid.n_times {
        return Ok(g0);
    }
    let g1 = grid.grad(k + 1, x)?;
    Ok(g0 * (1.0 - frac) + g1 * frac)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Value of the control problem started at (t, x) under the equilibrium
/// flow: the Lagrangian integrated along the agent bundle (trapezoidal in
/// time, empirical mean over noise realizations when beta > 0) plus the
/// terminal cost.
pub fn value_function_along(
    model: &dyn MfgModel,
    equilibrium: &EquilibriumSolution,
    t: f64,
    x: &[f64],
    cfg: &SolverConfig,
) -> Result<f64> {
    let xi = EmpiricalMeasure::dirac(x);
    let bundle = solve_agent_bvp(model, equilibrium, t, &xi, cfg)?;
    value_along_bundle(model, equilibrium, &bundle)
}

/// Integrates E[int L + g] along an existing bundle.
pub fn value_along_bundle(
    model: &dyn MfgModel,
    equilibrium: &EquilibriumSolution,
    bundle: &TrajectoryBundle,
) -> Result<f64> {
    let m = bundle.times.len();
    let k0 = bundle.start_index;
    let mut total = 0.0;
    for (row, w) in bundle.weights.iter().enumerate() {
        let mut integral = 0.0;
        let mut prev = running_cost(model, equilibrium, bundle, row, 0, k0)?;
        for k in 1..m {
            let cur = running_cost(model, equilibrium, bundle, row, k, k0 + k)?;
            integral += 0.5 * (prev + cur) * (bundle.times[k] - bundle.times[k - 1]);
            prev = cur;
        }
        let xt = bundle.x.get(row, m - 1);
        let g = model.final_cost_g(xt, &equilibrium.rho_flow[k0 + m - 1]);
        total += w * (integral + g);
    }
    Ok(total)
}

fn running_cost(
    model: &dyn MfgModel,
    equilibrium: &EquilibriumSolution,
    bundle: &TrajectoryBundle,
    row: usize,
    k: usize,
    flow_k: usize,
) -> Result<f64> {
    let rho = &equilibrium.rho_flow[flow_k];
    let x = bundle.x.get(row, k);
    let y = bundle.y.get(row, k);
    let v = model.grad_p_h(x, y, rho);
    lagrangian(model, x, &v, rho)
}

/// E[(X1 - X2) . (Y1 - Y2)] and friends need the bundles to share their
/// time grid and sample space; checked here once for the turnpike layer.
pub(crate) fn check_aligned(b1: &TrajectoryBundle, b2: &TrajectoryBundle) -> Result<()> {
    if b1.times.len() != b2.times.len()
        || b1.start_index != b2.start_index
        || b1.x.n_particles != b2.x.n_particles
    {
        return Err(Error::MisalignedBundles(format!(
            "{} nodes / {} paths vs {} nodes / {} paths",
            b1.times.len(),
            b1.x.n_particles,
            b2.times.len(),
            b2.x.n_particles
        )));
    }
    if b1
        .times
        .iter()
        .zip(&b2.times)
        .any(|(a, b)| (a - b).abs() > 1e-9)
    {
        return Err(Error::MisalignedBundles("time grids differ".into()));
    }
    if b1
        .weights
        .iter()
        .zip(&b2.weights)
        .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::MisalignedBundles(
            "sample-space weights differ".into(),
        ));
    }
    Ok(())
}

impl TrajectoryBundle {
    /// Equilibrium paths restarted at node `k0` as a bundle (the identity
    /// synchronous coupling on the equilibrium's own particles).
    pub fn from_equilibrium(eq: &EquilibriumSolution, t: f64) -> Result<Self> {
        let k0 = eq.time_index(t)?;
        let m = eq.n_times() - k0;
        let n = eq.x_paths.n_particles;
        let d = eq.x_paths.dim;
        let mut x = Paths::zeros(n, m, d);
        let mut y = Paths::zeros(n, m, d);
        for i in 0..n {
            for k in 0..m {
                x.set(i, k, eq.x_paths.get(i, k0 + k));
                y.set(i, k, eq.y_paths.get(i, k0 + k));
            }
        }
        let z = eq.z_paths.as_ref().map(|zp| {
            let mut z = Paths::zeros(n, m, zp.dim);
            for i in 0..n {
                for k in 0..m {
                    z.set(i, k, zp.get(i, k0 + k));
                }
            }
            z
        });
        // Grid solutions carry the density on cells; their diagnostic
        // particles are uniformly weighted.
        let weights = if eq.rho_flow[0].len() == n {
            eq.rho_flow[0].weights().to_vec()
        } else {
            vec![1.0 / n as f64; n]
        };
        Ok(Self {
            times: eq.times[k0..].to_vec(),
            start_index: k0,
            x,
            y,
            z,
            weights,
            beta: eq.beta,
        })
    }
}
