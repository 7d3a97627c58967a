//! Equilibrium solvers and localized agent trajectories.
//!
//! Two routes compute the same object. The particle solver discretizes the
//! Pontryagin two-point boundary value system per particle (deterministic
//! case) inside a damped Picard iteration on the measure flow. The grid
//! solver (d = 1, beta >= 0) alternates a backward HJB sweep with a
//! forward conservative Fokker-Planck sweep and exposes the decoupling
//! field Y = -D_x u. Localized agent bundles restart the system from
//! arbitrary initial data with the measure flow frozen.

mod agent;
mod grid;
mod particle;

pub use agent::{solve_agent_bvp, value_along_bundle, value_function_along, TrajectoryBundle};
pub use grid::solve_equilibrium_grid;
pub use particle::solve_equilibrium_particles;

/// Validates that two bundles share their grid and sample space.
pub fn check_bundles_aligned(
    b1: &TrajectoryBundle,
    b2: &TrajectoryBundle,
) -> crate::error::Result<()> {
    agent::check_aligned(b1, b2)
}

use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::models::BuiltinModelSpec;
use serde::{Deserialize, Serialize};

/// Per-particle trajectory storage: `n_particles x n_times x dim`,
/// particle-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub n_particles: usize,
    pub n_times: usize,
    pub dim: usize,
    data: Vec<f64>,
}

impl Paths {
    pub fn zeros(n_particles: usize, n_times: usize, dim: usize) -> Self {
        Self {
            n_particles,
            n_times,
            dim,
            data: vec![0.0; n_particles * n_times * dim],
        }
    }

    #[inline]
    pub fn get(&self, particle: usize, time: usize) -> &[f64] {
        let o = (particle * self.n_times + time) * self.dim;
        &self.data[o..o + self.dim]
    }

    #[inline]
    pub fn set(&mut self, particle: usize, time: usize, value: &[f64]) {
        let o = (particle * self.n_times + time) * self.dim;
        self.data[o..o + self.dim].copy_from_slice(value);
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }
}

/// Value function on the 1-D space-time grid of the grid solver, with the
/// mesh and the per-time-node mass retained inside the inner window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridValueFunction {
    pub xs: Vec<f64>,
    /// Row-major `n_times x xs.len()`.
    pub u: Vec<f64>,
    pub n_times: usize,
}

impl GridValueFunction {
    pub fn n_nodes(&self) -> usize {
        self.xs.len()
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        let j = self.xs.len();
        &self.u[k * j..(k + 1) * j]
    }

    fn locate(&self, x: f64) -> Result<(usize, f64)> {
        let h = self.xs[1] - self.xs[0];
        let pos = (x - self.xs[0]) / h;
        if pos < 0.0 || pos > (self.xs.len() - 1) as f64 {
            return Err(Error::OutsideGrid(format!("x = {x}")));
        }
        let j = (pos.floor() as usize).min(self.xs.len() - 2);
        Ok((j, pos - j as f64))
    }

    /// Linear interpolation of u(t_k, x).
    pub fn value(&self, k: usize, x: f64) -> Result<f64> {
        let (j, frac) = self.locate(x)?;
        let row = self.row(k);
        Ok(row[j] * (1.0 - frac) + row[j + 1] * frac)
    }

    /// Central-difference gradient interpolated linearly in x.
    pub fn grad(&self, k: usize, x: f64) -> Result<f64> {
        let (j, frac) = self.locate(x)?;
        let g0 = self.grad_at_node(k, j);
        let g1 = self.grad_at_node(k, j + 1);
        Ok(g0 * (1.0 - frac) + g1 * frac)
    }

    pub fn grad_at_node(&self, k: usize, j: usize) -> f64 {
        let row = self.row(k);
        let h = self.xs[1] - self.xs[0];
        let last = self.xs.len() - 1;
        if j == 0 {
            (row[1] - row[0]) / h
        } else if j == last {
            (row[last] - row[last - 1]) / h
        } else {
            (row[j + 1] - row[j - 1]) / (2.0 * h)
        }
    }

    /// Second difference (u_{j+1} - 2 u_j + u_{j-1}) / h^2 at interior node j.
    pub fn second_diff(&self, k: usize, j: usize) -> f64 {
        let row = self.row(k);
        let h = self.xs[1] - self.xs[0];
        (row[j + 1] - 2.0 * row[j] + row[j - 1]) / (h * h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub outer_iterations: usize,
    /// sup_t W_2 between consecutive measure flows, one entry per outer
    /// iteration.
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

/// Time-discretized MFG Nash equilibrium.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub model_spec: Option<BuiltinModelSpec>,
    pub horizon: f64,
    pub dt: f64,
    pub beta: f64,
    pub times: Vec<f64>,
    pub rho_flow: Vec<EmpiricalMeasure>,
    pub x_paths: Paths,
    pub y_paths: Paths,
    /// Flattened d x d matrices per (particle, time) when requested.
    pub z_paths: Option<Paths>,
    pub grid: Option<GridValueFunction>,
    pub diagnostics: SolveDiagnostics,
}

impl EquilibriumSolution {
    /// Index of the time node matching `t` within 1e-9, or OutsideGrid.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round() as isize;
        if k < 0 || k as usize >= self.times.len() || (self.times[k as usize] - t).abs() > 1e-9 {
            return Err(Error::OutsideGrid(format!("t = {t} is not a grid node")));
        }
        Ok(k as usize)
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// Max over particles of |Y_i(T) + D_x g(X_i(T), rho_T)|.
    pub fn terminal_costate_residual(&self, model: &dyn crate::models::MfgModel) -> f64 {
        let last = self.n_times() - 1;
        let rho_t = &self.rho_flow[last];
        let mut worst = 0.0f64;
        for i in 0..self.x_paths.n_particles {
            let x = self.x_paths.get(i, last);
            let y = self.y_paths.get(i, last);
            let g = model.grad_x_g(x, rho_t);
            let r: f64 = y
                .iter()
                .zip(&g)
                .map(|(yi, gi)| (yi + gi) * (yi + gi))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(r);
        }
        worst
    }
}

/// Knobs shared by both solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Output time step; solvers substep internally under their CFL needs.
    pub dt: f64,
    /// Particle count used when sampling initial data or grid diagnostics.
    pub n_particles: usize,
    /// Picard damping on the measure flow, in (0, 1].
    pub theta: f64,
    pub max_outer: usize,
    /// Fixed-point tolerance, measured as sup_t W_2 of the flow update.
    pub fp_tol: f64,
    /// Newton residual tolerance for the per-particle BVP.
    pub inner_tol: f64,
    pub max_newton: usize,
    /// Grid solver: domain half-width L (domain [-L, L]) and mesh size h.
    pub grid_half_width: f64,
    pub grid_h: f64,
    pub seed: u64,
    /// Store Z along particle paths (d = 1 finite-difference Y-field slope).
    pub store_z: bool,
    /// Noise realizations for value evaluation when beta > 0.
    pub noise_realizations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            n_particles: 128,
            theta: 1.0,
            max_outer: 200,
            fp_tol: 1e-9,
            inner_tol: 1e-11,
            max_newton: 60,
            grid_half_width: 8.0,
            grid_h: 0.025,
            seed: 0,
            store_z: false,
            noise_realizations: 64,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::ConfigInvalid("dt must be positive".into()));
        }
        if self.n_particles == 0 {
            return Err(Error::ConfigInvalid("n_particles must be >= 1".into()));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::ConfigInvalid("theta must lie in (0, 1]".into()));
        }
        if !(self.grid_h > 0.0 && self.grid_half_width > self.grid_h) {
            return Err(Error::ConfigInvalid("grid geometry invalid".into()));
        }
        Ok(())
    }
}

/// Uniform time grid for a horizon. Returns (times, actual dt).
pub(crate) fn time_grid(horizon: f64, dt: f64) -> (Vec<f64>, f64) {
    let steps = (horizon / dt).round().max(1.0) as usize;
    let dt = horizon / steps as f64;
    ((0..=steps).map(|k| k as f64 * dt).collect(), dt)
}
