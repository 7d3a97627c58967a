//! Hamiltonian / final-cost abstraction.
//!
//! A model carries H(x, p, mu), the final cost g(x, mu) and every
//! derivative the confining functionals and solvers consume: spatial and
//! momentum gradients and Hessians, the Wasserstein-derivative kernels
//! D2_{p mu}H and D2_{x mu}H, and (optionally) the third-derivative
//! kernels that enter the noise-weighted terms of Q1-Q4. All derivatives
//! are analytic closures audited against finite differences by
//! [`audit_derivatives`].

mod builtin;

pub use builtin::{build_model, BuiltinModelSpec, ModelFamily};

use crate::error::{Error, Result};
use crate::linalg::{self, SqMat};
use crate::measures::EmpiricalMeasure;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Uniform derivative bounds declared by a model and audited on samples.
///
/// Naming: `c_px` bounds |D2_{px}H|, `c_ppx` bounds the third derivative
/// tensor with two momentum slots and one space slot, `c_pmu` bounds the
/// measure kernel |D2_{p mu}H|, `c_pmuxt` bounds |D3_{p mu xtilde}H|.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBounds {
    pub c_px: f64,
    pub c_pmu: f64,
    pub c_pp: f64,
    pub c_ppx: f64,
    pub c_ppp: f64,
    pub c_pmuxt: f64,
    pub c_xx: f64,
    pub c_xp: f64,
    pub c_xxx: f64,
    pub c_xpp: f64,
    pub c_xxp: f64,
    pub c_xmuxt: f64,
}

/// Third-derivative kernels, each already contracted against a supplied
/// vector the way the drift expansions of the confining functionals use
/// them. Index conventions (entries of the returned matrix):
///
/// - `d3_ppx(v)`:  M_ij = sum_k v_k d3 H / dp_k dp_i dx_j
/// - `d3_ppp(v)`:  M_ij = sum_k v_k d3 H / dp_i dp_j dp_k
/// - `d3_xxp(v)`:  M_ij = sum_k v_k d3 H / dx_k dx_j dp_i
/// - `d3_xpp(v)`:  M_ij = sum_k v_k d3 H / dx_k dp_i dp_j
///
/// `grad_p_laplacian_x` is D_p trace[D2_xx H] and `grad_x_laplacian_x` is
/// D_x trace[D2_xx H]. The two measure kernels return the full trace over
/// the (mu, xtilde) index pair after contracting the leading slot with `v`.
pub trait ThirdKernels: Send + Sync {
    fn grad_p_laplacian_x(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> Vec<f64>;
    fn grad_x_laplacian_x(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> Vec<f64>;
    fn d3_ppp(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure, v: &[f64]) -> SqMat;
    fn d3_ppx(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure, v: &[f64]) -> SqMat;
    fn d3_xxp(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure, v: &[f64]) -> SqMat;
    fn d3_xpp(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure, v: &[f64]) -> SqMat;
    fn d3_p_mu_xtilde_trace(
        &self,
        x: &[f64],
        p: &[f64],
        mu: &EmpiricalMeasure,
        xtilde: &[f64],
        v: &[f64],
    ) -> f64;
    fn d3_x_mu_xtilde_trace(
        &self,
        x: &[f64],
        p: &[f64],
        mu: &EmpiricalMeasure,
        xtilde: &[f64],
        v: &[f64],
    ) -> f64;
}

/// The model abstraction. `hess_px_h` stores (i, j) = d2 H / dp_i dx_j;
/// `kernel_p_mu` stores (i, j) = d_{p_i} (D_mu H)_j(x, p, mu, xtilde).
pub trait MfgModel: Send + Sync {
    fn dim(&self) -> usize;
    fn hamiltonian(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> f64;
    fn grad_x_h(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> Vec<f64>;
    fn grad_p_h(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> Vec<f64>;
    fn hess_xx_h(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> SqMat;
    fn hess_pp_h(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> SqMat;
    fn hess_px_h(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> SqMat;
    fn kernel_p_mu(
        &self,
        x: &[f64],
        p: &[f64],
        mu: &EmpiricalMeasure,
        xtilde: &[f64],
    ) -> SqMat;
    fn kernel_x_mu(
        &self,
        x: &[f64],
        p: &[f64],
        mu: &EmpiricalMeasure,
        xtilde: &[f64],
    ) -> SqMat;
    fn third_kernels(&self) -> Option<&dyn ThirdKernels> {
        None
    }
    fn final_cost_g(&self, x: &[f64], mu: &EmpiricalMeasure) -> f64;
    fn grad_x_g(&self, x: &[f64], mu: &EmpiricalMeasure) -> Vec<f64>;
    fn hess_xx_g(&self, x: &[f64], mu: &EmpiricalMeasure) -> SqMat;
    fn derivative_bounds(&self) -> DerivativeBounds;
    /// Closed-form Legendre transform when H is quadratic in p.
    fn closed_lagrangian(&self, _x: &[f64], _v: &[f64], _mu: &EmpiricalMeasure) -> Option<f64> {
        None
    }
}

/// The maximizer p* of p -> v . p - H(x, p, mu), found by damped Newton on
/// the stationarity condition D_p H = v.
pub fn legendre_maximizer(
    model: &dyn MfgModel,
    x: &[f64],
    v: &[f64],
    mu: &EmpiricalMeasure,
) -> Result<Vec<f64>> {
    const TOL: f64 = 1e-10;
    let mut p = v.to_vec();
    let mut res = linalg::sub(v, &model.grad_p_h(x, &p, mu));
    let mut res_norm = linalg::norm(&res);
    for _ in 0..100 {
        if res_norm <= TOL {
            return Ok(p);
        }
        let hess = model.hess_pp_h(x, &p, mu);
        let step = linalg::solve_dense(&hess, &res)
            .ok_or_else(|| Error::NewtonDiverged("singular p-Hessian".into()))?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = p.clone();
            linalg::axpy(lambda, &step, &mut trial);
            let trial_res = linalg::sub(v, &model.grad_p_h(x, &trial, mu));
            let trial_norm = linalg::norm(&trial_res);
            if trial_norm < res_norm {
                p = trial;
                res = trial_res;
                res_norm = trial_norm;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonDiverged(format!(
                "line search stalled at residual {res_norm:e}"
            )));
        }
    }
    if res_norm <= TOL {
        Ok(p)
    } else {
        Err(Error::NewtonDiverged(format!(
            "residual {res_norm:e} after 100 iterations"
        )))
    }
}

/// Legendre transform L(x, v, mu) = sup_p { v . p - H(x, p, mu) }.
pub fn lagrangian(
    model: &dyn MfgModel,
    x: &[f64],
    v: &[f64],
    mu: &EmpiricalMeasure,
) -> Result<f64> {
    if let Some(l) = model.closed_lagrangian(x, v, mu) {
        return Ok(l);
    }
    let p = legendre_maximizer(model, x, v, mu)?;
    Ok(linalg::dot(v, &p) - model.hamiltonian(x, &p, mu))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub declared: f64,
    pub measured: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthCheck {
    pub name: String,
    pub best_constant: f64,
}

/// Finite-difference audit of every supplied derivative plus the declared
/// uniform bounds and the linear-growth constants of the first
/// derivatives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivativeAuditReport {
    pub samples: usize,
    pub tol: f64,
    pub checks: Vec<AuditCheck>,
    pub bounds: Vec<BoundCheck>,
    pub growth: Vec<GrowthCheck>,
    pub all_pass: bool,
}

const AUDIT_SEED: u64 = 0xA0D17;
const FD_EPS: f64 = 1e-5;
/// Declared bounds may be attained exactly; allow finite-difference and
/// sampling slack when comparing.
const BOUND_SLACK: f64 = 1e-6;

struct AuditSample {
    x: Vec<f64>,
    p: Vec<f64>,
    mu: EmpiricalMeasure,
}

fn audit_samples(dim: usize, samples: usize, rng: &mut ChaCha8Rng) -> Vec<AuditSample> {
    (0..samples)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let n = 8;
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            AuditSample {
                x,
                p,
                mu: EmpiricalMeasure::uniform(dim, pts).expect("audit cloud"),
            }
        })
        .collect()
}

fn rel_err(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / analytic.abs().max(1.0)
}

/// Moves particle `k` of `mu` by `eps` along coordinate `j`.
fn perturb_particle(mu: &EmpiricalMeasure, k: usize, j: usize, eps: f64) -> EmpiricalMeasure {
    let dim = mu.dim();
    let mut pts: Vec<Vec<f64>> = (0..mu.len()).map(|i| mu.point(i).to_vec()).collect();
    pts[k][j] += eps;
    EmpiricalMeasure::new(dim, pts, mu.weights().to_vec()).expect("perturbed cloud")
}

pub fn audit_derivatives(
    model: &dyn MfgModel,
    samples: usize,
    tol: f64,
) -> DerivativeAuditReport {
    let dim = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(AUDIT_SEED);
    let pts = audit_samples(dim, samples.max(1), &mut rng);

    let mut checks: Vec<AuditCheck> = Vec::new();
    let mut record = |name: &str, err: f64| {
        checks.push(AuditCheck {
            name: name.into(),
            max_rel_err: err,
            pass: err <= tol,
        });
    };

    let mut e_grad_p = 0.0f64;
    let mut e_grad_x = 0.0f64;
    let mut e_hess_pp = 0.0f64;
    let mut e_hess_xx = 0.0f64;
    let mut e_hess_px = 0.0f64;
    let mut e_grad_g = 0.0f64;
    let mut e_hess_g = 0.0f64;
    let mut e_ker_p = 0.0f64;
    let mut e_ker_x = 0.0f64;

    for s in &pts {
        let (x, p, mu) = (&s.x, &s.p, &s.mu);
        let gp = model.grad_p_h(x, p, mu);
        let gx = model.grad_x_h(x, p, mu);
        let hpp = model.hess_pp_h(x, p, mu);
        let hxx = model.hess_xx_h(x, p, mu);
        let hpx = model.hess_px_h(x, p, mu);
        let gg = model.grad_x_g(x, mu);
        let hg = model.hess_xx_g(x, mu);

        for i in 0..dim {
            let mut pp = p.clone();
            pp[i] += FD_EPS;
            let mut pm = p.clone();
            pm[i] -= FD_EPS;
            let fd = (model.hamiltonian(x, &pp, mu) - model.hamiltonian(x, &pm, mu))
                / (2.0 * FD_EPS);
            e_grad_p = e_grad_p.max(rel_err(fd, gp[i]));

            let mut xp = x.clone();
            xp[i] += FD_EPS;
            let mut xm = x.clone();
            xm[i] -= FD_EPS;
            let fdx = (model.hamiltonian(&xp, p, mu) - model.hamiltonian(&xm, p, mu))
                / (2.0 * FD_EPS);
            e_grad_x = e_grad_x.max(rel_err(fdx, gx[i]));

            let fdg =
                (model.final_cost_g(&xp, mu) - model.final_cost_g(&xm, mu)) / (2.0 * FD_EPS);
            e_grad_g = e_grad_g.max(rel_err(fdg, gg[i]));

            // Rows of the Hessians by differencing the gradients.
            let gp_p = model.grad_p_h(x, &pp, mu);
            let gp_m = model.grad_p_h(x, &pm, mu);
            let gx_p = model.grad_x_h(&xp, p, mu);
            let gx_m = model.grad_x_h(&xm, p, mu);
            let gpx_p = model.grad_p_h(&xp, p, mu);
            let gpx_m = model.grad_p_h(&xm, p, mu);
            let gg_p = model.grad_x_g(&xp, mu);
            let gg_m = model.grad_x_g(&xm, mu);
            for r in 0..dim {
                e_hess_pp = e_hess_pp.max(rel_err(
                    (gp_p[r] - gp_m[r]) / (2.0 * FD_EPS),
                    hpp.get(r, i),
                ));
                e_hess_xx = e_hess_xx.max(rel_err(
                    (gx_p[r] - gx_m[r]) / (2.0 * FD_EPS),
                    hxx.get(r, i),
                ));
                e_hess_px = e_hess_px.max(rel_err(
                    (gpx_p[r] - gpx_m[r]) / (2.0 * FD_EPS),
                    hpx.get(r, i),
                ));
                e_hess_g = e_hess_g.max(rel_err(
                    (gg_p[r] - gg_m[r]) / (2.0 * FD_EPS),
                    hg.get(r, i),
                ));
            }
        }

        // Measure kernels through single-particle perturbations: moving
        // particle k by eps e_j changes f(mu) by w_k eps (D_mu f)_j(x_k).
        let k = 0;
        let w = mu.weight(k);
        let xt = mu.point(k).to_vec();
        let kp = model.kernel_p_mu(x, p, mu, &xt);
        let kx = model.kernel_x_mu(x, p, mu, &xt);
        for j in 0..dim {
            let mu_p = perturb_particle(mu, k, j, FD_EPS);
            let mu_m = perturb_particle(mu, k, j, -FD_EPS);
            let gp_p = model.grad_p_h(x, p, &mu_p);
            let gp_m = model.grad_p_h(x, p, &mu_m);
            let gx_p = model.grad_x_h(x, p, &mu_p);
            let gx_m = model.grad_x_h(x, p, &mu_m);
            for i in 0..dim {
                e_ker_p = e_ker_p.max(rel_err(
                    (gp_p[i] - gp_m[i]) / (2.0 * FD_EPS * w),
                    kp.get(i, j),
                ));
                e_ker_x = e_ker_x.max(rel_err(
                    (gx_p[i] - gx_m[i]) / (2.0 * FD_EPS * w),
                    kx.get(i, j),
                ));
            }
        }
    }

    record("grad_p_H", e_grad_p);
    record("grad_x_H", e_grad_x);
    record("hess_pp_H", e_hess_pp);
    record("hess_xx_H", e_hess_xx);
    record("hess_px_H", e_hess_px);
    record("grad_x_g", e_grad_g);
    record("hess_xx_g", e_hess_g);
    record("kernel_p_mu", e_ker_p);
    record("kernel_x_mu", e_ker_x);

    if let Some(third) = model.third_kernels() {
        let mut e_ppp = 0.0f64;
        let mut e_ppx = 0.0f64;
        let mut e_xxp = 0.0f64;
        let mut e_xpp = 0.0f64;
        let mut e_plap = 0.0f64;
        let mut e_xlap = 0.0f64;
        let mut e_pmuxt = 0.0f64;
        let mut dir_rng = ChaCha8Rng::seed_from_u64(AUDIT_SEED ^ 0x77);
        for s in &pts {
            let (x, p, mu) = (&s.x, &s.p, &s.mu);
            let v: Vec<f64> = (0..dim).map(|_| dir_rng.gen_range(-1.0..1.0)).collect();
            let mut pp = p.clone();
            let mut pm = p.clone();
            let mut xp = x.clone();
            let mut xm = x.clone();
            for i in 0..dim {
                pp[i] += FD_EPS * v[i];
                pm[i] -= FD_EPS * v[i];
                xp[i] += FD_EPS * v[i];
                xm[i] -= FD_EPS * v[i];
            }
            // d3_ppp: directional derivative of hess_pp in p along v.
            let a = model.hess_pp_h(x, &pp, mu);
            let b = model.hess_pp_h(x, &pm, mu);
            let m = third.d3_ppp(x, p, mu, &v);
            for i in 0..dim * dim {
                let fd = (a.data[i] - b.data[i]) / (2.0 * FD_EPS);
                e_ppp = e_ppp.max(rel_err(fd, m.data[i]));
            }
            // d3_ppx: directional derivative of hess_px in p along v.
            let a = model.hess_px_h(x, &pp, mu);
            let b = model.hess_px_h(x, &pm, mu);
            let m = third.d3_ppx(x, p, mu, &v);
            for i in 0..dim * dim {
                let fd = (a.data[i] - b.data[i]) / (2.0 * FD_EPS);
                e_ppx = e_ppx.max(rel_err(fd, m.data[i]));
            }
            // d3_xxp: directional derivative of hess_px in x along v.
            let a = model.hess_px_h(&xp, p, mu);
            let b = model.hess_px_h(&xm, p, mu);
            let m = third.d3_xxp(x, p, mu, &v);
            for i in 0..dim * dim {
                let fd = (a.data[i] - b.data[i]) / (2.0 * FD_EPS);
                e_xxp = e_xxp.max(rel_err(fd, m.data[i]));
            }
            // d3_xpp: directional derivative of hess_pp in x along v.
            let a = model.hess_pp_h(&xp, p, mu);
            let b = model.hess_pp_h(&xm, p, mu);
            let m = third.d3_xpp(x, p, mu, &v);
            for i in 0..dim * dim {
                let fd = (a.data[i] - b.data[i]) / (2.0 * FD_EPS);
                e_xpp = e_xpp.max(rel_err(fd, m.data[i]));
            }
            // Laplacian gradients against trace differences.
            let gpl = third.grad_p_laplacian_x(x, p, mu);
            let gxl = third.grad_x_laplacian_x(x, p, mu);
            for i in 0..dim {
                let mut p_pl = p.clone();
                p_pl[i] += FD_EPS;
                let mut p_mi = p.clone();
                p_mi[i] -= FD_EPS;
                let fd = (model.hess_xx_h(x, &p_pl, mu).trace()
                    - model.hess_xx_h(x, &p_mi, mu).trace())
                    / (2.0 * FD_EPS);
                e_plap = e_plap.max(rel_err(fd, gpl[i]));
                let mut x_pl = x.clone();
                x_pl[i] += FD_EPS;
                let mut x_mi = x.clone();
                x_mi[i] -= FD_EPS;
                let fd = (model.hess_xx_h(&x_pl, p, mu).trace()
                    - model.hess_xx_h(&x_mi, p, mu).trace())
                    / (2.0 * FD_EPS);
                e_xlap = e_xlap.max(rel_err(fd, gxl[i]));
            }
            // Measure third kernel: trace of x-tilde derivative of kernel_p_mu.
            let xt = s.mu.point(0).to_vec();
            let mut fd_tr = 0.0;
            for j in 0..dim {
                let mut xt_p = xt.clone();
                xt_p[j] += FD_EPS;
                let mut xt_m = xt.clone();
                xt_m[j] -= FD_EPS;
                let kp = model.kernel_p_mu(x, p, mu, &xt_p);
                let km = model.kernel_p_mu(x, p, mu, &xt_m);
                for l in 0..dim {
                    fd_tr += v[l] * (kp.get(l, j) - km.get(l, j)) / (2.0 * FD_EPS);
                }
            }
            let an = third.d3_p_mu_xtilde_trace(x, p, mu, &xt, &v);
            e_pmuxt = e_pmuxt.max(rel_err(fd_tr, an));
        }
        record("d3_ppp", e_ppp);
        record("d3_ppx", e_ppx);
        record("d3_xxp", e_xxp);
        record("d3_xpp", e_xpp);
        record("grad_p_laplacian_x", e_plap);
        record("grad_x_laplacian_x", e_xlap);
        record("d3_p_mu_xtilde", e_pmuxt);
    }

    // Declared uniform bounds against sampled spectral norms.
    let declared = model.derivative_bounds();
    let mut m_px = 0.0f64;
    let mut m_pp = 0.0f64;
    let mut m_xx = 0.0f64;
    let mut m_pmu = 0.0f64;
    let mut m_xmu = 0.0f64;
    let mut growth_p = 0.0f64;
    let mut growth_x = 0.0f64;
    let mut growth_g = 0.0f64;
    for s in &pts {
        let (x, p, mu) = (&s.x, &s.p, &s.mu);
        m_px = m_px.max(linalg::spectral_norm(&model.hess_px_h(x, p, mu)));
        m_pp = m_pp.max(linalg::spectral_norm(&model.hess_pp_h(x, p, mu)));
        m_xx = m_xx.max(linalg::spectral_norm(&model.hess_xx_h(x, p, mu)));
        m_pmu = m_pmu.max(linalg::spectral_norm(&model.kernel_p_mu(
            x,
            p,
            mu,
            &mu.point(0).to_vec(),
        )));
        m_xmu = m_xmu.max(linalg::spectral_norm(&model.kernel_x_mu(
            x,
            p,
            mu,
            &mu.point(0).to_vec(),
        )));
        let scale = 1.0 + mu.moment(1).unwrap_or(0.0) + linalg::norm(x) + linalg::norm(p);
        growth_p = growth_p.max(linalg::norm(&model.grad_p_h(x, p, mu)) / scale);
        growth_x = growth_x.max(linalg::norm(&model.grad_x_h(x, p, mu)) / scale);
        let gscale = 1.0 + mu.moment(1).unwrap_or(0.0) + linalg::norm(x);
        growth_g = growth_g.max(linalg::norm(&model.grad_x_g(x, mu)) / gscale);
    }
    let bound = |name: &str, declared: f64, measured: f64| BoundCheck {
        name: name.into(),
        declared,
        measured,
        pass: measured <= declared + BOUND_SLACK,
    };
    let bounds = vec![
        bound("c_px", declared.c_px, m_px),
        bound("c_pp", declared.c_pp, m_pp),
        bound("c_xx", declared.c_xx, m_xx),
        bound("c_pmu", declared.c_pmu, m_pmu),
    ];
    let growth = vec![
        GrowthCheck {
            name: "grad_p_H_linear_growth".into(),
            best_constant: growth_p,
        },
        GrowthCheck {
            name: "grad_x_H_linear_growth".into(),
            best_constant: growth_x,
        },
        GrowthCheck {
            name: "grad_x_g_linear_growth".into(),
            best_constant: growth_g,
        },
        GrowthCheck {
            name: "kernel_x_mu_sup".into(),
            best_constant: m_xmu,
        },
    ];

    let all_pass = checks.iter().all(|c| c.pass) && bounds.iter().all(|b| b.pass);
    DerivativeAuditReport {
        samples: samples.max(1),
        tol,
        checks,
        bounds,
        growth,
        all_pass,
    }
}
