//! Built-in model families.
//!
//! All measure couplings act through the barycenter of mu, which keeps the
//! Wasserstein-derivative kernels closed-form while still exercising
//! non-separable structure.
//!
//! - `mechanical_quadratic`: H = |p|^2/2 - f with
//!   f(x, mu) = (c0/2)|x|^2 + a x . mean(mu), final cost g = (gamma/2)|x|^2.
//! - `riccati_lq`: H = |p|^2/2 - (c0/2)|x|^2, g = (gamma/2)|x|^2,
//!   measure-independent; the quadratic-ansatz reference model.
//! - `remark_translation`: d = 1, H = p^2/2 - (x - mean(mu))^2,
//!   g = (sqrt2/2)(x + z)^2; displacement monotone with constant 0 and a
//!   continuum of translated stationary equilibria.
//! - `nonseparable_c0`: H = H0 + (C0/2)(|p|^2 - |x|^2) with a bounded
//!   trigonometric H0 coupled to mean(mu) through a tanh link; C0 must
//!   satisfy the admissibility inequalities for the confining properties.

use super::{DerivativeBounds, MfgModel, ThirdKernels};
use crate::error::{Error, Result};
use crate::linalg::SqMat;
use crate::measures::EmpiricalMeasure;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    MechanicalQuadratic,
    NonseparableC0,
    RemarkTranslation,
    RiccatiLq,
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mechanical_quadratic" => Ok(Self::MechanicalQuadratic),
            "nonseparable_c0" => Ok(Self::NonseparableC0),
            "remark_translation" => Ok(Self::RemarkTranslation),
            "riccati_lq" => Ok(Self::RiccatiLq),
            other => Err(Error::InvalidParameters(format!(
                "unknown model family `{other}`"
            ))),
        }
    }
}

/// Named family plus a parameter map and the noise intensity beta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltinModelSpec {
    pub family: ModelFamily,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub beta: f64,
}

impl BuiltinModelSpec {
    pub fn new(family: ModelFamily) -> Self {
        Self {
            family,
            params: BTreeMap::new(),
            beta: 0.0,
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn riccati_lq(c0: f64, gamma: f64) -> Self {
        Self::new(ModelFamily::RiccatiLq)
            .with_param("c0", c0)
            .with_param("gamma", gamma)
    }

    pub fn mechanical(c0: f64, a: f64, gamma: f64) -> Self {
        Self::new(ModelFamily::MechanicalQuadratic)
            .with_param("c0", c0)
            .with_param("a", a)
            .with_param("gamma", gamma)
    }

    pub fn remark_translation(beta: f64) -> Self {
        Self::new(ModelFamily::RemarkTranslation).with_beta(beta)
    }

    pub fn nonseparable(c_big: f64, a: f64, b_p: f64, b_x: f64, beta: f64) -> Self {
        Self::new(ModelFamily::NonseparableC0)
            .with_param("C0", c_big)
            .with_param("a", a)
            .with_param("b_p", b_p)
            .with_param("b_x", b_x)
            .with_beta(beta)
    }

    fn param(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    fn dim(&self) -> usize {
        self.param("dim", 1.0) as usize
    }
}

/// Builds the model described by `spec`, validating the family's
/// admissible parameter range.
pub fn build_model(spec: &BuiltinModelSpec) -> Result<Box<dyn MfgModel>> {
    if spec.beta < 0.0 {
        return Err(Error::InvalidParameters("beta must be nonnegative".into()));
    }
    let dim = spec.dim();
    if dim == 0 || dim > 3 {
        return Err(Error::InvalidParameters(format!(
            "dim must be in 1..=3, got {dim}"
        )));
    }
    match spec.family {
        ModelFamily::MechanicalQuadratic => {
            let c0 = spec.param("c0", 1.0);
            let a = spec.param("a", 0.0);
            let gamma = spec.param("gamma", 1.0);
            if c0 <= 0.0 || a < 0.0 || gamma < 0.0 {
                return Err(Error::InvalidParameters(
                    "mechanical_quadratic needs c0 > 0, a >= 0, gamma >= 0".into(),
                ));
            }
            Ok(Box::new(MechanicalQuadratic::new(dim, c0, a, gamma)))
        }
        ModelFamily::RiccatiLq => {
            let c0 = spec.param("c0", 1.0);
            let gamma = spec.param("gamma", 1.0);
            if c0 <= 0.0 || gamma <= 0.0 {
                return Err(Error::InvalidParameters(
                    "riccati_lq needs c0 > 0 and gamma > 0".into(),
                ));
            }
            Ok(Box::new(RiccatiLq::new(dim, c0, gamma)))
        }
        ModelFamily::RemarkTranslation => {
            if dim != 1 {
                return Err(Error::InvalidParameters(
                    "remark_translation is a one-dimensional model".into(),
                ));
            }
            let z = spec.param("z", 0.0);
            Ok(Box::new(RemarkTranslation::new(z)))
        }
        ModelFamily::NonseparableC0 => {
            let c_big = spec.param("C0", 2.5);
            let a = spec.param("a", 0.2);
            let b_p = spec.param("b_p", 0.2);
            let b_x = spec.param("b_x", 0.2);
            let gamma = spec.param("gamma", 1.0);
            if c_big <= 0.0 || a < 0.0 || b_p < 0.0 || b_x < 0.0 || gamma < 0.0 {
                return Err(Error::InvalidParameters(
                    "nonseparable_c0 needs C0 > 0 and nonnegative couplings".into(),
                ));
            }
            // Strong p-convexity of H = H0 + C0/2 |p|^2.
            if c_big <= a + b_p {
                return Err(Error::InvalidParameters(format!(
                    "C0 = {c_big} must exceed the p-Hessian bound of H0 ({})",
                    a + b_p
                )));
            }
            // Admissibility inequalities for the confining properties: the
            // compensation slope must win over the cross terms, and C0 must
            // dominate 5 beta + c_px^2 + c_pmu^2.
            let c0pp = a + b_p;
            if c_big * c_big - c_big * c0pp - c_big / 2.0 - 0.5 <= 0.0 {
                return Err(Error::InvalidParameters(format!(
                    "C0 = {c_big} violates C0^2 - C0 c_pp - C0/2 - 1/2 > 0"
                )));
            }
            if c_big <= 5.0 * spec.beta + a * a + b_p * b_p {
                return Err(Error::InvalidParameters(format!(
                    "C0 = {c_big} must exceed 5 beta + c_px^2 + c_pmu^2 = {}",
                    5.0 * spec.beta + a * a + b_p * b_p
                )));
            }
            Ok(Box::new(NonseparableC0::new(dim, c_big, a, b_p, b_x, gamma)))
        }
    }
}

/// Third-derivative kernels that vanish identically (quadratic families).
struct ZeroKernels {
    dim: usize,
}

impl ThirdKernels for ZeroKernels {
    fn grad_p_laplacian_x(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure) -> Vec<f64> {
        vec![0.0; self.dim]
    }
    fn grad_x_laplacian_x(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure) -> Vec<f64> {
        vec![0.0; self.dim]
    }
    fn d3_ppp(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure, _: &[f64]) -> SqMat {
        SqMat::zeros(self.dim)
    }
    fn d3_ppx(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure, _: &[f64]) -> SqMat {
        SqMat::zeros(self.dim)
    }
    fn d3_xxp(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure, _: &[f64]) -> SqMat {
        SqMat::zeros(self.dim)
    }
    fn d3_xpp(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure, _: &[f64]) -> SqMat {
        SqMat::zeros(self.dim)
    }
    fn d3_p_mu_xtilde_trace(
        &self,
        _: &[f64],
        _: &[f64],
        _: &EmpiricalMeasure,
        _: &[f64],
        _: &[f64],
    ) -> f64 {
        0.0
    }
    fn d3_x_mu_xtilde_trace(
        &self,
        _: &[f64],
        _: &[f64],
        _: &EmpiricalMeasure,
        _: &[f64],
        _: &[f64],
    ) -> f64 {
        0.0
    }
}

// ---------------------------------------------------------------------
// mechanical_quadratic
// ---------------------------------------------------------------------

pub struct MechanicalQuadratic {
    dim: usize,
    c0: f64,
    a: f64,
    gamma: f64,
    zero: ZeroKernels,
}

impl MechanicalQuadratic {
    fn new(dim: usize, c0: f64, a: f64, gamma: f64) -> Self {
        Self {
            dim,
            c0,
            a,
            gamma,
            zero: ZeroKernels { dim },
        }
    }

    fn coupling(&self, x: &[f64], mu: &EmpiricalMeasure) -> f64 {
        let m = mu.mean();
        self.a * crate::linalg::dot(x, m)
    }

    fn f(&self, x: &[f64], mu: &EmpiricalMeasure) -> f64 {
        0.5 * self.c0 * crate::linalg::norm_sq(x) + self.coupling(x, mu)
    }
}

impl MfgModel for MechanicalQuadratic {
    fn dim(&self) -> usize {
        self.dim
    }
    fn hamiltonian(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> f64 {
        0.5 * crate::linalg::norm_sq(p) - self.f(x, mu)
    }
    fn grad_x_h(&self, x: &[f64], _p: &[f64], mu: &EmpiricalMeasure) -> Vec<f64> {
        let m = mu.mean();
        x.iter()
            .zip(m)
            .map(|(xi, mi)| -(self.c0 * xi + self.a * mi))
            .collect()
    }
    fn grad_p_h(&self, _x: &[f64], p: &[f64], _mu: &EmpiricalMeasure) -> Vec<f64> {
        p.to_vec()
    }
    fn hess_xx_h(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure) -> SqMat {
        SqMat::identity(self.dim).scale(-self.c0)
    }
    fn hess_pp_h(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure) -> SqMat {
        SqMat::identity(self.dim)
    }
    fn hess_px_h(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure) -> SqMat {
        SqMat::zeros(self.dim)
    }
    fn kernel_p_mu(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure, _: &[f64]) -> SqMat {
        SqMat::zeros(self.dim)
    }
    fn kernel_x_mu(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure, _: &[f64]) -> SqMat {
        SqMat::identity(self.dim).scale(-self.a)
    }
    fn third_kernels(&self) -> Option<&dyn ThirdKernels> {
        Some(&self.zero)
    }
    fn final_cost_g(&self, x: &[f64], _mu: &EmpiricalMeasure) -> f64 {
        0.5 * self.gamma * crate::linalg::norm_sq(x)
    }
    fn grad_x_g(&self, x: &[f64], _mu: &EmpiricalMeasure) -> Vec<f64> {
        x.iter().map(|xi| self.gamma * xi).collect()
    }
    fn hess_xx_g(&self, _: &[f64], _: &EmpiricalMeasure) -> SqMat {
        SqMat::identity(self.dim).scale(self.gamma)
    }
    fn derivative_bounds(&self) -> DerivativeBounds {
        DerivativeBounds {
            c_pp: 1.0,
            c_xx: self.c0,
            ..Default::default()
        }
    }
    fn closed_lagrangian(&self, x: &[f64], v: &[f64], mu: &EmpiricalMeasure) -> Option<f64> {
        Some(0.5 * crate::linalg::norm_sq(v) + self.f(x, mu))
    }
}

// ---------------------------------------------------------------------
// riccati_lq
// ---------------------------------------------------------------------

pub struct RiccatiLq {
    dim: usize,
    c0: f64,
    gamma: f64,
    zero: ZeroKernels,
}

impl RiccatiLq {
    fn new(dim: usize, c0: f64, gamma: f64) -> Self {
        Self {
            dim,
            c0,
            gamma,
            zero: ZeroKernels { dim },
        }
    }
}

impl MfgModel for RiccatiLq {
    fn dim(&self) -> usize {
        self.dim
    }
    fn hamiltonian(&self, x: &[f64], p: &[f64], _mu: &EmpiricalMeasure) -> f64 {
        0.5 * crate::linalg::norm_sq(p) - 0.5 * self.c0 * crate::linalg::norm_sq(x)
    }
    fn grad_x_h(&self, x: &[f64], _: &[f64], _: &EmpiricalMeasure) -> Vec<f64> {
        x.iter().map(|xi| -self.c0 * xi).collect()
    }
    fn grad_p_h(&self, _: &[f64], p: &[f64], _: &EmpiricalMeasure) -> Vec<f64> {
        p.to_vec()
    }
    fn hess_xx_h(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure) -> SqMat {
        SqMat::identity(self.dim).scale(-self.c0)
    }
    fn hess_pp_h(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure) -> SqMat {
        SqMat::identity(self.dim)
    }
    fn hess_px_h(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure) -> SqMat {
        SqMat::zeros(self.dim)
    }
    fn kernel_p_mu(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure, _: &[f64]) -> SqMat {
        SqMat::zeros(self.dim)
    }
    fn kernel_x_mu(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure, _: &[f64]) -> SqMat {
        SqMat::zeros(self.dim)
    }
    fn third_kernels(&self) -> Option<&dyn ThirdKernels> {
        Some(&self.zero)
    }
    fn final_cost_g(&self, x: &[f64], _: &EmpiricalMeasure) -> f64 {
        0.5 * self.gamma * crate::linalg::norm_sq(x)
    }
    fn grad_x_g(&self, x: &[f64], _: &EmpiricalMeasure) -> Vec<f64> {
        x.iter().map(|xi| self.gamma * xi).collect()
    }
    fn hess_xx_g(&self, _: &[f64], _: &EmpiricalMeasure) -> SqMat {
        SqMat::identity(self.dim).scale(self.gamma)
    }
    fn derivative_bounds(&self) -> DerivativeBounds {
        DerivativeBounds {
            c_pp: 1.0,
            c_xx: self.c0,
            ..Default::default()
        }
    }
    fn closed_lagrangian(&self, x: &[f64], v: &[f64], _mu: &EmpiricalMeasure) -> Option<f64> {
        Some(0.5 * crate::linalg::norm_sq(v) + 0.5 * self.c0 * crate::linalg::norm_sq(x))
    }
}

// ---------------------------------------------------------------------
// remark_translation
// ---------------------------------------------------------------------

pub struct RemarkTranslation {
    z: f64,
    zero: ZeroKernels,
}

impl RemarkTranslation {
    fn new(z: f64) -> Self {
        Self {
            z,
            zero: ZeroKernels { dim: 1 },
        }
    }
}

const SQRT2: f64 = std::f64::consts::SQRT_2;

impl MfgModel for RemarkTranslation {
    fn dim(&self) -> usize {
        1
    }
    fn hamiltonian(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> f64 {
        let d = x[0] - mu.mean()[0];
        0.5 * p[0] * p[0] - d * d
    }
    fn grad_x_h(&self, x: &[f64], _: &[f64], mu: &EmpiricalMeasure) -> Vec<f64> {
        vec![-2.0 * (x[0] - mu.mean()[0])]
    }
    fn grad_p_h(&self, _: &[f64], p: &[f64], _: &EmpiricalMeasure) -> Vec<f64> {
        vec![p[0]]
    }
    fn hess_xx_h(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure) -> SqMat {
        SqMat::from_rows(&[&[-2.0]])
    }
    fn hess_pp_h(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure) -> SqMat {
        SqMat::identity(1)
    }
    fn hess_px_h(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure) -> SqMat {
        SqMat::zeros(1)
    }
    fn kernel_p_mu(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure, _: &[f64]) -> SqMat {
        SqMat::zeros(1)
    }
    fn kernel_x_mu(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure, _: &[f64]) -> SqMat {
        SqMat::from_rows(&[&[2.0]])
    }
    fn third_kernels(&self) -> Option<&dyn ThirdKernels> {
        Some(&self.zero)
    }
    fn final_cost_g(&self, x: &[f64], _: &EmpiricalMeasure) -> f64 {
        let s = x[0] + self.z;
        0.5 * SQRT2 * s * s
    }
    fn grad_x_g(&self, x: &[f64], _: &EmpiricalMeasure) -> Vec<f64> {
        vec![SQRT2 * (x[0] + self.z)]
    }
    fn hess_xx_g(&self, _: &[f64], _: &EmpiricalMeasure) -> SqMat {
        SqMat::from_rows(&[&[SQRT2]])
    }
    fn derivative_bounds(&self) -> DerivativeBounds {
        DerivativeBounds {
            c_pp: 1.0,
            c_xx: 2.0,
            ..Default::default()
        }
    }
    fn closed_lagrangian(&self, x: &[f64], v: &[f64], mu: &EmpiricalMeasure) -> Option<f64> {
        let d = x[0] - mu.mean()[0];
        Some(0.5 * v[0] * v[0] + d * d)
    }
}

// ---------------------------------------------------------------------
// nonseparable_c0
// ---------------------------------------------------------------------

pub struct NonseparableC0 {
    dim: usize,
    c_big: f64,
    a: f64,
    b_p: f64,
    b_x: f64,
    gamma: f64,
}

impl NonseparableC0 {
    fn new(dim: usize, c_big: f64, a: f64, b_p: f64, b_x: f64, gamma: f64) -> Self {
        Self {
            dim,
            c_big,
            a,
            b_p,
            b_x,
            gamma,
        }
    }

    /// Bounded link of the component-averaged barycenter.
    fn link(&self, mu: &EmpiricalMeasure) -> (f64, f64) {
        let m = mu.mean();
        let mbar = m.iter().sum::<f64>() / self.dim as f64;
        let s = mbar.tanh();
        (s, 1.0 - s * s)
    }
}

impl MfgModel for NonseparableC0 {
    fn dim(&self) -> usize {
        self.dim
    }
    fn hamiltonian(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> f64 {
        let (s, _) = self.link(mu);
        let mut h0 = 0.0;
        for i in 0..self.dim {
            h0 += self.a * x[i].sin() * p[i].sin()
                + s * (self.b_p * p[i].sin() + self.b_x * x[i].sin());
        }
        h0 + 0.5 * self.c_big * (crate::linalg::norm_sq(p) - crate::linalg::norm_sq(x))
    }
    fn grad_x_h(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> Vec<f64> {
        let (s, _) = self.link(mu);
        (0..self.dim)
            .map(|i| {
                self.a * x[i].cos() * p[i].sin() + s * self.b_x * x[i].cos() - self.c_big * x[i]
            })
            .collect()
    }
    fn grad_p_h(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> Vec<f64> {
        let (s, _) = self.link(mu);
        (0..self.dim)
            .map(|i| {
                self.a * x[i].sin() * p[i].cos() + s * self.b_p * p[i].cos() + self.c_big * p[i]
            })
            .collect()
    }
    fn hess_xx_h(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> SqMat {
        let (s, _) = self.link(mu);
        let d: Vec<f64> = (0..self.dim)
            .map(|i| {
                -self.a * x[i].sin() * p[i].sin() - s * self.b_x * x[i].sin() - self.c_big
            })
            .collect();
        SqMat::diag(&d)
    }
    fn hess_pp_h(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> SqMat {
        let (s, _) = self.link(mu);
        let d: Vec<f64> = (0..self.dim)
            .map(|i| {
                -self.a * x[i].sin() * p[i].sin() - s * self.b_p * p[i].sin() + self.c_big
            })
            .collect();
        SqMat::diag(&d)
    }
    fn hess_px_h(&self, x: &[f64], p: &[f64], _mu: &EmpiricalMeasure) -> SqMat {
        let d: Vec<f64> = (0..self.dim)
            .map(|i| self.a * x[i].cos() * p[i].cos())
            .collect();
        SqMat::diag(&d)
    }
    fn kernel_p_mu(
        &self,
        x: &[f64],
        p: &[f64],
        mu: &EmpiricalMeasure,
        _xtilde: &[f64],
    ) -> SqMat {
        // (i, j) = d_{p_i} [ s'(mbar) / d * (b_p sum sin p + b_x sum sin x) ]_j
        let (_, sp) = self.link(mu);
        let _ = x;
        let mut m = SqMat::zeros(self.dim);
        for i in 0..self.dim {
            let row = sp / self.dim as f64 * self.b_p * p[i].cos();
            for j in 0..self.dim {
                m.set(i, j, row);
            }
        }
        m
    }
    fn kernel_x_mu(
        &self,
        x: &[f64],
        _p: &[f64],
        mu: &EmpiricalMeasure,
        _xtilde: &[f64],
    ) -> SqMat {
        let (_, sp) = self.link(mu);
        let mut m = SqMat::zeros(self.dim);
        for i in 0..self.dim {
            let row = sp / self.dim as f64 * self.b_x * x[i].cos();
            for j in 0..self.dim {
                m.set(i, j, row);
            }
        }
        m
    }
    fn third_kernels(&self) -> Option<&dyn ThirdKernels> {
        Some(self)
    }
    fn final_cost_g(&self, x: &[f64], _: &EmpiricalMeasure) -> f64 {
        0.5 * self.gamma * crate::linalg::norm_sq(x)
    }
    fn grad_x_g(&self, x: &[f64], _: &EmpiricalMeasure) -> Vec<f64> {
        x.iter().map(|xi| self.gamma * xi).collect()
    }
    fn hess_xx_g(&self, _: &[f64], _: &EmpiricalMeasure) -> SqMat {
        SqMat::identity(self.dim).scale(self.gamma)
    }
    fn derivative_bounds(&self) -> DerivativeBounds {
        DerivativeBounds {
            c_px: self.a,
            c_pmu: self.b_p,
            c_pp: self.c_big + self.a + self.b_p,
            c_ppx: self.a,
            c_ppp: self.a + self.b_p,
            c_pmuxt: 0.0,
            c_xx: self.c_big + self.a + self.b_x,
            c_xp: self.a,
            c_xxx: self.a + self.b_x,
            c_xpp: self.a,
            c_xxp: self.a,
            c_xmuxt: 0.0,
        }
    }
}

impl ThirdKernels for NonseparableC0 {
    fn grad_p_laplacian_x(&self, x: &[f64], p: &[f64], _mu: &EmpiricalMeasure) -> Vec<f64> {
        (0..self.dim)
            .map(|i| -self.a * x[i].sin() * p[i].cos())
            .collect()
    }
    fn grad_x_laplacian_x(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> Vec<f64> {
        let (s, _) = self.link(mu);
        (0..self.dim)
            .map(|i| -self.a * x[i].cos() * p[i].sin() - s * self.b_x * x[i].cos())
            .collect()
    }
    fn d3_ppp(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure, v: &[f64]) -> SqMat {
        let (s, _) = self.link(mu);
        let d: Vec<f64> = (0..self.dim)
            .map(|i| v[i] * (-self.a * x[i].sin() * p[i].cos() - s * self.b_p * p[i].cos()))
            .collect();
        SqMat::diag(&d)
    }
    fn d3_ppx(&self, x: &[f64], p: &[f64], _mu: &EmpiricalMeasure, v: &[f64]) -> SqMat {
        let d: Vec<f64> = (0..self.dim)
            .map(|i| v[i] * (-self.a * x[i].cos() * p[i].sin()))
            .collect();
        SqMat::diag(&d)
    }
    fn d3_xxp(&self, x: &[f64], p: &[f64], _mu: &EmpiricalMeasure, v: &[f64]) -> SqMat {
        let d: Vec<f64> = (0..self.dim)
            .map(|i| v[i] * (-self.a * x[i].sin() * p[i].cos()))
            .collect();
        SqMat::diag(&d)
    }
    fn d3_xpp(&self, x: &[f64], p: &[f64], _mu: &EmpiricalMeasure, v: &[f64]) -> SqMat {
        let d: Vec<f64> = (0..self.dim)
            .map(|i| v[i] * (-self.a * x[i].cos() * p[i].sin()))
            .collect();
        SqMat::diag(&d)
    }
    fn d3_p_mu_xtilde_trace(
        &self,
        _: &[f64],
        _: &[f64],
        _: &EmpiricalMeasure,
        _: &[f64],
        _: &[f64],
    ) -> f64 {
        0.0
    }
    fn d3_x_mu_xtilde_trace(
        &self,
        _: &[f64],
        _: &[f64],
        _: &EmpiricalMeasure,
        _: &[f64],
        _: &[f64],
    ) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{audit_derivatives, lagrangian, legendre_maximizer};

    fn cloud(dim: usize) -> EmpiricalMeasure {
        let pts = vec![vec![0.3; dim], vec![-0.8; dim], vec![1.4; dim]];
        EmpiricalMeasure::uniform(dim, pts).unwrap()
    }

    #[test]
    fn all_builtin_families_pass_the_regularity_audit() {
        let specs = vec![
            BuiltinModelSpec::riccati_lq(1.0, 2.0),
            BuiltinModelSpec::mechanical(1.0, 0.5, 1.0),
            BuiltinModelSpec::remark_translation(0.5),
            BuiltinModelSpec::nonseparable(2.5, 0.2, 0.2, 0.2, 0.25),
        ];
        for spec in specs {
            let model = build_model(&spec).unwrap();
            let report = audit_derivatives(model.as_ref(), 4, 1e-5);
            assert!(
                report.all_pass,
                "audit failed for {:?}: {:?}",
                spec.family, report
            );
        }
    }

    #[test]
    fn audit_flags_fault_injection() {
        struct Broken(RiccatiLq);
        impl MfgModel for Broken {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn hamiltonian(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> f64 {
                self.0.hamiltonian(x, p, mu)
            }
            fn grad_x_h(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> Vec<f64> {
                // Deliberately wrong by 10%.
                self.0.grad_x_h(x, p, mu).iter().map(|v| 1.1 * v).collect()
            }
            fn grad_p_h(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> Vec<f64> {
                self.0.grad_p_h(x, p, mu)
            }
            fn hess_xx_h(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> SqMat {
                self.0.hess_xx_h(x, p, mu)
            }
            fn hess_pp_h(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> SqMat {
                self.0.hess_pp_h(x, p, mu)
            }
            fn hess_px_h(&self, x: &[f64], p: &[f64], mu: &EmpiricalMeasure) -> SqMat {
                self.0.hess_px_h(x, p, mu)
            }
            fn kernel_p_mu(
                &self,
                x: &[f64],
                p: &[f64],
                mu: &EmpiricalMeasure,
                xt: &[f64],
            ) -> SqMat {
                self.0.kernel_p_mu(x, p, mu, xt)
            }
            fn kernel_x_mu(
                &self,
                x: &[f64],
                p: &[f64],
                mu: &EmpiricalMeasure,
                xt: &[f64],
            ) -> SqMat {
                self.0.kernel_x_mu(x, p, mu, xt)
            }
            fn final_cost_g(&self, x: &[f64], mu: &EmpiricalMeasure) -> f64 {
                self.0.final_cost_g(x, mu)
            }
            fn grad_x_g(&self, x: &[f64], mu: &EmpiricalMeasure) -> Vec<f64> {
                self.0.grad_x_g(x, mu)
            }
            fn hess_xx_g(&self, x: &[f64], mu: &EmpiricalMeasure) -> SqMat {
                self.0.hess_xx_g(x, mu)
            }
            fn derivative_bounds(&self) -> DerivativeBounds {
                self.0.derivative_bounds()
            }
        }
        let broken = Broken(RiccatiLq::new(1, 1.0, 1.0));
        let report = audit_derivatives(&broken, 4, 1e-5);
        let gx = report
            .checks
            .iter()
            .find(|c| c.name == "grad_x_H")
            .unwrap();
        assert!(!gx.pass && gx.max_rel_err > 1e-5);
    }

    #[test]
    fn riccati_audit_reports_exact_bounds() {
        let model = build_model(&BuiltinModelSpec::riccati_lq(1.5, 1.0)).unwrap();
        let report = audit_derivatives(model.as_ref(), 6, 1e-5);
        let cpp = report.bounds.iter().find(|b| b.name == "c_pp").unwrap();
        let cxx = report.bounds.iter().find(|b| b.name == "c_xx").unwrap();
        assert!((cpp.measured - 1.0).abs() < 1e-9);
        assert!((cxx.measured - 1.5).abs() < 1e-9);
    }

    #[test]
    fn remark_translation_kernel_bound_is_two() {
        let model = build_model(&BuiltinModelSpec::remark_translation(0.5)).unwrap();
        let report = audit_derivatives(model.as_ref(), 4, 1e-5);
        let kx = report
            .growth
            .iter()
            .find(|g| g.name == "kernel_x_mu_sup")
            .unwrap();
        assert!((kx.best_constant - 2.0).abs() < 1e-9);
    }

    #[test]
    fn lagrangian_quadratic_hand_value() {
        // H = |p|^2/2 - f with f(0, mu) = 3: L(0, v=2) = 2 + 3 = 5.
        struct Shifted;
        impl MfgModel for Shifted {
            fn dim(&self) -> usize {
                1
            }
            fn hamiltonian(&self, _x: &[f64], p: &[f64], _mu: &EmpiricalMeasure) -> f64 {
                0.5 * p[0] * p[0] - 3.0
            }
            fn grad_x_h(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure) -> Vec<f64> {
                vec![0.0]
            }
            fn grad_p_h(&self, _: &[f64], p: &[f64], _: &EmpiricalMeasure) -> Vec<f64> {
                vec![p[0]]
            }
            fn hess_xx_h(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure) -> SqMat {
                SqMat::zeros(1)
            }
            fn hess_pp_h(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure) -> SqMat {
                SqMat::identity(1)
            }
            fn hess_px_h(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure) -> SqMat {
                SqMat::zeros(1)
            }
            fn kernel_p_mu(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure, _: &[f64]) -> SqMat {
                SqMat::zeros(1)
            }
            fn kernel_x_mu(&self, _: &[f64], _: &[f64], _: &EmpiricalMeasure, _: &[f64]) -> SqMat {
                SqMat::zeros(1)
            }
            fn final_cost_g(&self, _: &[f64], _: &EmpiricalMeasure) -> f64 {
                0.0
            }
            fn grad_x_g(&self, _: &[f64], _: &EmpiricalMeasure) -> Vec<f64> {
                vec![0.0]
            }
            fn hess_xx_g(&self, _: &[f64], _: &EmpiricalMeasure) -> SqMat {
                SqMat::zeros(1)
            }
            fn derivative_bounds(&self) -> DerivativeBounds {
                DerivativeBounds::default()
            }
        }
        let mu = EmpiricalMeasure::dirac(&[0.0]);
        let l = lagrangian(&Shifted, &[0.0], &[2.0], &mu).unwrap();
        assert!((l - 5.0).abs() < 1e-9);
    }

    #[test]
    fn lagrangian_at_zero_velocity_is_minus_h_at_stationary_point() {
        // v = 0 with the p-slice minimized at p* = 0: L = -H(x, 0, mu).
        let model = build_model(&BuiltinModelSpec::riccati_lq(1.0, 1.0)).unwrap();
        let mu = cloud(1);
        let x = [0.7];
        let l = lagrangian(model.as_ref(), &x, &[0.0], &mu).unwrap();
        assert!((l + model.hamiltonian(&x, &[0.0], &mu)).abs() < 1e-12);
    }

    #[test]
    fn legendre_duality_roundtrip_on_newton_path() {
        let model = build_model(&BuiltinModelSpec::nonseparable(2.5, 0.2, 0.2, 0.2, 0.0)).unwrap();
        let mu = cloud(1);
        for (x, v) in [([0.4], [1.3]), ([-1.1], [-0.6]), ([2.0], [0.0])] {
            let p = legendre_maximizer(model.as_ref(), &x, &v, &mu).unwrap();
            let back = model.grad_p_h(&x, &p, &mu);
            assert!((back[0] - v[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn legendre_involution_identity() {
        // L(x, D_pH(x,p,mu), mu) = p . D_pH - H for every family.
        let specs = vec![
            BuiltinModelSpec::riccati_lq(1.0, 2.0),
            BuiltinModelSpec::mechanical(1.0, 0.5, 1.0),
            BuiltinModelSpec::remark_translation(0.5),
            BuiltinModelSpec::nonseparable(2.5, 0.2, 0.2, 0.2, 0.0),
        ];
        let mu = cloud(1);
        for spec in specs {
            let model = build_model(&spec).unwrap();
            for (x, p) in [([0.3], [0.9]), ([-1.2], [0.1]), ([0.0], [-1.7])] {
                let dp = model.grad_p_h(&x, &p, &mu);
                let lhs = lagrangian(model.as_ref(), &x, &dp, &mu).unwrap();
                let rhs = crate::linalg::dot(&p, &dp) - model.hamiltonian(&x, &p, &mu);
                assert!(
                    (lhs - rhs).abs() < 1e-8,
                    "involution broke for {:?}",
                    spec.family
                );
            }
        }
    }

    #[test]
    fn mechanical_without_coupling_has_zero_measure_kernel() {
        let model = build_model(&BuiltinModelSpec::mechanical(1.0, 0.0, 1.0)).unwrap();
        let mu = cloud(1);
        let k = model.kernel_p_mu(&[0.5], &[0.2], &mu, &[0.1]);
        let kx = model.kernel_x_mu(&[0.5], &[0.2], &mu, &[0.1]);
        assert_eq!(k.data, vec![0.0]);
        assert_eq!(kx.data, vec![0.0]);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(build_model(&BuiltinModelSpec::riccati_lq(-1.0, 1.0)).is_err());
        assert!(build_model(&BuiltinModelSpec::nonseparable(0.5, 0.4, 0.4, 0.4, 0.0)).is_err());
        let bad_dim = BuiltinModelSpec::remark_translation(0.1).with_param("dim", 2.0);
        assert!(build_model(&bad_dim).is_err());
    }
}
