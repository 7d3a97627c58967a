//! Empirical probability measures on R^d with moments, exact Wasserstein
//! distances and synchronous couplings.
//!
//! Particle clouds are the only representation of probability measures in
//! this crate. In one dimension W_p is computed exactly through the
//! monotone (sorted-quantile) coupling for arbitrary weights; in higher
//! dimension the exact optimal assignment is solved for equal-weight clouds
//! of equal size, capped so acceptance runs never fall back to a silent
//! approximation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::sync::OnceLock;

/// Default particle cap for the exact assignment solve in dimension >= 2.
pub const DEFAULT_ASSIGNMENT_CAP: usize = 512;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Weighted particle cloud representing an element of P_2(R^d).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    dim: usize,
    /// Flat row-major storage, `len * dim` entries.
    points: Vec<f64>,
    weights: Vec<f64>,
    /// Lazily computed barycenter; measures are immutable so this is safe
    /// to share across workers.
    #[serde(skip)]
    mean_cache: OnceLock<Vec<f64>>,
}

impl PartialEq for EmpiricalMeasure {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.points == other.points && self.weights == other.weights
    }
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch("dim must be positive".into()));
        }
        if points.is_empty() {
            return Err(Error::DimensionMismatch(
                "a measure needs at least one particle".into(),
            ));
        }
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} points vs {} weights",
                points.len(),
                weights.len()
            )));
        }
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "point of length {} in a dim-{} measure",
                    p.len(),
                    dim
                )));
            }
            flat.extend_from_slice(p);
        }
        Self::from_flat(dim, flat, weights)
    }

    pub fn from_flat(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || weights.is_empty() || points.len() != weights.len() * dim {
            return Err(Error::DimensionMismatch(
                "flat storage does not match dim * len".into(),
            ));
        }
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::DimensionMismatch(
                "weights must be nonnegative and finite".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::DimensionMismatch(format!(
                "weights sum to {sum}, expected 1 within {WEIGHT_SUM_TOL:e}"
            )));
        }
        Ok(Self {
            dim,
            points,
            weights,
            mean_cache: OnceLock::new(),
        })
    }

    /// Uniform weights 1/N.
    pub fn uniform(dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(dim, points, uniform_weights(n))
    }

    pub fn uniform_from_flat(dim: usize, points: Vec<f64>) -> Result<Self> {
        let n = points.len() / dim.max(1);
        Self::from_flat(dim, points, uniform_weights(n))
    }

    /// Point mass at `x`.
    pub fn dirac(x: &[f64]) -> Self {
        Self {
            dim: x.len(),
            points: x.to_vec(),
            weights: vec![1.0],
            mean_cache: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn flat_points(&self) -> &[f64] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(move |i| (self.point(i), self.weights[i]))
    }

    pub fn has_uniform_weights(&self) -> bool {
        let w0 = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - w0).abs() <= WEIGHT_SUM_TOL)
    }

    pub fn mean(&self) -> &[f64] {
        self.mean_cache.get_or_init(|| {
            let mut m = vec![0.0; self.dim];
            for (p, w) in self.iter() {
                for (mi, pi) in m.iter_mut().zip(p) {
                    *mi += w * pi;
                }
            }
            m
        })
    }

    /// p-moment M_p = (sum_i w_i |x_i|^p)^(1/p), p in {1, 2}.
    pub fn moment(&self, p: u32) -> Result<f64> {
        if p != 1 && p != 2 {
            return Err(Error::DimensionMismatch(format!(
                "moment order {p} unsupported, expected 1 or 2"
            )));
        }
        let s: f64 = self
            .iter()
            .map(|(x, w)| {
                let r = crate::linalg::norm(x);
                w * if p == 1 { r } else { r * r }
            })
            .sum();
        Ok(if p == 1 { s } else { s.sqrt() })
    }

    pub fn translate(&self, v: &[f64]) -> Self {
        assert_eq!(v.len(), self.dim);
        let mut points = self.points.clone();
        for chunk in points.chunks_mut(self.dim) {
            for (c, vi) in chunk.iter_mut().zip(v) {
                *c += vi;
            }
        }
        Self {
            dim: self.dim,
            points,
            weights: self.weights.clone(),
            mean_cache: OnceLock::new(),
        }
    }

    /// Columnar text format: header `dim,N`, then one `w,x1,...,xd` line per particle.
    pub fn write_columnar<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{},{}", self.dim, self.len())?;
        for (p, w) in self.iter() {
            let coords: Vec<String> = p.iter().map(|c| format!("{c}")).collect();
            writeln!(out, "{},{}", w, coords.join(","))?;
        }
        Ok(())
    }

    pub fn read_columnar<R: BufRead>(mut input: R) -> Result<Self> {
        let mut header = String::new();
        input.read_line(&mut header)?;
        let mut it = header.trim().split(',');
        let dim: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::ArtifactCorrupt("bad measure header".into()))?;
        let n: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::ArtifactCorrupt("bad measure header".into()))?;
        let mut points = Vec::with_capacity(n * dim);
        let mut weights = Vec::with_capacity(n);
        for _ in 0..n {
            let mut line = String::new();
            input.read_line(&mut line)?;
            let vals: Vec<f64> = line
                .trim()
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::ArtifactCorrupt(format!("bad particle line: {e}")))?;
            if vals.len() != dim + 1 {
                return Err(Error::ArtifactCorrupt(format!(
                    "particle line holds {} values, expected {}",
                    vals.len(),
                    dim + 1
                )));
            }
            weights.push(vals[0]);
            points.extend_from_slice(&vals[1..]);
        }
        Self::from_flat(dim, points, weights)
    }
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Exact W_p between two empirical measures, p in {1, 2}.
///
/// d = 1: monotone coupling on the weighted quantile decomposition,
/// exact for arbitrary weights. d >= 2: exact optimal assignment for
/// equal-weight clouds of equal size up to `cap` particles.
pub fn wasserstein(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: u32) -> Result<f64> {
    wasserstein_with_cap(mu, nu, p, DEFAULT_ASSIGNMENT_CAP)
}

pub fn wasserstein_with_cap(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    p: u32,
    cap: usize,
) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch(format!(
            "dim {} vs {}",
            mu.dim(),
            nu.dim()
        )));
    }
    if p != 1 && p != 2 {
        return Err(Error::DimensionMismatch(format!(
            "W_p supports p in {{1,2}}, got {p}"
        )));
    }
    if mu.dim() == 1 {
        return Ok(wasserstein_1d(mu, nu, p));
    }
    if mu.len() != nu.len() || !mu.has_uniform_weights() || !nu.has_uniform_weights() {
        return Err(Error::DimensionMismatch(
            "exact transport in dim >= 2 needs equal-size uniform clouds".into(),
        ));
    }
    if mu.len() > cap {
        return Err(Error::AssignmentTooLarge { n: mu.len(), cap });
    }
    let n = mu.len();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut c = 0.0;
            for (a, b) in mu.point(i).iter().zip(nu.point(j)) {
                c += (a - b) * (a - b);
            }
            cost[i * n + j] = if p == 1 { c.sqrt() } else { c };
        }
    }
    let assignment = min_cost_assignment(&cost, n);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum::<f64>()
        / n as f64;
    Ok(if p == 1 { total } else { total.sqrt() })
}

fn wasserstein_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: u32) -> f64 {
    let mut a: Vec<(f64, f64)> = mu.iter().map(|(x, w)| (x[0], w)).collect();
    let mut b: Vec<(f64, f64)> = nu.iter().map(|(x, w)| (x[0], w)).collect();
    a.sort_by(|u, v| u.0.total_cmp(&v.0));
    b.sort_by(|u, v| u.0.total_cmp(&v.0));
    let mut i = 0;
    let mut j = 0;
    let mut wa = a[0].1;
    let mut wb = b[0].1;
    let mut cost = 0.0;
    while i < a.len() && j < b.len() {
        let m = wa.min(wb);
        let d = (a[i].0 - b[j].0).abs();
        cost += m * if p == 1 { d } else { d * d };
        wa -= m;
        wb -= m;
        if wa <= 1e-18 {
            i += 1;
            if i < a.len() {
                wa = a[i].1;
            }
        }
        if wb <= 1e-18 {
            j += 1;
            if j < b.len() {
                wb = b[j].1;
            }
        }
    }
    if p == 1 {
        cost
    } else {
        cost.sqrt()
    }
}

/// Exact min-cost assignment (Jonker-Volgenant style shortest augmenting
/// paths with potentials). `cost` is row-major n x n. Returns col index per row.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    const INF: f64 = f64::INFINITY;
    // Potentials and matching follow the classic O(n^3) scheme with one
    // extra virtual row slot at index 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: row matched to column j (1-based)
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// How two equal-size clouds are paired into one sample space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CouplingMode {
    /// Pair particle i with particle i.
    Identity,
    /// Pair by sorted rank; d = 1 only, realizes the optimal monotone coupling.
    Monotone,
}

/// Index pairing interpreting two clouds as two random variables on one
/// uniform sample space. Deterministic.
pub fn couple_synchronous(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    mode: CouplingMode,
) -> Result<Vec<(usize, usize)>> {
    if mu.len() != nu.len() {
        return Err(Error::UnequalSupportSize(mu.len(), nu.len()));
    }
    if !mu.has_uniform_weights() || !nu.has_uniform_weights() {
        return Err(Error::UnequalSupportSize(mu.len(), nu.len()));
    }
    match mode {
        CouplingMode::Identity => Ok((0..mu.len()).map(|i| (i, i)).collect()),
        CouplingMode::Monotone => {
            if mu.dim() != 1 || nu.dim() != 1 {
                return Err(Error::DimensionMismatch(
                    "monotone coupling is defined in d = 1".into(),
                ));
            }
            let mut ia: Vec<usize> = (0..mu.len()).collect();
            let mut ib: Vec<usize> = (0..nu.len()).collect();
            ia.sort_by(|&x, &y| mu.point(x)[0].total_cmp(&mu.point(y)[0]));
            ib.sort_by(|&x, &y| nu.point(x)[0].total_cmp(&nu.point(y)[0]));
            Ok(ia.into_iter().zip(ib).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(points: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(1, points.iter().map(|x| vec![*x]).collect()).unwrap()
    }

    #[test]
    fn moment_point_mass_at_origin() {
        let mu = EmpiricalMeasure::dirac(&[0.0]);
        assert_eq!(mu.moment(2).unwrap(), 0.0);
    }

    #[test]
    fn moment_symmetric_unit_points() {
        let mu = m1(&[-1.0, 1.0]);
        assert!((mu.moment(2).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn moment_first_order_hand_value() {
        // uniform on {0, 2}: M_1 = 0.5*0 + 0.5*2 = 1
        let mu = m1(&[0.0, 2.0]);
        assert!((mu.moment(1).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wasserstein_identity() {
        let mu = m1(&[0.3, -1.2, 4.0]);
        assert_eq!(wasserstein(&mu, &mu, 2).unwrap(), 0.0);
    }

    #[test]
    fn wasserstein_translation_by_one() {
        let mu = m1(&[0.0, 1.0]);
        let nu = m1(&[1.0, 2.0]);
        assert!((wasserstein(&mu, &nu, 2).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wasserstein_sorted_coupling_hand_value() {
        // mu uniform on {0,2}, nu = delta_1 doubled: W_2^2 = (1 + 1)/2 = 1
        let mu = m1(&[0.0, 2.0]);
        let nu = m1(&[1.0, 1.0]);
        assert!((wasserstein(&mu, &nu, 2).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wasserstein_dimension_mismatch() {
        let mu = m1(&[0.0]);
        let nu = EmpiricalMeasure::dirac(&[0.0, 0.0]);
        assert!(matches!(
            wasserstein(&mu, &nu, 2),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn wasserstein_assignment_cap() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 0.0]).collect();
        let mu = EmpiricalMeasure::uniform(2, pts.clone()).unwrap();
        let nu = EmpiricalMeasure::uniform(2, pts).unwrap();
        assert!(matches!(
            wasserstein_with_cap(&mu, &nu, 2, 4),
            Err(Error::AssignmentTooLarge { n: 6, cap: 4 })
        ));
    }

    #[test]
    fn assignment_matches_bruteforce() {
        // 2-d clouds, all 4! permutations enumerated as the oracle.
        let mu = EmpiricalMeasure::uniform(
            2,
            vec![
                vec![0.0, 0.0],
                vec![1.0, 0.5],
                vec![-2.0, 1.0],
                vec![0.7, -0.3],
            ],
        )
        .unwrap();
        let nu = EmpiricalMeasure::uniform(
            2,
            vec![
                vec![2.0, 0.1],
                vec![-1.0, -1.0],
                vec![0.4, 0.4],
                vec![1.5, 1.5],
            ],
        )
        .unwrap();
        let got = wasserstein(&mu, &nu, 2).unwrap();
        let mut best = f64::INFINITY;
        let idx = [0usize, 1, 2, 3];
        let perms = permutations(&idx);
        for perm in perms {
            let c: f64 = (0..4)
                .map(|i| {
                    let d0 = mu.point(i)[0] - nu.point(perm[i])[0];
                    let d1 = mu.point(i)[1] - nu.point(perm[i])[1];
                    d0 * d0 + d1 * d1
                })
                .sum::<f64>()
                / 4.0;
            best = best.min(c.sqrt());
        }
        assert!((got - best).abs() < 1e-12);
    }

    fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for (i, &x) in items.iter().enumerate() {
            let mut rest = items.to_vec();
            rest.remove(i);
            for mut tail in permutations(&rest) {
                tail.insert(0, x);
                out.push(tail);
            }
        }
        out
    }

    #[test]
    fn couple_identity_default() {
        let mu = m1(&[1.0, 2.0, 3.0]);
        let nu = m1(&[4.0, 5.0, 6.0]);
        assert_eq!(
            couple_synchronous(&mu, &nu, CouplingMode::Identity).unwrap(),
            vec![(0, 0), (1, 1), (2, 2)]
        );
    }

    #[test]
    fn couple_monotone_by_rank() {
        let mu = m1(&[3.0, 1.0, 2.0]);
        let nu = m1(&[10.0, 30.0, 20.0]);
        let pairs = couple_synchronous(&mu, &nu, CouplingMode::Monotone).unwrap();
        // ranks: 1<->10, 2<->20, 3<->30
        let mapped: Vec<(f64, f64)> = pairs
            .iter()
            .map(|&(i, j)| (mu.point(i)[0], nu.point(j)[0]))
            .collect();
        assert_eq!(mapped, vec![(1.0, 10.0), (2.0, 20.0), (3.0, 30.0)]);
    }

    #[test]
    fn couple_unequal_sizes_errors() {
        let mu = m1(&[1.0, 2.0]);
        let nu = m1(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            couple_synchronous(&mu, &nu, CouplingMode::Identity),
            Err(Error::UnequalSupportSize(2, 3))
        ));
    }

    #[test]
    fn columnar_roundtrip() {
        let mu = EmpiricalMeasure::new(
            2,
            vec![vec![0.25, -1.5], vec![3.125, 0.0]],
            vec![0.75, 0.25],
        )
        .unwrap();
        let mut buf = Vec::new();
        mu.write_columnar(&mut buf).unwrap();
        let back = EmpiricalMeasure::read_columnar(&buf[..]).unwrap();
        assert_eq!(mu, back);
    }
}
