//! Small dense matrices and tridiagonal solves used by the solvers.
//!
//! State dimensions stay at d <= 3, so everything here is plain row-major
//! storage with partial-pivot Gaussian elimination. No external linear
//! algebra is pulled in for 6x6 blocks.

/// Row-major square matrix of runtime dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SqMat {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SqMat {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            assert_eq!(r.len(), dim);
            data.extend_from_slice(r);
        }
        Self { dim, data }
    }

    /// Diagonal matrix from a slice.
    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, v) in d.iter().enumerate() {
            m.data[i * d.len() + i] = *v;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// y = M v.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d];
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += self.data[i * d + j] * v[j];
            }
            out[i] = s;
        }
        out
    }

    pub fn matmul(&self, other: &SqMat) -> SqMat {
        let d = self.dim;
        let mut out = SqMat::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.data[i * d + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> SqMat {
        let d = self.dim;
        let mut out = SqMat::zeros(d);
        for i in 0..d {
            for j in 0..d {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> SqMat {
        SqMat {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &SqMat) -> SqMat {
        SqMat {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Largest absolute deviation from symmetry.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Operator norm estimated through the Frobenius norm (an upper bound).
    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Solves A x = b in place by Gaussian elimination with partial pivoting.
/// Returns None when the pivot collapses.
pub fn solve_dense(a: &SqMat, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.dim;
    let mut m = a.data.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        let mut best = m[col * n + col].abs();
        for r in (col + 1)..n {
            let v = m[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < 1e-300 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                m.swap(col * n + j, piv * n + j);
            }
            x.swap(col, piv);
        }
        let p = m[col * n + col];
        for r in (col + 1)..n {
            let f = m[r * n + col] / p;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[r * n + j] -= f * m[col * n + j];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for j in (col + 1)..n {
            s -= m[col * n + j] * x[j];
        }
        x[col] = s / m[col * n + col];
    }
    Some(x)
}

/// Solves A X = B column-wise for a small matrix right-hand side.
pub fn solve_dense_mat(a: &SqMat, b: &SqMat) -> Option<SqMat> {
    let n = a.dim;
    let mut out = SqMat::zeros(n);
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| b.get(i, j)).collect();
        let x = solve_dense(a, &col)?;
        for i in 0..n {
            out.set(i, j, x[i]);
        }
    }
    Some(out)
}

/// Spectral norm by power iteration on M^T M. Exact for 1x1, otherwise
/// accurate enough for bound audits.
pub fn spectral_norm(m: &SqMat) -> f64 {
    let d = m.dim;
    if d == 1 {
        return m.data[0].abs();
    }
    let mt = m.transpose();
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.01 * i as f64).collect();
    let n0 = norm(&v);
    for vi in v.iter_mut() {
        *vi /= n0;
    }
    let mut lam = 0.0;
    for _ in 0..200 {
        let w = mt.matvec(&m.matvec(&v));
        let n = norm(&w);
        if n < 1e-300 {
            return 0.0;
        }
        v = w.iter().map(|x| x / n).collect();
        lam = n;
    }
    lam.sqrt()
}

/// Scalar tridiagonal Thomas solve: sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i].
pub fn solve_tridiag(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Block-tridiagonal system with square blocks, solved by block elimination.
///
/// Row k reads: A[k] u[k-1] + B[k] u[k] + C[k] u[k+1] = r[k], with A[0] and
/// C[last] ignored.
pub struct BlockTridiag {
    pub block: usize,
    pub lower: Vec<SqMat>,
    pub diag: Vec<SqMat>,
    pub upper: Vec<SqMat>,
}

impl BlockTridiag {
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let nb = self.diag.len();
        let d = self.block;
        assert_eq!(rhs.len(), nb * d);
        // Forward elimination producing modified upper blocks and rhs.
        let mut u_star: Vec<SqMat> = Vec::with_capacity(nb);
        let mut r_star: Vec<Vec<f64>> = Vec::with_capacity(nb);
        u_star.push(solve_dense_mat(&self.diag[0], &self.upper[0])?);
        r_star.push(solve_dense(&self.diag[0], &rhs[0..d])?);
        for k in 1..nb {
            // denom = B[k] - A[k] * U*[k-1]
            let au = self.lower[k].matmul(&u_star[k - 1]);
            let denom = self.diag[k].add(&au.scale(-1.0));
            let next_upper = if k + 1 < nb {
                solve_dense_mat(&denom, &self.upper[k])?
            } else {
                SqMat::zeros(d)
            };
            let ar = self.lower[k].matvec(&r_star[k - 1]);
            let mut r = rhs[k * d..(k + 1) * d].to_vec();
            for i in 0..d {
                r[i] -= ar[i];
            }
            let next_r = solve_dense(&denom, &r)?;
            u_star.push(next_upper);
            r_star.push(next_r);
        }
        // Back substitution.
        let mut x = vec![0.0; nb * d];
        x[(nb - 1) * d..].copy_from_slice(&r_star[nb - 1]);
        for k in (0..nb - 1).rev() {
            let xu = u_star[k].matvec(&x[(k + 1) * d..(k + 2) * d]);
            for i in 0..d {
                x[k * d + i] = r_star[k][i] - xu[i];
            }
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_solve_roundtrip() {
        let a = SqMat::from_rows(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let x = solve_dense(&a, &[5.0, 10.0]).unwrap();
        assert!((a.matvec(&x)[0] - 5.0).abs() < 1e-12);
        assert!((a.matvec(&x)[1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn tridiag_matches_dense() {
        let sub = [0.0, -1.0, -1.0, -1.0];
        let diag = [2.5, 2.5, 2.5, 2.5];
        let sup = [-1.0, -1.0, -1.0, 0.0];
        let rhs = [1.0, 0.5, -0.25, 2.0];
        let x = solve_tridiag(&sub, &diag, &sup, &rhs);
        for i in 0..4 {
            let mut lhs = diag[i] * x[i];
            if i > 0 {
                lhs += sub[i] * x[i - 1];
            }
            if i < 3 {
                lhs += sup[i] * x[i + 1];
            }
            assert!((lhs - rhs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn block_tridiag_matches_scalar_case() {
        // Block size 1 must reproduce the scalar Thomas result.
        let sub = [0.0, -1.0, -0.5];
        let diag = [3.0, 2.0, 4.0];
        let sup = [-1.0, -0.5, 0.0];
        let rhs = [1.0, -2.0, 0.5];
        let scalar = solve_tridiag(&sub, &diag, &sup, &rhs);
        let bt = BlockTridiag {
            block: 1,
            lower: sub.iter().map(|v| SqMat::from_rows(&[&[*v]])).collect(),
            diag: diag.iter().map(|v| SqMat::from_rows(&[&[*v]])).collect(),
            upper: sup.iter().map(|v| SqMat::from_rows(&[&[*v]])).collect(),
        };
        let x = bt.solve(&rhs).unwrap();
        for i in 0..3 {
            assert!((x[i] - scalar[i]).abs() < 1e-12);
        }
    }
}
