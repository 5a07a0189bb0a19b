//! Reusable solvers for the reduced (SPD) stiffness.
//!
//! The default is an envelope (skyline) Cholesky factorization: the
//! lexicographic numbering of structured meshes keeps the profile narrow, and
//! the factor is reused for every right-hand side of a coupling run.

use super::{CsrMatrix, FemError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolverKind {
    Direct,
    /// Jacobi-preconditioned conjugate gradients to a relative tolerance.
    ConjugateGradient { tol: f64 },
}

impl SolverKind {
    pub fn cg() -> Self {
        SolverKind::ConjugateGradient { tol: 1e-12 }
    }
}

#[derive(Clone, Debug)]
pub enum Factorization {
    Skyline(SkylineCholesky),
    Cg(JacobiCg),
}

pub fn factorize(matrix: &CsrMatrix, kind: SolverKind) -> Result<Factorization, FemError> {
    match kind {
        SolverKind::Direct => SkylineCholesky::new(matrix).map(Factorization::Skyline),
        SolverKind::ConjugateGradient { tol } => Ok(Factorization::Cg(JacobiCg::new(matrix, tol)?)),
    }
}

impl Factorization {
    pub fn dim(&self) -> usize {
        match self {
            Factorization::Skyline(f) => f.n,
            Factorization::Cg(f) => f.matrix.nrows(),
        }
    }

    pub fn resolve(&self, rhs: &[f64]) -> Result<Vec<f64>, FemError> {
        if rhs.len() != self.dim() {
            return Err(FemError::Dimension {
                expected: self.dim(),
                got: rhs.len(),
            });
        }
        match self {
            Factorization::Skyline(f) => Ok(f.solve(rhs)),
            Factorization::Cg(f) => f.solve(rhs),
        }
    }
}

/// Lower Cholesky factor stored row by row from the first nonzero column.
#[derive(Clone, Debug)]
pub struct SkylineCholesky {
    n: usize,
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    pub fn new(a: &CsrMatrix) -> Result<Self, FemError> {
        let n = a.nrows();
        let first: Vec<usize> = (0..n)
            .map(|i| a.row(i).map(|(j, _)| j).filter(|&j| j <= i).min().unwrap_or(i))
            .collect();
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + i - first[i] + 1);
        }
        let mut data = vec![0.0; offset[n]];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    data[offset[i] + j - first[i]] = v;
                }
            }
        }
        let mut f = SkylineCholesky {
            n,
            first,
            offset,
            data,
        };
        f.factor()?;
        Ok(f)
    }

    fn factor(&mut self) -> Result<(), FemError> {
        for i in 0..self.n {
            let fi = self.first[i];
            let oi = self.offset[i];
            for j in fi..=i {
                let fj = self.first[j];
                let oj = self.offset[j];
                let k0 = fi.max(fj);
                let mut s = self.data[oi + j - fi];
                for k in k0..j {
                    s -= self.data[oi + k - fi] * self.data[oj + k - fj];
                }
                if j < i {
                    s /= self.data[oj + j - fj];
                    self.data[oi + j - fi] = s;
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(FemError::NotPositiveDefinite { pivot: i, value: s });
                    }
                    self.data[oi + j - fi] = s.sqrt();
                }
            }
        }
        Ok(())
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        for i in 0..self.n {
            let fi = self.first[i];
            let oi = self.offset[i];
            let mut s = y[i];
            for k in fi..i {
                s -= self.data[oi + k - fi] * y[k];
            }
            y[i] = s / self.data[oi + i - fi];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let oi = self.offset[i];
            y[i] /= self.data[oi + i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.data[oi + k - fi] * yi;
            }
        }
        y
    }

    /// Stored entries of the factor (profile size).
    pub fn profile_len(&self) -> usize {
        self.data.len()
    }
}

#[derive(Clone, Debug)]
pub struct JacobiCg {
    matrix: CsrMatrix,
    inv_diag: Vec<f64>,
    tol: f64,
}

impl JacobiCg {
    fn new(matrix: &CsrMatrix, tol: f64) -> Result<Self, FemError> {
        let diag = matrix.diagonal();
        if let Some((pivot, &value)) = diag.iter().enumerate().find(|(_, &d)| !(d > 0.0)) {
            return Err(FemError::NotPositiveDefinite { pivot, value });
        }
        Ok(JacobiCg {
            matrix: matrix.clone(),
            inv_diag: diag.iter().map(|d| 1.0 / d).collect(),
            tol,
        })
    }

    fn solve(&self, b: &[f64]) -> Result<Vec<f64>, FemError> {
        let n = b.len();
        let bnorm = norm(b);
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&self.inv_diag).map(|(r, d)| r * d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let max_iter = 10 * n.max(10);
        for _ in 0..max_iter {
            let ap = self.matrix.matvec(&p);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(FemError::NotPositiveDefinite { pivot: 0, value: pap });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm(&r) <= self.tol * bnorm {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] * self.inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(FemError::NoConvergence {
            iterations: max_iter,
            residual: norm(&r) / bnorm,
        })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
