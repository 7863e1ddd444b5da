//! Compressed sparse row matrices and Jacobi-preconditioned Krylov solvers.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinearSolverError {
    #[error("no convergence after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("breakdown at iteration {iteration}: {reason}")]
    Breakdown { iteration: usize, reason: &'static str },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets; duplicates are summed in input order.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_into(x, &mut y);
        y
    }

    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().with_min_len(256).for_each(|(r, yr)| {
            *yr = self.row(r).map(|(c, v)| v * x[c]).sum();
        });
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.get(r, r)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A_ij − A_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut d = 0.0f64;
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                d = d.max((v - self.get(c, r)).abs());
            }
        }
        d
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.symmetry_defect() <= rel_tol * self.max_abs()
    }

    /// MatrixMarket coordinate format.
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.n_rows, self.n_cols, self.nnz());
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                let _ = writeln!(s, "{} {} {:e}", r + 1, c + 1, v);
            }
        }
        s
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn jacobi(a: &CsrMatrix) -> Vec<f64> {
    a.diagonal()
        .into_iter()
        .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect()
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive-definite
/// systems. Stops when `‖b − Ax‖ ≤ rel_tol ‖b‖`.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    rel_tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, SolveStats), LinearSolverError> {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, SolveStats { iterations: 0, relative_residual: 0.0 }));
    }
    let m = jacobi(a);
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&m).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iters {
        a.mul_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(LinearSolverError::Breakdown {
                iteration: it,
                reason: "non-positive curvature (matrix not positive definite)",
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = norm2(&r) / bnorm;
        if res <= rel_tol {
            return Ok((x, SolveStats { iterations: it, relative_residual: res }));
        }
        for i in 0..n {
            z[i] = r[i] * m[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(LinearSolverError::NotConverged {
        iterations: max_iters,
        residual: norm2(&r) / bnorm,
    })
}

/// Jacobi-preconditioned BiCGSTAB for general square systems.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    rel_tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, SolveStats), LinearSolverError> {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, SolveStats { iterations: 0, relative_residual: 0.0 }));
    }
    let m = jacobi(a);
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut zz = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iters {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            return Err(LinearSolverError::Breakdown { iteration: it, reason: "rho vanished" });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = m[i] * p[i];
        }
        a.mul_into(&y, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            return Err(LinearSolverError::Breakdown { iteration: it, reason: "r_hat . v vanished" });
        }
        alpha = rho / rv;
        let mut s = r.clone();
        for i in 0..n {
            s[i] -= alpha * v[i];
        }
        if norm2(&s) / bnorm <= rel_tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            let res = norm2(&s) / bnorm;
            return Ok((x, SolveStats { iterations: it, relative_residual: res }));
        }
        for i in 0..n {
            zz[i] = m[i] * s[i];
        }
        a.mul_into(&zz, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(LinearSolverError::Breakdown { iteration: it, reason: "t vanished" });
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zz[i];
            r[i] = s[i] - omega * t[i];
        }
        let res = norm2(&r) / bnorm;
        if res <= rel_tol {
            return Ok((x, SolveStats { iterations: it, relative_residual: res }));
        }
        if omega == 0.0 {
            return Err(LinearSolverError::Breakdown { iteration: it, reason: "omega vanished" });
        }
    }
    Err(LinearSolverError::NotConverged {
        iterations: max_iters,
        residual: norm2(&r) / bnorm,
    })
}

/// Extreme eigenvalue estimates of an SPD matrix: power iteration on `A` and
/// on `A⁻¹` (inner solves by CG).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumEstimate {
    pub lambda_max: f64,
    pub lambda_min: f64,
}

impl SpectrumEstimate {
    pub fn condition(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }
}

fn start_vector(n: usize) -> Vec<f64> {
    // deterministic, not aligned with any mesh pattern
    let mut s = 0x9e37_79b9_7f4a_7c15u64;
    let v: Vec<f64> = (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            0.5 + (s >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect();
    let nv = norm2(&v);
    v.into_iter().map(|x| x / nv).collect()
}

pub fn estimate_spectrum(a: &CsrMatrix, max_iters: usize, rel_tol: f64) -> Result<SpectrumEstimate, LinearSolverError> {
    let n = a.n_rows;
    let mut x = start_vector(n);
    let mut lambda_max = 0.0;
    for _ in 0..max_iters {
        let y = a.mul(&x);
        let l = dot(&x, &y);
        let ny = norm2(&y);
        x = y.into_iter().map(|v| v / ny).collect();
        if (l - lambda_max).abs() <= rel_tol * l.abs() {
            lambda_max = l;
            break;
        }
        lambda_max = l;
    }
    let mut x = start_vector(n);
    let mut mu = 0.0;
    for _ in 0..max_iters {
        let (y, _) = pcg(a, &x, 1e-13, 20 * n.max(10))?;
        let l = dot(&x, &y);
        let ny = norm2(&y);
        x = y.into_iter().map(|v| v / ny).collect();
        if (l - mu).abs() <= rel_tol * l.abs() {
            mu = l;
            break;
        }
        mu = l;
    }
    Ok(SpectrumEstimate { lambda_max, lambda_min: 1.0 / mu })
}
